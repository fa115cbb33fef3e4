"""Runtime error types shared across the simulation modules."""


class ProtocolError(RuntimeError):
    """A distributed-protocol invariant broke (lost particle, stale plan, ...)."""


class SingularityError(ArithmeticError):
    """Two interacting particles coincide; the pair force is undefined."""


class GuardViolation(RuntimeError):
    """Particles drifted farther than the Verlet buffer allows between rebuilds."""
