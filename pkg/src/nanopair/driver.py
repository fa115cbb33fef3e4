"""Velocity-Verlet time integration and per-step orchestration.

A rank's whole run is a generator (see `rank_program`): communication phases
yield at their internal barriers, and the driver yields a ("step", k) marker
after completing step k, which doubles as the global barrier the harness uses
for trajectory dumps. Step order is half-kick + drift, communicate (full
epoch every reneigh_interval steps, ghost refresh otherwise), rebuild
neighbor structures on epochs, forces, then the closing half-kick.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .backend import Backend, default_backend
from .comm import RankWorld, define_borders, exchange, synchronize
from .core import SimConfig
from .errors import GuardViolation
from .neighbor import build_cell_grid, build_neighbor_lists, max_displacement_since_rebuild
from .particles import ParticleStore
from .potential import compute_forces, law_from_config

__all__ = ["PhaseTimers", "SimState", "RankReport", "initial_integrate", "final_integrate", "rank_program"]


@dataclass
class PhaseTimers:
    force: float = 0.0
    neigh: float = 0.0
    comm: float = 0.0
    other: float = 0.0

    @contextmanager
    def track(self, phase: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            setattr(self, phase, getattr(self, phase) + time.perf_counter() - t0)

    def total(self) -> float:
        return self.force + self.neigh + self.comm + self.other


@dataclass
class SimState:
    """Everything one rank mutates while stepping."""

    step: int
    store: ParticleStore
    grid: object = None
    lists: object = None
    plan: object = None
    timers: PhaseTimers = field(default_factory=PhaseTimers)
    steps_since_rebuild: int = 0
    max_displacement_seen: float = 0.0


@dataclass
class RankReport:
    rank: int
    n_local: int
    momentum_initial: np.ndarray
    momentum_final: np.ndarray
    timers: PhaseTimers
    max_displacement_seen: float
    steps: int


def initial_integrate(store: ParticleStore, dt: float, mass: float) -> None:
    """Half-kick then drift: v += dt/2 F/m, x += dt v (locals only)."""
    n = store.n_local
    if n == 0 or dt == 0.0:
        return
    v = store.velocities.read_rows(0, n)
    v += (0.5 * dt / mass) * store.forces.read_rows(0, n)
    store.velocities.write_rows(0, v)
    x = store.positions.read_rows(0, n)
    store.positions.write_rows(0, x + dt * v)


def final_integrate(store: ParticleStore, dt: float, mass: float) -> None:
    """Closing half-kick against the freshly computed forces."""
    n = store.n_local
    if n == 0 or dt == 0.0:
        return
    v = store.velocities.read_rows(0, n)
    v += (0.5 * dt / mass) * store.forces.read_rows(0, n)
    store.velocities.write_rows(0, v)


def _momentum(store: ParticleStore, mass: float) -> np.ndarray:
    if store.n_local == 0:
        return np.zeros(3)
    return mass * store.local_velocities().sum(axis=0)


def _reneighbor(state: SimState, world: RankWorld, cfg: SimConfig):
    """Full epoch: exchange, borders, re-bin, rebuild lists."""
    with state.timers.track("comm"):
        yield from exchange(world, state.store)
        state.plan = yield from define_borders(world, state.store)
    with state.timers.track("neigh"):
        r = cfg.interaction_radius()
        grid_box = world.domain.grid_box_for(state.store)
        state.grid = build_cell_grid(state.store, grid_box, r)
        state.lists = build_neighbor_lists(state.store, state.grid, r, cfg.half_neighbor)
    state.steps_since_rebuild = 0


def _check_guard(state: SimState, cfg: SimConfig) -> None:
    if state.steps_since_rebuild == 0:
        return
    disp = max_displacement_since_rebuild(state.store, state.lists)
    state.max_displacement_seen = max(state.max_displacement_seen, disp)
    if disp >= 0.5 * cfg.verlet_buffer:
        raise GuardViolation(
            f"particles moved {disp:.4g} since the last rebuild, which exceeds half "
            f"the Verlet buffer ({cfg.verlet_buffer}); increase the buffer or lower "
            f"reneigh_interval ({cfg.reneigh_interval})"
        )


def rank_program(
    cfg: SimConfig,
    world: RankWorld,
    store: ParticleStore,
    backend: Backend | None = None,
):
    """One rank's full simulation; yields barrier tokens, returns a RankReport.

    The harness must advance all ranks' programs in lockstep: plain `None`
    yields are communication barriers, ("step", k) marks the end of step k
    (k = 0 right after setup) where trajectory dumps are safe.
    """
    if backend is None:
        backend = default_backend()
    law = law_from_config(cfg)
    state = SimState(step=0, store=store)
    p0 = _momentum(store, cfg.mass)

    yield from _reneighbor(state, world, cfg)
    with state.timers.track("force"):
        compute_forces(store, state.lists, law, backend=backend)
    yield ("step", 0)

    for step in range(1, cfg.steps + 1):
        state.step = step
        with state.timers.track("other"):
            initial_integrate(store, cfg.dt, cfg.mass)
        if step % cfg.reneigh_interval == 0:
            yield from _reneighbor(state, world, cfg)
        else:
            with state.timers.track("comm"):
                yield from synchronize(world, store, state.plan)
            state.steps_since_rebuild += 1
        with state.timers.track("other"):
            _check_guard(state, cfg)
        with state.timers.track("force"):
            compute_forces(store, state.lists, law, backend=backend)
        with state.timers.track("other"):
            final_integrate(store, cfg.dt, cfg.mass)
        yield ("step", step)

    return RankReport(
        rank=world.rank,
        n_local=store.n_local,
        momentum_initial=p0,
        momentum_final=_momentum(store, cfg.mass),
        timers=state.timers,
        max_displacement_seen=state.max_displacement_seen,
        steps=cfg.steps,
    )
