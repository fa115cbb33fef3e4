"""Layout-parameterized particle state with a local and a ghost region.

Indices [0, n_local) are particles owned by this rank; [n_local, n_local +
n_ghost) are read-only copies of remote (or periodic-image) particles. The
ghost region always stays contiguous after the locals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AABB, ConfigError, SimConfig, Vec3
from .layout import ArrayHandle, LayoutDescriptor, row_major_layout

__all__ = ["ParticleStore", "ParticleAccessor", "create_lattice", "lattice_positions"]

# Basis offsets (in unit-cell fractions) for the supported particles-per-cell
# counts: simple cubic, body-centered, face-centered.
_BASES = {
    1: [(0.0, 0.0, 0.0)],
    2: [(0.0, 0.0, 0.0), (0.5, 0.5, 0.5)],
    4: [(0.0, 0.0, 0.0), (0.5, 0.5, 0.0), (0.5, 0.0, 0.5), (0.0, 0.5, 0.5)],
}

_GROWTH = 1.5


class ParticleStore:
    """Positions, velocities, and forces stored through one layout."""

    def __init__(self, layout: LayoutDescriptor, capacity: int):
        self.layout = layout
        self.n_local = 0
        self.n_ghost = 0
        self.positions = ArrayHandle(layout, capacity, 3)
        self.velocities = ArrayHandle(layout, capacity, 3)
        self.forces = ArrayHandle(layout, capacity, 3)
        # per-ghost bookkeeping: sending peer and ordinal within its send list
        self.ghost_peer = np.empty(0, dtype=np.int32)
        self.ghost_ordinal = np.empty(0, dtype=np.int32)

    @property
    def capacity(self) -> int:
        return self.positions.size_x

    @property
    def n_total(self) -> int:
        return self.n_local + self.n_ghost

    def ensure_capacity(self, needed: int) -> None:
        if needed <= self.capacity:
            return
        new_cap = max(needed, int(self.capacity * _GROWTH) + 8)
        self.positions = self.positions.grown(new_cap)
        self.velocities = self.velocities.grown(new_cap)
        self.forces = self.forces.grown(new_cap)

    # -- bulk views ---------------------------------------------------------

    def local_positions(self) -> np.ndarray:
        return self.positions.read_rows(0, self.n_local)

    def all_positions(self) -> np.ndarray:
        return self.positions.read_rows(0, self.n_total)

    def local_velocities(self) -> np.ndarray:
        return self.velocities.read_rows(0, self.n_local)

    def all_velocities(self) -> np.ndarray:
        return self.velocities.read_rows(0, self.n_total)

    def local_forces(self) -> np.ndarray:
        return self.forces.read_rows(0, self.n_local)

    def local_state(self) -> np.ndarray:
        """(n_local, 6) array of position columns then velocity columns."""
        return np.hstack([self.local_positions(), self.local_velocities()])

    # -- local-region editing ----------------------------------------------

    def append_locals(self, pos: np.ndarray, vel: np.ndarray) -> None:
        pos = np.atleast_2d(pos)
        vel = np.atleast_2d(vel)
        k = pos.shape[0]
        if k == 0:
            return
        self.ensure_capacity(self.n_total + k)
        if self.n_ghost > 0:
            # slide the ghost block right so ghosts stay contiguous after locals
            for h in (self.positions, self.velocities, self.forces):
                block = h.read_rows(self.n_local, self.n_ghost)
                h.write_rows(self.n_local + k, block)
        self.positions.write_rows(self.n_local, pos)
        self.velocities.write_rows(self.n_local, vel)
        self.forces.fill_rows(self.n_local, k, 0.0)
        self.n_local += k

    def remove_locals(self, indices) -> None:
        """Swap-remove the given local indices (order of survivors not preserved)."""
        for i in sorted(np.asarray(indices, dtype=np.int64), reverse=True):
            last = self.n_local - 1
            if i < 0 or i > last:
                raise IndexError(f"local index {i} out of range")
            if i != last:
                for h in (self.positions, self.velocities, self.forces):
                    h.write_rows(i, h.read_rows(last, 1))
            if self.n_ghost > 0:
                # pull the final ghost into the freed slot to stay contiguous
                for h in (self.positions, self.velocities, self.forces):
                    h.write_rows(last, h.read_rows(last + self.n_ghost, 1))
                self.ghost_peer = np.roll(self.ghost_peer, 1)
                self.ghost_ordinal = np.roll(self.ghost_ordinal, 1)
            self.n_local = last

    def compact_locals(self, keep: np.ndarray) -> None:
        """Drop locals where `keep` is False, preserving the survivors' order.

        Requires an empty ghost region (exchange clears ghosts first).
        """
        if self.n_ghost != 0:
            raise RuntimeError("compact_locals requires an empty ghost region")
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.n_local,):
            raise ValueError("keep mask must cover exactly the local region")
        k = int(keep.sum())
        if k == self.n_local:
            return
        for h in (self.positions, self.velocities, self.forces):
            h.write_rows(0, h.read_rows(0, self.n_local)[keep])
        self.n_local = k

    # -- ghost-region editing ------------------------------------------------

    def clear_ghosts(self) -> None:
        self.n_ghost = 0
        self.ghost_peer = np.empty(0, dtype=np.int32)
        self.ghost_ordinal = np.empty(0, dtype=np.int32)

    def append_ghosts(self, pos: np.ndarray, peer: int) -> int:
        """Append ghost copies; returns the starting ghost slot (absolute index)."""
        pos = np.atleast_2d(pos)
        k = pos.shape[0]
        start = self.n_total
        self.ensure_capacity(start + k)
        self.positions.write_rows(start, pos)
        self.velocities.fill_rows(start, k, 0.0)
        self.forces.fill_rows(start, k, 0.0)
        self.ghost_peer = np.concatenate([self.ghost_peer, np.full(k, peer, dtype=np.int32)])
        self.ghost_ordinal = np.concatenate(
            [self.ghost_ordinal, np.arange(k, dtype=np.int32)]
        )
        self.n_ghost += k
        return start

    def set_ghost_positions(self, start: int, pos: np.ndarray) -> None:
        self.positions.write_rows(start, pos)


@dataclass
class ParticleAccessor:
    """Scalar per-particle accessors bound to one store (Vec3 in, Vec3 out)."""

    store: ParticleStore

    def get_position(self, i: int) -> Vec3:
        return Vec3.from_array(self.store.positions.get_vec3(i))

    def set_position(self, i: int, v: Vec3) -> None:
        self.store.positions.set_vec3(i, v.as_array())

    def get_velocity(self, i: int) -> Vec3:
        return Vec3.from_array(self.store.velocities.get_vec3(i))

    def set_velocity(self, i: int, v: Vec3) -> None:
        self.store.velocities.set_vec3(i, v.as_array())

    def get_force(self, i: int) -> Vec3:
        return Vec3.from_array(self.store.forces.get_vec3(i))

    def add_force(self, i: int, v: Vec3) -> None:
        self.store.forces.add_vec3(i, v.as_array())


def lattice_positions(cfg: SimConfig, domain: AABB) -> np.ndarray:
    """Deterministic lattice sites for the configured unit cells and basis.

    Site order is fixed (x-major cells, basis sites innermost) so every rank
    can regenerate the identical global arrangement.
    """
    basis = _BASES.get(cfg.particles_per_cell)
    if basis is None:
        raise ConfigError(
            f"particles_per_cell must be one of {sorted(_BASES)}, got {cfg.particles_per_cell}"
        )
    a = cfg.lattice_constant()
    nx, ny, nz = cfg.unit_cells
    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    cells = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1).astype(np.float64)
    offsets = np.asarray(basis, dtype=np.float64)
    pos = (cells[:, None, :] + offsets[None, :, :]).reshape(-1, 3) * a
    pos += domain.lo
    if cfg.fill == "half-diagonal":
        ext = domain.extent()
        frac = (pos - domain.lo) / ext
        pos = pos[frac[:, 0] + frac[:, 1] < 1.0]
    return pos


def create_lattice(cfg: SimConfig, domain: AABB, layout: LayoutDescriptor | None = None) -> ParticleStore:
    """Build a store holding the full lattice with seeded initial velocities.

    Velocities are uniform in [-0.5, 0.5) scaled by cfg.velocity_scale, then
    shifted so the net momentum is zero. Forces start zeroed.
    """
    if layout is None:
        layout = row_major_layout()
    pos = lattice_positions(cfg, domain)
    n = pos.shape[0]
    rng = np.random.default_rng(cfg.rng_seed)
    vel = (rng.random((n, 3)) - 0.5) * cfg.velocity_scale
    if n > 0 and cfg.velocity_scale > 0:
        vel -= vel.mean(axis=0)
    store = ParticleStore(layout, capacity=max(n, 1))
    store.append_locals(pos, vel)
    return store
