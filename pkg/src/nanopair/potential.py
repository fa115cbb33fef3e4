"""Pair force laws and the particle-neighbor force kernel.

Both laws are pure functions of the separation vector (and, for the contact
model, the two velocities). They are antisymmetric under exchanging the pair,
which is what lets half neighbor lists update both partners from one entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend import Backend, SerialBackend
from .core import Vec3
from .errors import SingularityError
from .neighbor import NeighborLists
from .particles import ParticleStore

__all__ = [
    "LennardJones",
    "SpringDashpot",
    "lj_force",
    "spring_dashpot_force",
    "compute_forces",
    "law_from_config",
]


@dataclass(frozen=True)
class LennardJones:
    """Truncated 12-6 potential; force kernel uses the factored form
    48 * eps * sr6 * (sr6 - 0.5) * sr2 with sr2 = 1/rsq, sr6 = sigma^6 / rsq^3.
    """

    epsilon: float = 1.0
    sigma: float = 1.0
    cutoff: float = 2.5

    needs_velocities = False

    @property
    def cutoff_rsq(self) -> float:
        return self.cutoff * self.cutoff

    def pair_force(self, delta: np.ndarray, rsq: np.ndarray, v_i=None, v_j=None) -> np.ndarray:
        rsq = np.asarray(rsq, dtype=np.float64)
        sigma6 = self.sigma**6
        sr2 = 1.0 / rsq
        sr6 = sr2 * sr2 * sr2 * sigma6
        f = 48.0 * sr6 * (sr6 - 0.5) * sr2 * self.epsilon
        return f[..., None] * np.asarray(delta)

    def pair_energy(self, rsq: np.ndarray) -> np.ndarray:
        sigma6 = self.sigma**6
        sr6 = sigma6 / (rsq * rsq * rsq)
        return 4.0 * self.epsilon * (sr6 * sr6 - sr6)


@dataclass(frozen=True)
class SpringDashpot:
    """Linear contact model for spheres of equal diameter.

    The normal spring pushes overlapping spheres apart; the dashpot damps the
    relative normal velocity. Both terms vanish for non-overlapping spheres.
    Ghost copies carry zero velocity, so the dashpot term is only meaningful
    for local pairs (the balancing experiments run with damping zero).
    """

    stiffness: float = 100.0
    damping: float = 0.0
    diameter: float = 1.0

    needs_velocities = True

    @property
    def cutoff_rsq(self) -> float:
        return self.diameter * self.diameter

    def pair_force(self, delta: np.ndarray, rsq: np.ndarray, v_i=None, v_j=None) -> np.ndarray:
        delta = np.asarray(delta)
        dist = np.sqrt(np.asarray(rsq, dtype=np.float64))
        overlap = self.diameter - dist
        contact = overlap > 0.0
        unit = delta / dist[..., None]
        elast = self.stiffness * overlap[..., None] * unit
        if v_i is None or v_j is None:
            damp = 0.0
        else:
            vrel = v_i - v_j
            vn = np.einsum("...k,...k->...", unit, vrel)
            damp = -self.damping * vn[..., None] * unit
        return np.where(contact[..., None], elast + damp, 0.0)

    def pair_energy(self, rsq: np.ndarray) -> np.ndarray:
        overlap = np.maximum(self.diameter - np.sqrt(rsq), 0.0)
        return 0.5 * self.stiffness * overlap * overlap


def law_from_config(cfg):
    if cfg.potential_kind == "lj":
        return LennardJones(cfg.epsilon, cfg.sigma, cfg.cutoff)
    if cfg.potential_kind == "sd":
        return SpringDashpot(cfg.stiffness, cfg.damping, cfg.diameter)
    raise ValueError(f"unknown potential {cfg.potential_kind!r}")


def lj_force(delta: Vec3, rsq: float, epsilon: float, sigma: float) -> Vec3:
    """Force on particle i from one Lennard-Jones partner at separation delta."""
    if rsq == 0.0:
        raise SingularityError("coincident particles in Lennard-Jones force")
    law = LennardJones(epsilon, sigma)
    return Vec3.from_array(law.pair_force(delta.as_array(), np.float64(rsq)))


def spring_dashpot_force(
    delta: Vec3,
    rsq: float,
    v_i: Vec3,
    v_j: Vec3,
    stiffness: float,
    damping: float,
    diameter: float,
) -> Vec3:
    """Contact force on sphere i; zero unless the spheres overlap."""
    if rsq == 0.0:
        raise SingularityError("coincident particles in spring-dashpot force")
    law = SpringDashpot(stiffness, damping, diameter)
    return Vec3.from_array(
        law.pair_force(delta.as_array(), np.float64(rsq), v_i.as_array(), v_j.as_array())
    )


def compute_forces(
    store: ParticleStore,
    lists: NeighborLists,
    law,
    half: bool | None = None,
    backend: Backend | None = None,
    accumulate_energy: bool = False,
):
    """Evaluate pair forces into store.forces for every local particle.

    In half mode each stored pair also applies the equal-and-opposite force to
    the partner. Accumulation order is fixed (particle-major, list order, then
    partner scatter per chunk) so serial runs are reproducible bit for bit.
    With accumulate_energy the total pair potential energy is returned;
    otherwise returns None.
    """
    if half is None:
        half = lists.half
    if half and not lists.half:
        raise ValueError("half-mode accumulation needs half-built lists")
    if backend is None:
        backend = SerialBackend()
    n_local = store.n_local
    pos = store.all_positions()
    vel = store.all_velocities() if law.needs_velocities else None
    mat = lists.as_matrix()
    counts = lists.counts
    cap = mat.shape[1] if mat.size else 0
    cutoff_rsq = law.cutoff_rsq
    forces = np.zeros((n_local, 3))
    energies = []
    slot = np.arange(cap, dtype=np.int32)[None, :]

    def do_chunk(start: int, stop: int):
        rows = mat[start:stop]
        valid = slot < counts[start:stop, None]
        j = np.where(valid, rows, 0)
        delta = pos[start:stop, None, :] - pos[j]
        rsq = np.einsum("ijk,ijk->ij", delta, delta)
        within = valid & (rsq < cutoff_rsq)
        if np.any(within & (rsq == 0.0)):
            bi, bs = np.nonzero(within & (rsq == 0.0))
            raise SingularityError(
                f"coincident pair: local {start + bi[0]} and neighbor {rows[bi[0], bs[0]]}"
            )
        rsq_safe = np.where(within, rsq, 1.0)
        if law.needs_velocities:
            f = law.pair_force(delta, rsq_safe, vel[start:stop, None, :], vel[j])
        else:
            f = law.pair_force(delta, rsq_safe)
        f = np.where(within[..., None], f, 0.0)
        own = f.sum(axis=1)
        reaction = None
        if half:
            jj = j[within]
            ff = f[within]
            back = jj < n_local
            reaction = (jj[back], ff[back])
        energy = None
        if accumulate_energy:
            pair_e = np.where(within, law.pair_energy(rsq_safe), 0.0).sum()
            energy = pair_e if half else 0.5 * pair_e
        return start, own, reaction, energy

    bounds = list(range(0, n_local, backend.chunk_size)) or [0]
    results = backend.run([(s, min(s + backend.chunk_size, n_local)) for s in bounds], do_chunk)
    for start, own, reaction, energy in results:
        forces[start : start + own.shape[0]] = own
        if energy is not None:
            energies.append(energy)
    # partner scatter applied after the owned sums, in chunk order
    for _, _, reaction, _ in results:
        if reaction is not None:
            jj, ff = reaction
            for c in range(3):
                forces[:, c] -= np.bincount(jj, weights=ff[:, c], minlength=n_local)
    store.forces.write_rows(0, forces)
    if store.n_ghost:
        store.forces.fill_rows(n_local, store.n_ghost, 0.0)
    return float(np.sum(energies)) if accumulate_energy else None
