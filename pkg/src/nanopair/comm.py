"""Three-phase halo protocol over simulated ranks.

The phases, run per communication epoch:

* exchange        migrate ownership of particles that left their rank's
                  region (positions wrapped across periodic boundaries,
                  velocities travel along)
* border definition   pick the particles other ranks need as ghosts, ship
                  copies, and remember the plan
* synchronization replay the plan every step to refresh ghost positions

Rank programs are written as generators that ``yield`` at collective barrier
points; a runner advances all ranks one barrier at a time, so every send of a
sub-phase is posted before any matching receive runs. This holds whether the
runner drives ranks round-robin in one thread or through a pool.

Wire records are little-endian: u8 kind (0 exchange, 1 border, 2 sync,
3 migrate), u32 particle count, then count x (3 or 6) f8 payload.
"""

from __future__ import annotations

import struct
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import AABB, aabb_distance, pbc_correct
from .errors import ProtocolError
from .particles import ParticleStore

__all__ = [
    "WIRE_EXCHANGE",
    "WIRE_BORDER",
    "WIRE_SYNC",
    "WIRE_MIGRATE",
    "pack_particles",
    "unpack_particles",
    "MailboxTransport",
    "RankDomain",
    "RankWorld",
    "CommPattern",
    "PatternEntry",
    "six_stencil_pattern",
    "block_neighborhood_pattern",
    "factor_rank_grid",
    "rank_grid_coords",
    "rank_grid_index",
    "slab_bounds",
    "exchange",
    "define_borders",
    "synchronize",
    "BorderPlan",
]

WIRE_EXCHANGE = 0
WIRE_BORDER = 1
WIRE_SYNC = 2
WIRE_MIGRATE = 3

_HEADER = struct.Struct("<BI")
_WIDTH = {WIRE_EXCHANGE: 6, WIRE_BORDER: 3, WIRE_SYNC: 3, WIRE_MIGRATE: 6}


def pack_particles(kind: int, payload: np.ndarray) -> bytes:
    payload = np.atleast_2d(np.asarray(payload, dtype="<f8"))
    if payload.size and payload.shape[1] != _WIDTH[kind]:
        raise ValueError(f"kind {kind} carries {_WIDTH[kind]} doubles per particle")
    return _HEADER.pack(kind, payload.shape[0] if payload.size else 0) + payload.tobytes()


def unpack_particles(blob: bytes) -> tuple[int, np.ndarray]:
    kind, count = _HEADER.unpack_from(blob)
    width = _WIDTH[kind]
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if data.size != count * width:
        raise ProtocolError(f"wire record announces {count} particles, payload has {data.size} reals")
    return kind, data.reshape(count, width).astype(np.float64)


class MailboxTransport:
    """In-process message passing with one FIFO queue per (src, dst) pair."""

    def __init__(self, size: int):
        self.size = size
        self._lock = threading.Lock()
        self._boxes: dict[tuple[int, int], deque[bytes]] = {}

    def send(self, src: int, dst: int, blob: bytes) -> None:
        with self._lock:
            self._boxes.setdefault((src, dst), deque()).append(blob)

    def recv(self, dst: int, src: int) -> bytes:
        with self._lock:
            box = self._boxes.get((src, dst))
            if not box:
                raise ProtocolError(f"rank {dst} expected a message from {src} but none arrived")
            return box.popleft()

    def pending(self) -> int:
        with self._lock:
            return sum(len(b) for b in self._boxes.values())


@dataclass
class RankDomain:
    """Per-rank ownership region, ghost-layer width, and neighbor table."""

    rank: int
    ownership: list[AABB]
    spacing: float
    grid_box: AABB | None = None  # static cell-grid box; None means crop to particles
    neighbors: list[tuple[int, list[AABB]]] = field(default_factory=list)

    def owns(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        mask = np.zeros(points.shape[0], dtype=bool)
        for box in self.ownership:
            mask |= box.contains(points)
        return mask

    def grid_box_for(self, store: ParticleStore) -> AABB:
        if self.grid_box is not None:
            return self.grid_box
        pos = store.all_positions()
        if pos.shape[0] == 0:
            return self.ownership[0] if self.ownership else AABB.cube(0.0, self.spacing)
        return AABB.from_arrays(pos.min(axis=0), pos.max(axis=0) + 1e-9)


@dataclass
class PatternEntry:
    """One peer relation: whom to send to, whom to receive from, and the two
    position predicates. Conditions map an (n, 3) position block to
    (indices, emitted positions); emitted positions carry any periodic shift.
    """

    send_to: int
    recv_from: int
    border_cond: object
    exchange_cond: object


@dataclass
class CommPattern:
    """Barrier-separated rounds of peer entries.

    The face-stencil pattern needs one round per dimension so corner ghosts
    can hop across successive faces; the block pattern routes in one round.
    `kind` selects the exchange routing discipline: "stencil" conditions are
    already disjoint per round, "block" conditions are membership tests that
    get filtered by ownership and cross-checked for unique claims.
    """

    rounds: list[list[PatternEntry]]
    kind: str = "stencil"


@dataclass
class RankWorld:
    size: int
    rank: int
    transport: MailboxTransport
    global_box: AABB
    domain: RankDomain
    pattern: CommPattern


def factor_rank_grid(p: int) -> tuple[int, int, int]:
    """Near-cubic 3D factorization of the rank count."""
    if p <= 0:
        raise ValueError("rank count must be positive")
    dims = [1, 1, 1]
    n = p
    f = 2
    factors = []
    while n > 1:
        while n % f == 0:
            factors.append(f)
            n //= f
        f += 1
    for f in sorted(factors, reverse=True):
        dims[int(np.argmin(dims))] *= f
    return tuple(sorted(dims, reverse=True))


def rank_grid_index(coords, grid) -> int:
    cx, cy, cz = coords
    gx, gy, _ = grid
    return (cz * gy + cy) * gx + cx


def rank_grid_coords(rank: int, grid) -> tuple[int, int, int]:
    gx, gy, _ = grid
    return rank % gx, (rank // gx) % gy, rank // (gx * gy)


def slab_bounds(global_box: AABB, grid, coords) -> AABB:
    """Ownership slab of a rank-grid cell; boundary reals are shared exactly
    by both sides because every rank evaluates the same expression."""
    lo = global_box.lo
    ext = global_box.extent()
    g = np.asarray(grid, dtype=np.float64)
    c = np.asarray(coords, dtype=np.float64)
    return AABB.from_arrays(lo + ext * (c / g), lo + ext * ((c + 1.0) / g))


def six_stencil_pattern(
    rank_grid: tuple[int, int, int],
    this_rank: int,
    global_box: AABB,
    spacing: float,
) -> CommPattern:
    """Face-neighbor pattern over a regular rank grid, one round per dimension.

    The exchange condition is "strictly outside my slab through this face";
    the border condition is "within spacing of this face". Both emit positions
    shifted by the domain length when the face is the periodic boundary.
    """
    gx, gy, gz = rank_grid
    coords = rank_grid_coords(this_rank, rank_grid)
    slab = slab_bounds(global_box, rank_grid, coords)
    ext = global_box.extent()
    rounds = []
    for dim in range(3):
        entries = []
        for direction in (+1, -1):
            peer_coords = list(coords)
            peer_coords[dim] = (coords[dim] + direction) % rank_grid[dim]
            peer = rank_grid_index(peer_coords, rank_grid)
            at_edge = (
                coords[dim] == rank_grid[dim] - 1 if direction > 0 else coords[dim] == 0
            )
            shift = np.zeros(3)
            if at_edge:
                shift[dim] = -ext[dim] if direction > 0 else ext[dim]
            face = slab.hi[dim] if direction > 0 else slab.lo[dim]

            def make_conds(dim=dim, direction=direction, face=face, shift=shift.copy()):
                def exchange_cond(pos):
                    if direction > 0:
                        mask = pos[:, dim] >= face
                    else:
                        mask = pos[:, dim] < face
                    idx = np.nonzero(mask)[0]
                    return idx, pos[idx] + shift

                def border_cond(pos):
                    if direction > 0:
                        mask = pos[:, dim] > face - spacing
                    else:
                        mask = pos[:, dim] < face + spacing
                    idx = np.nonzero(mask)[0]
                    return idx, pos[idx] + shift

                return border_cond, exchange_cond

            border_cond, exchange_cond = make_conds()
            # the peer in the opposite direction feeds my receives for
            # this direction's traffic
            recv_coords = list(coords)
            recv_coords[dim] = (coords[dim] - direction) % rank_grid[dim]
            entries.append(
                PatternEntry(
                    send_to=peer,
                    recv_from=rank_grid_index(recv_coords, rank_grid),
                    border_cond=border_cond,
                    exchange_cond=exchange_cond,
                )
            )
        rounds.append(entries)
    return CommPattern(rounds)


def _image_offsets(ext: np.ndarray) -> np.ndarray:
    steps = np.array([-1.0, 0.0, 1.0])
    grid = np.stack(np.meshgrid(steps, steps, steps, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid * ext


def block_neighborhood_pattern(
    domain: RankDomain,
    global_box: AABB,
    spacing: float,
) -> CommPattern:
    """One entry per neighbor rank, driven by its list of block boxes.

    Border distance to a block uses the max-norm, which reproduces the face
    stencil's slab semantics exactly when the blocks are the stencil slabs.
    Periodic images are enumerated explicitly, so a rank can neighbor itself
    across the boundary (the P = 1 world ghosts its own images).
    """
    offsets = _image_offsets(global_box.extent())
    self_rank = domain.rank
    rounds_entries = []
    for peer, blocks in domain.neighbors:

        def make_conds(peer=peer, blocks=tuple(blocks)):
            def border_cond(pos):
                idx_parts, pos_parts = [], []
                for off in offsets:
                    if peer == self_rank and not np.any(off):
                        continue
                    shifted = pos + off
                    near = np.zeros(pos.shape[0], dtype=bool)
                    for box in blocks:
                        near |= aabb_distance(shifted, box, ord="linf") <= spacing
                    if np.any(near):
                        idx = np.nonzero(near)[0]
                        idx_parts.append(idx)
                        pos_parts.append(shifted[idx])
                if not idx_parts:
                    return np.empty(0, dtype=np.int64), np.empty((0, 3))
                return np.concatenate(idx_parts), np.vstack(pos_parts)

            def exchange_cond(pos):
                corrected = pbc_correct(pos, global_box)
                inside = np.zeros(pos.shape[0], dtype=bool)
                for box in blocks:
                    inside |= box.contains(corrected)
                idx = np.nonzero(inside)[0]
                return idx, corrected[idx]

            return border_cond, exchange_cond

        border_cond, exchange_cond = make_conds()
        rounds_entries.append(
            PatternEntry(peer, peer, border_cond=border_cond, exchange_cond=exchange_cond)
        )
    return CommPattern([rounds_entries] if rounds_entries else [[]], kind="block")


# ---------------------------------------------------------------------------
# the three phases (rank-program generators; `yield` is a collective barrier)
# ---------------------------------------------------------------------------


def exchange(world: RankWorld, store: ParticleStore):
    """Move particles that left this rank's region to their new owners.

    Runs on every rank at an epoch boundary. Positions are wrapped across the
    periodic boundary in transit; velocities travel with them. After the final
    round every local must satisfy the ownership predicate.
    """
    store.clear_ghosts()
    me = world.rank
    block = world.pattern.kind == "block"
    for entries in world.pattern.rounds:
        pos = store.local_positions()
        owned = world.domain.owns(pos) if block else None
        claimed = np.zeros(store.n_local, dtype=bool)
        departing = np.zeros(store.n_local, dtype=bool)
        for entry in entries:
            idx, emitted = entry.exchange_cond(pos)
            if block:
                # only particles outside my region are candidates
                away = ~owned[idx]
                idx, emitted = idx[away], emitted[away]
                if np.any(claimed[idx]):
                    dup = idx[claimed[idx]][0]
                    raise ProtocolError(
                        f"rank {me}: particle at {pos[dup]} claimed by several owners"
                    )
                claimed[idx] = True
            if entry.send_to == me:
                # periodic self-image: wrap in place, nothing travels
                store.positions.write_rows_at(idx, emitted)
                continue
            vel = store.velocities.read_rows_at(idx)
            world.transport.send(
                me, entry.send_to, pack_particles(WIRE_EXCHANGE, np.hstack([emitted, vel]))
            )
            departing[idx] = True
        if block:
            stranded = ~owned & ~claimed
            if np.any(stranded):
                i = int(np.nonzero(stranded)[0][0])
                raise ProtocolError(
                    f"rank {me}: particle at {pos[i]} owned by no listed neighbor "
                    "(stale neighborhood)"
                )
        store.compact_locals(~departing)
        yield
        for entry in entries:
            if entry.recv_from == me:
                continue
            kind, data = unpack_particles(world.transport.recv(me, entry.recv_from))
            if kind != WIRE_EXCHANGE:
                raise ProtocolError(f"rank {me} expected exchange record, got kind {kind}")
            if data.shape[0]:
                store.append_locals(data[:, :3], data[:, 3:])
    bad = ~world.domain.owns(store.local_positions())
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        raise ProtocolError(
            f"rank {me}: after exchange, local particle at "
            f"{store.local_positions()[i]} is outside the ownership region"
        )


@dataclass
class _PlanSend:
    peer: int
    src_idx: np.ndarray  # absolute store indices (locals or earlier ghosts)
    shift: np.ndarray  # (k, 3) fixed periodic shift per entry
    ghost_start: int = -1  # set for self-entries, which deliver in place


@dataclass
class _PlanRecv:
    peer: int
    ghost_start: int
    count: int


@dataclass
class _PlanRound:
    sends: list[_PlanSend] = field(default_factory=list)
    recvs: list[_PlanRecv] = field(default_factory=list)


@dataclass
class BorderPlan:
    """Frozen border traffic: who gets which of my particles with what shift,
    and which ghost slots each peer's refresh lands in."""

    rounds: list[_PlanRound]
    n_local: int
    n_ghost: int


def define_borders(world: RankWorld, store: ParticleStore):
    """Pick border particles, materialize ghosts on the receivers, keep the plan.

    Later rounds scan ghosts created by earlier rounds, which is how edge and
    corner images propagate across dimensions under the face stencil.
    """
    if store.n_ghost:
        raise ProtocolError("define_borders must start with an empty ghost region")
    me = world.rank
    plan_rounds: list[_PlanRound] = []
    for entries in world.pattern.rounds:
        rnd = _PlanRound()
        pos = store.all_positions()
        for entry in entries:
            idx, emitted = entry.border_cond(pos)
            shift = emitted - pos[idx] if len(idx) else np.empty((0, 3))
            if entry.send_to == me:
                start = store.append_ghosts(emitted, peer=me)
                rnd.sends.append(_PlanSend(me, idx, shift, ghost_start=start))
            else:
                world.transport.send(me, entry.send_to, pack_particles(WIRE_BORDER, emitted))
                rnd.sends.append(_PlanSend(entry.send_to, idx, shift))
        yield
        for entry in entries:
            if entry.recv_from == me:
                continue
            kind, data = unpack_particles(world.transport.recv(me, entry.recv_from))
            if kind != WIRE_BORDER:
                raise ProtocolError(f"rank {me} expected border record, got kind {kind}")
            start = store.append_ghosts(data, peer=entry.recv_from)
            rnd.recvs.append(_PlanRecv(entry.recv_from, start, data.shape[0]))
        plan_rounds.append(rnd)
    return BorderPlan(plan_rounds, n_local=store.n_local, n_ghost=store.n_ghost)


def synchronize(world: RankWorld, store: ParticleStore, plan: BorderPlan):
    """Refresh every ghost position from its source, replaying the plan.

    Each ghost ends up at source position plus the shift fixed at plan time;
    multi-hop images stay exact because rounds replay in plan order.
    """
    if store.n_local != plan.n_local or store.n_ghost != plan.n_ghost:
        raise ProtocolError(
            f"rank {world.rank}: store ({store.n_local} locals, {store.n_ghost} ghosts) "
            f"does not match the border plan ({plan.n_local}, {plan.n_ghost})"
        )
    me = world.rank
    for rnd in plan.rounds:
        for s in rnd.sends:
            data = store.positions.read_rows_at(s.src_idx) + s.shift
            if s.peer == me:
                store.set_ghost_positions(s.ghost_start, data)
            else:
                world.transport.send(me, s.peer, pack_particles(WIRE_SYNC, data))
        yield
        for r in rnd.recvs:
            kind, data = unpack_particles(world.transport.recv(me, r.peer))
            if kind != WIRE_SYNC:
                raise ProtocolError(f"rank {me} expected sync record, got kind {kind}")
            if data.shape[0] != r.count:
                raise ProtocolError(
                    f"rank {me}: sync from {r.peer} carries {data.shape[0]} particles, "
                    f"plan expects {r.count}"
                )
            store.set_ghost_positions(r.ghost_start, data)
