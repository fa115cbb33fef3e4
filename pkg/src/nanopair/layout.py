"""2D array storage with a selectable linear index function.

Three layouts are supported for logical (size_x, size_y) arrays over one flat
buffer:

* row-major      offset = x * size_y + y          (AoS when size_y == 3)
* column-major   offset = y * size_x + x          (SoA)
* clustered      offset = c * (i * size_y + y) + j with i = x >> shift,
                 j = x & (c - 1)                  (AoSoA, cluster size c)

The layout is fixed at handle creation, so every access compiles down to one
arithmetic expression; callers that only touch data through get/set/add (or
the bulk row operations, which use the same index math) observe identical
results under every layout.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "LayoutKind",
    "LayoutDescriptor",
    "ArrayHandle",
    "row_major_layout",
    "column_major_layout",
    "clustered_layout",
    "layout_from_config",
]


class LayoutKind(Enum):
    ROW_MAJOR = "row_major"
    COLUMN_MAJOR = "column_major"
    CLUSTERED = "clustered"


@dataclass(frozen=True)
class LayoutDescriptor:
    kind: LayoutKind
    cluster_size: int = 1
    atomic_add: bool = False

    def __post_init__(self) -> None:
        c = self.cluster_size
        if c < 1 or (c & (c - 1)) != 0:
            raise ValueError(f"cluster_size must be a power of two, got {c}")

    @property
    def shift(self) -> int:
        return self.cluster_size.bit_length() - 1

    @property
    def mask(self) -> int:
        return self.cluster_size - 1

    def index_2d(self, size_x: int, size_y: int, x, y):
        """Linear offset of element (x, y); broadcasts over integer arrays."""
        if self.kind is LayoutKind.ROW_MAJOR:
            return x * size_y + y
        if self.kind is LayoutKind.COLUMN_MAJOR:
            return y * size_x + x
        i = x >> self.shift
        j = x & self.mask
        return self.cluster_size * (i * size_y + y) + j

    def required_capacity(self, size_x: int, size_y: int) -> int:
        """Buffer length needed for all valid (x, y); clusters pad size_x up."""
        if self.kind is LayoutKind.CLUSTERED:
            c = self.cluster_size
            padded_x = -(-size_x // c) * c
            return padded_x * size_y
        return size_x * size_y


def row_major_layout(atomic_add: bool = False) -> LayoutDescriptor:
    return LayoutDescriptor(LayoutKind.ROW_MAJOR, atomic_add=atomic_add)


def column_major_layout(atomic_add: bool = False) -> LayoutDescriptor:
    return LayoutDescriptor(LayoutKind.COLUMN_MAJOR, atomic_add=atomic_add)


def clustered_layout(cluster_size: int, atomic_add: bool = False) -> LayoutDescriptor:
    return LayoutDescriptor(LayoutKind.CLUSTERED, cluster_size, atomic_add)


def layout_from_config(kind: str, cluster: int = 8, atomic_add: bool = False) -> LayoutDescriptor:
    """Map the user-facing names (aos, soa, aosoa) onto layout descriptors."""
    if kind == "aos":
        return row_major_layout(atomic_add)
    if kind == "soa":
        return column_major_layout(atomic_add)
    if kind == "aosoa":
        return clustered_layout(cluster, atomic_add)
    raise ValueError(f"unknown layout {kind!r}")


class ArrayHandle:
    """A logical (size_x, size_y) array stored through a layout's index map.

    The buffer is padded to the layout's required capacity; padding elements
    are zero-initialized and never addressed by valid indices.
    """

    def __init__(self, layout: LayoutDescriptor, size_x: int, size_y: int, dtype=np.float64):
        self.layout = layout
        self.size_x = int(size_x)
        self.size_y = int(size_y)
        self.dtype = np.dtype(dtype)
        self.buf = np.zeros(layout.required_capacity(size_x, size_y), dtype=self.dtype)
        self._lock = threading.Lock() if layout.atomic_add else None

    @property
    def capacity(self) -> int:
        return self.buf.size

    def index(self, x, y):
        return self.layout.index_2d(self.size_x, self.size_y, x, y)

    def _check(self, x: int, y: int) -> None:
        if not (0 <= x < self.size_x and 0 <= y < self.size_y):
            raise IndexError(f"({x}, {y}) outside ({self.size_x}, {self.size_y})")

    def get(self, x: int, y: int):
        self._check(x, y)
        return self.buf[self.index(x, y)].item()

    def set(self, x: int, y: int, v) -> None:
        self._check(x, y)
        self.buf[self.index(x, y)] = v

    def add(self, x: int, y: int, v) -> None:
        """Accumulate; linearizable under concurrent callers when atomic_add is set."""
        self._check(x, y)
        idx = self.index(x, y)
        if self._lock is not None:
            with self._lock:
                self.buf[idx] += v
        else:
            self.buf[idx] += v

    def get_vec3(self, i: int) -> np.ndarray:
        self._check(i, 2)
        return self.buf[[self.index(i, 0), self.index(i, 1), self.index(i, 2)]].copy()

    def set_vec3(self, i: int, v) -> None:
        self._check(i, 2)
        self.buf[self.index(i, 0)] = v[0]
        self.buf[self.index(i, 1)] = v[1]
        self.buf[self.index(i, 2)] = v[2]

    def add_vec3(self, i: int, v) -> None:
        self.add(i, 0, v[0])
        self.add(i, 1, v[1])
        self.add(i, 2, v[2])

    def _row_indices(self, start: int, count: int) -> np.ndarray:
        x = np.arange(start, start + count, dtype=np.int64)[:, None]
        y = np.arange(self.size_y, dtype=np.int64)[None, :]
        return self.index(x, y)

    def read_rows(self, start: int = 0, count: int | None = None) -> np.ndarray:
        """Copy rows [start, start+count) out as a (count, size_y) array."""
        if count is None:
            count = self.size_x - start
        if count == 0:
            return np.empty((0, self.size_y), dtype=self.dtype)
        if start < 0 or start + count > self.size_x:
            raise IndexError(f"rows [{start}, {start + count}) outside size_x={self.size_x}")
        return self.buf[self._row_indices(start, count)]

    def write_rows(self, start: int, rows: np.ndarray) -> None:
        rows = np.asarray(rows)
        count = rows.shape[0]
        if count == 0:
            return
        if start < 0 or start + count > self.size_x:
            raise IndexError(f"rows [{start}, {start + count}) outside size_x={self.size_x}")
        self.buf[self._row_indices(start, count)] = rows

    def fill_rows(self, start: int, count: int, value=0.0) -> None:
        if count > 0:
            self.buf[self._row_indices(start, count)] = value

    def _scatter_indices(self, x_indices: np.ndarray) -> np.ndarray:
        x = np.asarray(x_indices, dtype=np.int64)[:, None]
        y = np.arange(self.size_y, dtype=np.int64)[None, :]
        return self.index(x, y)

    def read_rows_at(self, x_indices) -> np.ndarray:
        """Gather arbitrary rows as a (k, size_y) copy."""
        x = np.asarray(x_indices, dtype=np.int64)
        if x.size == 0:
            return np.empty((0, self.size_y), dtype=self.dtype)
        if x.min() < 0 or x.max() >= self.size_x:
            raise IndexError("row index outside size_x")
        return self.buf[self._scatter_indices(x)]

    def write_rows_at(self, x_indices, rows: np.ndarray) -> None:
        x = np.asarray(x_indices, dtype=np.int64)
        if x.size == 0:
            return
        if x.min() < 0 or x.max() >= self.size_x:
            raise IndexError("row index outside size_x")
        self.buf[self._scatter_indices(x)] = rows

    def grown(self, new_size_x: int) -> "ArrayHandle":
        """A new handle with the same layout and contents, larger size_x."""
        if new_size_x < self.size_x:
            raise ValueError("grown() cannot shrink")
        out = ArrayHandle(self.layout, new_size_x, self.size_y, self.dtype)
        out.write_rows(0, self.read_rows(0, self.size_x))
        return out
