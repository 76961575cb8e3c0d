"""Voxel grids over the ambient box and scalar fields living on them."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BudgetExceeded, DomainError
from ..geom import check_dim

DEFAULT_BUDGET_CELLS = 2**28
BOX_HALF_WIDTH = 2.0

_SNAPSHOT_MAGIC = b"TLFIELD1"


def configure_threads() -> int:
    """Apply TUBELAB_THREADS to numba's thread pool; returns the count used."""
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    env = os.environ.get("TUBELAB_THREADS")
    if env:
        try:
            limit = max(1, min(int(env), limit))
        except ValueError:
            pass
    numba.set_num_threads(limit)
    return limit


@dataclass(frozen=True)
class GridSpec:
    n: int
    cell: float
    lo: tuple
    hi: tuple

    def __post_init__(self):
        check_dim(self.n)
        lo = tuple(float(a) for a in self.lo)
        hi = tuple(float(b) for b in self.hi)
        if len(lo) != self.n or len(hi) != self.n:
            raise DomainError("lo and hi need n coordinates")
        if any(b <= a for a, b in zip(lo, hi)):
            raise DomainError("hi - lo must be positive on every axis")
        if not self.cell > 0:
            raise DomainError("cell must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def standard(cls, n: int, delta: float, cell: float | None = None) -> "GridSpec":
        """Grid on [-2, 2]^{n-1} x [0, 1] with cell side delta/2 by default."""
        if cell is None:
            cell = delta / 2.0
        if cell > delta:
            raise DomainError(f"cell {cell} must not exceed delta {delta}")
        return cls(
            n,
            float(cell),
            (-BOX_HALF_WIDTH,) * (n - 1) + (0.0,),
            (BOX_HALF_WIDTH,) * (n - 1) + (1.0,),
        )

    @property
    def dims(self) -> tuple:
        return tuple(
            max(1, math.ceil((b - a) / self.cell - 1e-9)) for a, b in zip(self.lo, self.hi)
        )

    @property
    def cross_dims(self) -> tuple:
        return self.dims[:-1]

    @property
    def ncells(self) -> int:
        return math.prod(self.dims)

    @property
    def cell_volume(self) -> float:
        return self.cell**self.n

    def centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + (np.arange(self.dims[axis]) + 0.5) * self.cell

    def check_budget(self, budget: int | None = None) -> None:
        budget = DEFAULT_BUDGET_CELLS if budget is None else int(budget)
        if self.ncells > budget:
            raise BudgetExceeded(self.ncells, budget)

    def kernel_args(self):
        return (
            np.asarray(self.lo, dtype=np.float64),
            float(self.cell),
            np.asarray(self.dims, dtype=np.int64),
        )

    def max_slice_cells(self, delta: float) -> int:
        """Upper bound on the cells one tube occupies in a single slice."""
        side = int(math.ceil(2 * delta * math.sqrt(2.0) / self.cell)) + 3
        return side ** (self.n - 1)

    def index_of(self, points) -> np.ndarray:
        """Per-axis cell indices of points (clipped into the grid)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor((p - np.asarray(self.lo)) / self.cell).astype(np.int64)
        return np.clip(idx, 0, np.asarray(self.dims) - 1)

    def cell_centers_flat(self, flat: np.ndarray) -> np.ndarray:
        """Centres of cells given by C-order flat indices over ``dims``."""
        idx = np.stack(np.unravel_index(np.asarray(flat), self.dims), axis=1)
        return np.asarray(self.lo) + (idx + 0.5) * self.cell


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values on a GridSpec, indexed in coordinate order (last axis = t)."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if tuple(self.values.shape) != self.spec.dims:
            raise DomainError(f"field shape {self.values.shape} != grid dims {self.spec.dims}")
        if self.values.dtype.kind == "f" and not np.all(np.isfinite(self.values)):
            raise DomainError("field values must be finite")

    @classmethod
    def zeros(cls, spec: GridSpec, dtype=np.float64) -> "ScalarField":
        return cls(spec, np.zeros(spec.dims, dtype=dtype))

    @classmethod
    def from_slices(cls, spec: GridSpec, slices: np.ndarray) -> "ScalarField":
        """Wrap a slice-major (nt, ncross) array without copying."""
        view = slices.reshape((spec.dims[-1],) + spec.cross_dims)
        return cls(spec, np.moveaxis(view, 0, -1))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "ScalarField":
        """Sample ``fn(points) -> values`` at every cell centre."""
        grids = np.meshgrid(*(spec.centers(a) for a in range(spec.n)), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        return cls(spec, np.asarray(fn(pts), dtype=float).reshape(spec.dims))

    def slices(self) -> np.ndarray:
        """Slice-major (nt, ncross) view or copy of the values."""
        moved = np.moveaxis(self.values, -1, 0)
        return moved.reshape(self.spec.dims[-1], -1)

    def indicator(self) -> "ScalarField":
        return ScalarField(self.spec, (self.values != 0).astype(np.uint8))

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.values))

    def measure(self) -> float:
        """Measure of the support."""
        return self.occupied_count() * self.spec.cell_volume

    def scaled(self, c: float) -> "ScalarField":
        return ScalarField(self.spec, self.values.astype(float) * c)


def save_snapshot(field: ScalarField, path) -> None:
    """Header (magic, n, cell, lo, hi, dims) then float64 values, little-endian."""
    spec = field.spec
    n = spec.n
    header = _SNAPSHOT_MAGIC + struct.pack(
        f"<id{n}d{n}d{n}q", n, spec.cell, *spec.lo, *spec.hi, *spec.dims
    )
    data = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    _atomic_write_bytes(Path(path), header + data)


def load_snapshot(path) -> ScalarField:
    raw = Path(path).read_bytes()
    if not raw.startswith(_SNAPSHOT_MAGIC):
        raise DomainError(f"{path}: not a field snapshot")
    off = len(_SNAPSHOT_MAGIC)
    (n,) = struct.unpack_from("<i", raw, off)
    fmt = f"<id{n}d{n}d{n}q"
    vals = struct.unpack_from(fmt, raw, off)
    cell = vals[1]
    lo = vals[2 : 2 + n]
    hi = vals[2 + n : 2 + 2 * n]
    dims = tuple(vals[2 + 2 * n :])
    spec = GridSpec(n, cell, lo, hi)
    if spec.dims != dims:
        raise DomainError(f"{path}: header dims {dims} inconsistent with cell/lo/hi")
    data = np.frombuffer(raw, dtype="<f8", offset=off + struct.calcsize(fmt))
    if data.size != math.prod(dims):
        raise DomainError(f"{path}: expected {math.prod(dims)} values, found {data.size}")
    return ScalarField(spec, data.reshape(dims).astype(np.float64))


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
