"""Rasterized tube fields, L^p norms, x-ray transforms and box counting."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError
from ..geom import LineSeg, Tube
from . import _kernels
from .grid import GridSpec, ScalarField, configure_threads

# cap on the slice buffer used by the streaming histogram (cells)
STREAM_BLOCK_CELLS = 2**25


def _arrays(family):
    xs = np.ascontiguousarray(family.xs, dtype=np.float64)
    vs = np.ascontiguousarray(family.vs, dtype=np.float64)
    return xs, vs, float(family.delta)


def _check_grid(family, spec: GridSpec):
    if spec.n != family.n:
        raise DomainError(f"grid is {spec.n}-dimensional, family is {family.n}-dimensional")
    if spec.cell > family.delta:
        raise DomainError(f"cell {spec.cell} exceeds tube radius {family.delta}")


def multiplicity_field(family, spec: GridSpec, budget: int | None = None, occupancy: bool = False) -> ScalarField:
    """Number of tubes containing each cell centre (or 0/1 occupancy)."""
    _check_grid(family, spec)
    spec.check_budget(budget)
    configure_threads()
    xs, vs, delta = _arrays(family)
    lo, cell, dims = spec.kernel_args()
    out = np.zeros((spec.dims[-1], math.prod(spec.cross_dims)), dtype=np.uint8 if occupancy else np.int32)
    if len(xs):
        _kernels.rasterize_block(xs, vs, delta, lo, cell, dims, 0, out, spec.max_slice_cells(delta), occupancy)
    return ScalarField.from_slices(spec, out)


def union_field(family, spec: GridSpec, budget: int | None = None) -> ScalarField:
    """0/1 indicator of the union of the tubes."""
    return multiplicity_field(family, spec, budget, occupancy=True)


def multiplicity_histogram(family, spec: GridSpec, budget: int | None = None) -> np.ndarray:
    """hist[k] = number of cells covered by exactly k tubes.

    Streams over blocks of t-slices so the full field is never held in
    memory; the result equals ``np.bincount`` of ``multiplicity_field``.
    """
    _check_grid(family, spec)
    spec.check_budget(budget)
    configure_threads()
    xs, vs, delta = _arrays(family)
    lo, cell, dims = spec.kernel_args()
    nt = spec.dims[-1]
    ncross = math.prod(spec.cross_dims)
    block = max(1, min(nt, STREAM_BLOCK_CELLS // ncross))
    hist = np.zeros(1, dtype=np.int64)
    buf = np.zeros((block, ncross), dtype=np.int32)
    maxcells = spec.max_slice_cells(delta)
    for k0 in range(0, nt, block):
        out = buf[: min(block, nt - k0)]
        out[:] = 0
        if len(xs):
            _kernels.rasterize_block(xs, vs, delta, lo, cell, dims, k0, out, maxcells, False)
        h = np.bincount(out.ravel())
        if len(h) > len(hist):
            hist = np.concatenate([hist, np.zeros(len(h) - len(hist), dtype=np.int64)])
        hist[: len(h)] += h
    return hist


def norm_from_histogram(hist: np.ndarray, p: float, cell_volume: float) -> float:
    """(sum_k hist[k] k^p cellvol)^{1/p} for an integer-valued field."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    levels = np.nonzero(hist)[0]
    levels = levels[levels > 0]
    if math.isinf(p):
        return float(levels.max()) if len(levels) else 0.0
    total = 0.0
    for k in levels:
        total += float(hist[k]) * float(k) ** p
    return (total * cell_volume) ** (1.0 / p)


def lp_norm(field: ScalarField, p: float) -> float:
    """(sum over cells of |value|^p cellvol)^{1/p}."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    vals = field.values
    if vals.dtype.kind in "iub":
        # exact and order-independent: accumulate by value level
        hist = np.bincount(np.abs(vals.astype(np.int64)).ravel())
        return norm_from_histogram(hist, p, field.spec.cell_volume)
    a = np.abs(vals)
    if math.isinf(p):
        return float(a.max())
    return float(np.sum(a**p) * field.spec.cell_volume) ** (1.0 / p)


def tube_cell_indices(line: LineSeg, delta: float, spec: GridSpec) -> np.ndarray:
    """Sorted C-order flat indices (coordinate order) of the cells of T_l."""
    lo, cell, dims = spec.kernel_args()
    ks, cs = _kernels.tube_cells(
        np.asarray(line.x, dtype=np.float64),
        np.asarray(line.v, dtype=np.float64),
        float(delta),
        lo,
        cell,
        dims,
        spec.max_slice_cells(delta),
    )
    return np.sort(cs * spec.dims[-1] + ks)


def tube_sums(field: ScalarField, xs, vs, delta: float) -> np.ndarray:
    """Sum of field values over the cells of each tube l(xs[i], vs[i])."""
    configure_threads()
    spec = field.spec
    lo, cell, dims = spec.kernel_args()
    xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=np.float64)
    vs = np.ascontiguousarray(np.atleast_2d(vs), dtype=np.float64)
    if len(xs) == 0:
        return np.zeros(0)
    values = np.ascontiguousarray(field.slices(), dtype=np.float64)
    return _kernels.tube_sums(xs, vs, float(delta), lo, cell, dims, values, spec.max_slice_cells(delta), False)


def tube_cell_counts(spec: GridSpec, xs, vs, delta: float) -> np.ndarray:
    """Number of grid cells inside each tube."""
    configure_threads()
    lo, cell, dims = spec.kernel_args()
    xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=np.float64)
    vs = np.ascontiguousarray(np.atleast_2d(vs), dtype=np.float64)
    if len(xs) == 0:
        return np.zeros(0, dtype=np.int64)
    dummy = np.zeros((1, 1))
    out = _kernels.tube_sums(xs, vs, float(delta), lo, cell, dims, dummy, spec.max_slice_cells(delta), True)
    return out.astype(np.int64)


def tube_voxel_volume(tube: Tube, spec: GridSpec) -> float:
    count = tube_cell_counts(spec, tube.line.xa[None], tube.line.va[None], tube.delta)[0]
    return float(count) * spec.cell_volume


def xray(field: ScalarField, l: LineSeg, step: float) -> float:
    """Riemann sum of the field along the segment, weighted by arclength."""
    spec = field.spec
    if step > spec.cell:
        raise DomainError(f"step {step} must not exceed the cell size {spec.cell}")
    nsteps = int(math.ceil(1.0 / step - 1e-12))
    t = (np.arange(nsteps) + 0.5) / nsteps
    pts = np.concatenate([l.xa + np.outer(t, l.va), t[:, None]], axis=1)
    idx = np.floor((pts - np.asarray(spec.lo)) / spec.cell).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=1)
    vals = np.zeros(nsteps)
    vals[inside] = field.values[tuple(idx[inside].T)]
    return float(vals.sum() * l.length / nsteps)


def xray_delta(field: ScalarField, tube: Tube) -> float:
    """delta^{1-n} times the integral of the field over T_l."""
    return float(xray_delta_many(field, tube.line.xa[None], tube.line.va[None], tube.delta)[0])


def xray_delta_many(field: ScalarField, xs, vs, delta: float) -> np.ndarray:
    spec = field.spec
    sums = tube_sums(field, xs, vs, delta)
    return sums * spec.cell_volume * delta ** (1 - spec.n)


def _support_box(field: ScalarField):
    nz = np.nonzero(field.values)
    if len(nz[0]) == 0:
        return None
    spec = field.spec
    lo = np.array([spec.lo[a] + nz[a].min() * spec.cell for a in range(spec.n)])
    hi = np.array([spec.lo[a] + (nz[a].max() + 1) * spec.cell for a in range(spec.n)])
    return lo, hi


def _lines_meeting_box(E: np.ndarray, Ep: np.ndarray, delta: float, lo, hi, chunk: int = 512):
    """(direction index, position index) pairs whose tubes may meet the box."""
    ta = max(lo[-1] - delta, -delta)
    tb = min(hi[-1] + delta, 1.0 + delta)
    if ta > tb:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    reach = delta * math.sqrt(2.0)
    ylo, yhi = lo[:-1], hi[:-1]
    out_v, out_x = [], []
    for start in range(0, len(E), chunk):
        V = E[start : start + chunk]
        vmin = np.minimum(V * ta, V * tb)
        vmax = np.maximum(V * ta, V * tb)
        # x + v t must come within reach of [ylo, yhi] for some t in [ta, tb]
        xlo = ylo - reach - vmax
        xhi = yhi + reach - vmin
        ok = np.all((Ep[None, :, :] >= xlo[:, None, :]) & (Ep[None, :, :] <= xhi[:, None, :]), axis=2)
        iv, ix = np.nonzero(ok)
        out_v.append(iv + start)
        out_x.append(ix)
    return np.concatenate(out_v), np.concatenate(out_x)


def mixed_norm_xray(field: ScalarField, E, Eprime, q: float, r: float) -> float:
    """Discretised ||X_delta f||_{L^q_v L^r_x} over the nets E (slopes) and E' (positions).

    (delta^{n-1} sum_v (delta^{n-1} sum_x |X_delta f(l(x, v))|^r)^{q/r})^{1/q}
    """
    if q < 1 or r < 1:
        raise DomainError("q and r must be >= 1")
    delta = float(E.delta)
    n = field.spec.n
    w = delta ** (n - 1)
    box = _support_box(field)
    if box is None:
        return 0.0
    V = np.asarray(E.points, dtype=float)
    X = np.asarray(Eprime.points, dtype=float)
    iv, ix = _lines_meeting_box(V, X, delta, *box)
    vals = np.abs(xray_delta_many(field, X[ix], V[iv], delta)) if len(iv) else np.zeros(0)
    per_v = np.zeros(len(V))
    if math.isinf(r):
        np.maximum.at(per_v, iv, vals)
    else:
        np.add.at(per_v, iv, vals**r)
        per_v = (w * per_v) ** (1.0 / r)
    if math.isinf(q):
        return float(per_v.max())
    return float((w * np.sum(per_v**q)) ** (1.0 / q))


def default_scales(cell: float, delta: float, top: float = 0.25) -> list[float]:
    """Dyadic box sides from 4 delta to top, extended down towards the cell if fewer than 3.

    Sides below a few delta count the thickness of the delta-neighbourhood
    rather than the set itself, so they are skipped when the range allows.
    """
    lo = max(cell, 4.0 * delta)
    scales = [lo * 2.0**k for k in range(int(math.floor(math.log2(top / lo) + 1e-9)) + 1)] if lo <= top else []
    while len(scales) < 3 and (not scales or scales[0] / 2.0 >= cell * (1 - 1e-9)):
        scales.insert(0, (scales[0] if scales else top * 2.0) / 2.0)
    return scales


def box_count(field: ScalarField, scales) -> list[tuple[float, int]]:
    """Number of aligned s-cubes meeting the support, for each scale s."""
    spec = field.spec
    occ = (field.values != 0).view(np.uint8) if field.values.dtype == bool else (field.values != 0).astype(np.uint8)
    out = []
    for s in scales:
        s = float(s)
        ratio = s / spec.cell
        factor = int(round(ratio))
        if s < spec.cell * (1 - 1e-9) or abs(ratio - factor) > 1e-9:
            raise DomainError(f"scale {s} must be a multiple of the cell size {spec.cell}")
        pooled = occ
        for axis in range(spec.n):
            if factor > 1:
                starts = np.arange(0, pooled.shape[axis], factor)
                pooled = np.maximum.reduceat(pooled, starts, axis=axis)
        out.append((s, int(np.count_nonzero(pooled))))
    return out


def fit_dimension(counts) -> float:
    """Least-squares slope of log N(s) against log(1/s)."""
    counts = [(s, c) for s, c in counts]
    if len(counts) < 2:
        raise DomainError("need at least two scales to fit a dimension")
    x = np.log([1.0 / s for s, _ in counts])
    y = np.log([max(c, 1) for _, c in counts])
    return float(np.polyfit(x, y, 1)[0])
