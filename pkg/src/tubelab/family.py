"""Separated nets, tube families with a direction-multiplicity bound, and
density/multiplicity statistics of a family against a target set."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .geom import LineSeg, check_dim
from .raster import GridSpec, ScalarField, tube_cell_counts, tube_sums

_SEP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Net:
    delta: float
    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            raise DomainError("a net needs at least one point")
        if np.any(np.linalg.norm(pts, axis=1) >= 1.0):
            raise DomainError("net points must lie strictly inside the unit ball")
        if count_close_pairs(pts, self.delta):
            raise DomainError(f"net points are not {self.delta}-separated")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[1] + 1

    def __len__(self) -> int:
        return len(self.points)


def count_close_pairs(points: np.ndarray, delta: float) -> int:
    """Number of pairs of distinct points closer than delta."""
    pts = np.unique(np.atleast_2d(points), axis=0)
    if len(pts) < 2:
        return 0
    return len(cKDTree(pts).query_pairs(delta * (1.0 - _SEP_TOL)))


def lattice_points(delta: float, n: int) -> np.ndarray:
    """Points of delta Z^{n-1} strictly inside the unit ball, in lexicographic order."""
    k = int(math.floor(1.0 / delta))
    ticks = np.arange(-k, k + 1) * delta
    grids = np.meshgrid(*([ticks] * (n - 1)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return pts[np.linalg.norm(pts, axis=1) < 1.0]


def build_net(delta: float, seed: int = 0, mode: str = "lattice", n: int = 3) -> Net:
    """A delta-separated subset of the open unit ball of R^{n-1}.

    ``lattice`` returns the points of delta Z^{n-1} in the ball (seed is
    ignored).  ``maximal-random`` greedily accepts candidates from a
    delta/4 lattice in a seeded random order until no candidate fits.
    """
    n = check_dim(n)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    if mode == "lattice":
        return Net(delta, lattice_points(delta, n))
    if mode != "maximal-random":
        raise DomainError(f"unknown net mode {mode!r}")
    rng = np.random.default_rng(seed)
    cands = lattice_points(delta / 4.0, n)
    cands = cands[rng.permutation(len(cands))]
    bucket = delta / math.sqrt(n - 1)
    reach = int(math.ceil(delta / bucket))
    grid: dict[tuple, list[int]] = {}
    accepted: list[np.ndarray] = []
    offsets = np.stack(
        np.meshgrid(*([np.arange(-reach, reach + 1)] * (n - 1)), indexing="ij"), axis=-1
    ).reshape(-1, n - 1)
    for p in cands:
        key = tuple(np.floor(p / bucket).astype(int))
        ok = True
        for off in offsets:
            for j in grid.get(tuple(np.add(key, off)), ()):
                if np.linalg.norm(accepted[j] - p) < delta:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            grid.setdefault(key, []).append(len(accepted))
            accepted.append(p)
    return Net(delta, np.array(accepted))


@dataclass(frozen=True, eq=False)
class TubeFamily:
    """Line segments l(x, v) sharing the tube radius delta.

    ``m`` is the declared bound on how many segments share a slope.
    """

    delta: float
    xs: np.ndarray
    vs: np.ndarray
    m: int = 1
    seed: int = 0
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        xs = np.asarray(self.xs, dtype=float)
        vs = np.asarray(self.vs, dtype=float)
        if xs.ndim != 2 or xs.shape != vs.shape:
            raise DomainError("xs and vs must be arrays of equal shape (N, n-1)")
        check_dim(xs.shape[1] + 1)
        if len(xs) and (
            np.any(np.linalg.norm(xs, axis=1) >= 1.0) or np.any(np.linalg.norm(vs, axis=1) >= 1.0)
        ):
            raise DomainError("positions and slopes must lie strictly inside the unit ball")
        m = int(self.m)
        if m != self.m or m < 1:
            raise DomainError(f"m must be a positive integer, got {self.m}")
        if m > math.ceil(self.delta ** (1 - (xs.shape[1] + 1))):
            raise DomainError(f"m = {m} exceeds delta^(1-n)")
        xs = np.ascontiguousarray(xs)
        vs = np.ascontiguousarray(vs)
        xs.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "vs", vs)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_lines(cls, delta: float, lines, m: int = 1, **kw) -> "TubeFamily":
        lines = list(lines)
        if not lines:
            raise DomainError("from_lines needs at least one line; use empty() for an empty family")
        return cls(delta, np.array([l.x for l in lines]), np.array([l.v for l in lines]), m, **kw)

    @classmethod
    def empty(cls, delta: float, n: int = 3, m: int = 1) -> "TubeFamily":
        return cls(delta, np.zeros((0, n - 1)), np.zeros((0, n - 1)), m)

    @property
    def n(self) -> int:
        return self.xs.shape[1] + 1

    def __len__(self) -> int:
        return len(self.xs)

    def line(self, i: int) -> LineSeg:
        return LineSeg(self.xs[i], self.vs[i])

    @property
    def lines(self) -> list[LineSeg]:
        return [self.line(i) for i in range(len(self))]

    @property
    def lengths(self) -> np.ndarray:
        return np.sqrt(1.0 + np.einsum("ij,ij->i", self.vs, self.vs))

    def subset(self, index) -> "TubeFamily":
        index = np.asarray(index)
        return TubeFamily(self.delta, self.xs[index], self.vs[index], self.m, self.seed, self.label, dict(self.meta))

    def union(self, other: "TubeFamily") -> "TubeFamily":
        return TubeFamily(
            self.delta,
            np.concatenate([self.xs, other.xs]),
            np.concatenate([self.vs, other.vs]),
            max(self.m, other.m),
            self.seed,
            self.label,
        )

    def index_of(self, l: LineSeg) -> int | None:
        hit = np.nonzero(np.all(self.xs == l.xa, axis=1) & np.all(self.vs == l.va, axis=1))[0]
        return int(hit[0]) if len(hit) else None


def direction_multiplicity(f: TubeFamily) -> int:
    """Largest number of lines sharing one slope."""
    if len(f) == 0:
        return 0
    _, counts = np.unique(f.vs, axis=0, return_counts=True)
    return int(counts.max())


@dataclass(frozen=True)
class FamilyReport:
    size: int
    declared_m: int
    max_multiplicity: int
    direction_violations: int
    position_violations: int

    @property
    def multiplicity_ok(self) -> bool:
        return self.max_multiplicity <= self.declared_m

    @property
    def valid(self) -> bool:
        return self.multiplicity_ok and self.direction_violations == 0 and self.position_violations == 0

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "declared_m": self.declared_m,
            "max_multiplicity": self.max_multiplicity,
            "direction_violations": self.direction_violations,
            "position_violations": self.position_violations,
            "valid": self.valid,
        }


def validate_family(f: TubeFamily) -> FamilyReport:
    return FamilyReport(
        size=len(f),
        declared_m=f.m,
        max_multiplicity=direction_multiplicity(f),
        direction_violations=count_close_pairs(f.vs, f.delta) if len(f) else 0,
        position_violations=count_close_pairs(f.xs, f.delta) if len(f) else 0,
    )


@dataclass(frozen=True)
class DensityStats:
    """Mean tube density lam, mean multiplicity mu on E, and |E|.

    ``tube_measure`` is the mean voxel volume of a tube, the grid's version
    of delta^{n-1} (times the cross-section constant and length), so that
    mu |E| = lam * tube_measure * |A| exactly.
    """

    lam: float
    mu: float
    set_measure: float
    tube_measure: float
    family_size: int

    @property
    def consistency_gap(self) -> float:
        lhs = self.mu * self.set_measure
        rhs = self.lam * self.tube_measure * self.family_size
        return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mu": self.mu,
            "set_measure": self.set_measure,
            "tube_measure": self.tube_measure,
            "family_size": self.family_size,
        }


def _indicator(field: ScalarField) -> ScalarField:
    return ScalarField(field.spec, (field.values != 0).astype(np.float64))


def tube_hits(f: TubeFamily, field: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Per tube: cells of T_l inside E, and all cells of T_l."""
    if field.spec.n != f.n:
        raise DomainError("field and family dimensions differ")
    hits = tube_sums(_indicator(field), f.xs, f.vs, f.delta)
    cells = tube_cell_counts(field.spec, f.xs, f.vs, f.delta)
    return hits, cells


def tube_densities(f: TubeFamily, field: ScalarField) -> np.ndarray:
    """|T_l cap E| / |T_l| for each tube (voxel measures)."""
    hits, cells = tube_hits(f, field)
    return np.where(cells > 0, hits / np.maximum(cells, 1), 0.0)


def density_stats(f: TubeFamily, field: ScalarField) -> DensityStats:
    if len(f) == 0:
        raise DomainError("empty family")
    ecells = int(np.count_nonzero(field.values))
    if ecells == 0:
        raise DomainError("empty target set")
    hits, cells = tube_hits(f, field)
    vol = field.spec.cell_volume
    total_hits = float(hits.sum())
    return DensityStats(
        lam=total_hits / float(cells.sum()),
        mu=total_hits / ecells,
        set_measure=ecells * vol,
        tube_measure=float(cells.sum()) / len(f) * vol,
        family_size=len(f),
    )


def refine_by_density(f: TubeFamily, field: ScalarField, lambda_target: float, tolerance_dyadic: int) -> TubeFamily:
    """Lines whose density |T_l cap E| / |T_l| is within 2^{+-tol} of the target."""
    if tolerance_dyadic < 1:
        raise DomainError("tolerance_dyadic must be >= 1")
    if len(f) == 0:
        return f
    dens = tube_densities(f, field)
    lo = lambda_target * 2.0**-tolerance_dyadic
    hi = lambda_target * 2.0**tolerance_dyadic
    return f.subset(np.nonzero((dens >= lo) & (dens <= hi))[0])


# -- family files -----------------------------------------------------------

FAMILY_MAGIC = "# tubelab family v1"


def format_family(f: TubeFamily) -> str:
    """Plain-text family: two comment header lines, a column line, one record per line.

    Columns are x0..x_{n-2}, v0..v_{n-2}; floats use repr so files round-trip.
    """
    k = f.n - 1
    head = [
        FAMILY_MAGIC,
        f"# n={f.n} delta={f.delta!r} m={f.m} seed={f.seed} generator={f.label or '-'}",
        ",".join([f"x{j}" for j in range(k)] + [f"v{j}" for j in range(k)]),
    ]
    rows = [",".join(repr(float(c)) for c in (*x, *v)) for x, v in zip(f.xs, f.vs)]
    return "\n".join(head + rows) + "\n"


def parse_family(text: str, source: str = "<family>") -> TubeFamily:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != FAMILY_MAGIC:
        raise DomainError(f"{source}: missing family header")
    if len(lines) < 3 or not lines[1].startswith("#"):
        raise DomainError(f"{source}: truncated family header")
    meta = {}
    for tok in lines[1].lstrip("#").split():
        key, _, val = tok.partition("=")
        meta[key] = val
    try:
        n = int(meta["n"])
        delta = float(meta["delta"])
        m = int(meta["m"])
        seed = int(meta.get("seed", 0))
    except (KeyError, ValueError) as exc:
        raise DomainError(f"{source}: bad header field ({exc})") from exc
    cols = lines[2].split(",")
    if len(cols) != 2 * (n - 1):
        raise DomainError(f"{source}: expected {2 * (n - 1)} columns, got {len(cols)}")
    try:
        data = np.array([[float(c) for c in ln.split(",")] for ln in lines[3:]], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{source}: bad record ({exc})") from exc
    data = data.reshape(-1, 2 * (n - 1))
    label = meta.get("generator", "-")
    return TubeFamily(delta, data[:, : n - 1], data[:, n - 1 :], m, seed, "" if label == "-" else label)


def write_family(f: TubeFamily, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(format_family(f))
    os.replace(tmp, path)


def read_family(path) -> TubeFamily:
    path = Path(path)
    return parse_family(path.read_text(), str(path))
