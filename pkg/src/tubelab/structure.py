"""Structural functionals of tube families: plate number, hairbrushes,
dyadic uniformization bins, two-ends checks, bilinear splitting, L^2
incidence counting and slab masses."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .estimate import ExponentProfile, squid_profile
from .family import TubeFamily
from .geom import (
    PLATE_C,
    LineSeg,
    OrientedBox,
    Slab,
    Tube,
    boxes_contain_tubes,
    orthonormal_completion,
    plate_box,
    point_segment_distance,
    segment_distances,
    tube_intersection_bound,
)
from .raster import (
    GridSpec,
    ScalarField,
    multiplicity_field,
    multiplicity_histogram,
    norm_from_histogram,
    tube_cell_indices,
)


# -- plate number ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlateResult:
    value: float
    witness: OrientedBox
    w: float
    count: int
    delta: float
    C: float = PLATE_C

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "w": self.w,
            "count": self.count,
            "delta": self.delta,
            "C": self.C,
            "witness": self.witness.to_dict(),
        }


def plate_value(f: TubeFamily, box: OrientedBox, w: float) -> tuple[float, int]:
    """|{l : T_l certified inside box}| / (w / delta), recomputed from scratch."""
    count = int(np.count_nonzero(boxes_contain_tubes(box, f.xs, f.vs, f.delta)))
    return count / (w / f.delta), count


def _endpoints(f: TubeFamily):
    k = len(f)
    p0 = np.concatenate([f.xs, np.zeros((k, 1))], axis=1)
    p1 = np.concatenate([f.xs + f.vs, np.ones((k, 1))], axis=1)
    return p0, p1


def _tangents(f: TubeFamily) -> np.ndarray:
    d = np.concatenate([f.vs, np.ones((len(f), 1))], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# beyond this many overlapping boxes only pairs are tried
_TRIPLE_LIMIT = 48


def _best_depth(lo: np.ndarray, hi: np.ndarray, seed_idx: int | None):
    """Point covered by the most of the boxes [lo_k, hi_k].

    For the optimal subset the componentwise max of its lower corners lies
    in every member, and each coordinate of that max is attained by one of
    at most n members; candidates are such maxima over subsets of size at
    most three (together with the seed box when given).
    """
    k = len(lo)
    if k == 0:
        return None, 0
    idx = range(k)
    if seed_idx is not None:
        combos = [(seed_idx,)] + [(seed_idx, j) for j in idx if j != seed_idx]
        if k <= _TRIPLE_LIMIT:
            others = [j for j in idx if j != seed_idx]
            combos += [(seed_idx, a, b) for a, b in itertools.combinations(others, 2)]
    else:
        combos = [(a,) for a in idx] + list(itertools.combinations(idx, 2))
    best_pt, best = None, 0
    for start in range(0, len(combos), 4096):
        chunk = combos[start : start + 4096]
        cands = np.array([lo[list(c)].max(axis=0) for c in chunk])
        inside = np.all((cands[:, None, :] >= lo[None]) & (cands[:, None, :] <= hi[None]), axis=2)
        depth = inside.sum(axis=1)
        j = int(np.argmax(depth))
        if depth[j] > best:
            best, best_pt = int(depth[j]), inside[j]
    return best_pt, best


def _frames(f: TubeFamily, budget: int, rng: np.random.Generator, partners: int):
    """(seed tube, axes) pairs: each tube alone, then with its nearest partners."""
    tang = _tangents(f)
    mids = np.concatenate([f.xs + f.vs / 2.0, np.full((len(f), 1), 0.5)], axis=1)
    order = np.arange(len(f)) if len(f) <= budget else np.sort(rng.choice(len(f), budget, replace=False))
    frames = []
    for i in order:
        frames.append((int(i), orthonormal_completion(tang[i][None]), True))
    for i in order:
        if len(f) < 2:
            break
        dist = segment_distances(f.xs[i], f.vs[i], f.xs, f.vs)
        dist[i] = np.inf
        for j in np.argsort(dist, kind="stable")[:partners]:
            for other in (mids[j] - mids[i], tang[j]):
                basis = orthonormal_completion(np.vstack([tang[i], other]))
                if abs(basis[1] @ other) > 1e-9 * max(np.linalg.norm(other), 1e-300):
                    frames.append((int(i), basis, False))
    return frames


def plate_number(
    f: TubeFamily,
    search_budget: int = 256,
    seed: int = 0,
    C: float = PLATE_C,
    partners: int = 4,
    witnesses=(),
) -> PlateResult:
    """Certified lower bound for sup_R |{l : T_l in R}| / (w / delta).

    R ranges over C x Cw x C delta x ... plates.  Candidate frames put the
    long axis along a tube and the w-axis either anywhere (w = delta) or
    toward a nearby tube (w swept dyadically).  In each frame the set of
    admissible plate centres for one tube is an axis-aligned box, so the
    best plate is a point of maximal depth among those boxes.  Extra
    ``witnesses`` (pairs of box and w) are re-scored and compete, which
    makes the result monotone under adding tubes.
    """
    if len(f) == 0:
        raise DomainError("plate number of an empty family")
    delta = f.delta
    rng = np.random.default_rng(seed)
    p0, p1 = _endpoints(f)
    ws = [delta * 2.0**k for k in range(int(math.floor(math.log2(1.0 / delta))) + 1)]
    best: PlateResult | None = None

    def consider(box, w):
        nonlocal best
        value, count = plate_value(f, box, w)
        key = (value, -w)
        if best is None or key > (best.value, -best.w):
            best = PlateResult(value, box, w, count, delta, C)

    for box, w in witnesses:
        consider(box, w)
    for i, axes, single in _frames(f, search_budget, rng, partners):
        a0 = p0 @ axes.T
        a1 = p1 @ axes.T
        for w in [delta] if single else ws:
            half = np.full(f.n, C * delta / 2.0)
            half[0] = C / 2.0
            half[1] = C * w / 2.0
            shrunk = half - delta
            lo = np.maximum(a0, a1) - shrunk
            hi = np.minimum(a0, a1) + shrunk
            ok = np.all(lo <= hi, axis=1)
            if not ok[i]:
                continue
            # only boxes overlapping the seed's can share a centre with it
            near = ok & np.all((lo <= hi[i]) & (hi >= lo[i]), axis=1)
            cand = np.nonzero(near)[0]
            if best is not None and len(cand) / (w / delta) <= best.value:
                continue
            seed_pos = int(np.searchsorted(cand, i))
            members, depth = _best_depth(lo[cand], hi[cand], seed_pos)
            if depth == 0:
                continue
            sel = cand[members]
            centre_local = (lo[sel].max(axis=0) + hi[sel].min(axis=0)) / 2.0
            consider(plate_box(centre_local @ axes, axes, w, delta, C), w)
    return best


# -- hairbrush ---------------------------------------------------------------

def hairbrush(f: TubeFamily, l0: LineSeg, sigma: float, slack_dyadic: int = 1) -> TubeFamily:
    """Tubes meeting T_{l0} whose angle delta + |v - v0| is within 2^{+-slack} of sigma."""
    if len(f) == 0:
        return f
    dist = segment_distances(l0.xa, l0.va, f.xs, f.vs)
    ang = f.delta + np.linalg.norm(f.vs - l0.va, axis=1)
    lo, hi = sigma * 2.0**-slack_dyadic, sigma * 2.0**slack_dyadic
    keep = (dist <= 2.0 * f.delta) & (ang >= lo) & (ang <= hi)
    return f.subset(np.nonzero(keep)[0])


# -- dyadic decomposition ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class DyadicBin:
    line: LineSeg
    mu: int
    sigma: float
    cells: np.ndarray

    @property
    def mu_level(self) -> int:
        return int(round(math.log2(self.mu)))

    def to_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "cells": int(len(self.cells))}


def dyadic_decompose(l: LineSeg, f: TubeFamily, E_field: ScalarField) -> list[DyadicBin]:
    """Split the cells of T_l in E by multiplicity level and dominant angle.

    At a cell with M tubes of f through it (l included), mu = 2^ceil(log2 M)
    and sigma is the smallest delta 2^j (capped at 1) such that tubes with
    delta + |v - v(l)| <= sigma make up at least half of M.
    """
    delta = f.delta
    spec = E_field.spec
    cells = tube_cell_indices(l, delta, spec)
    cells = cells[E_field.values.ravel()[cells] != 0]
    if len(cells) == 0:
        return []
    pts = spec.cell_centers_flat(cells)
    near = np.nonzero(segment_distances(l.xa, l.va, f.xs, f.vs) <= 2.0 * delta)[0]
    inside = np.zeros((len(near), len(cells)), dtype=bool)
    for r, k in enumerate(near):
        inside[r] = point_segment_distance(pts, f.xs[k], f.vs[k]) <= delta
    if f.index_of(l) is None:
        inside = np.vstack([inside, np.ones(len(cells), dtype=bool)])
        ang = np.append(delta + np.linalg.norm(f.vs[near] - l.va, axis=1), delta)
    else:
        ang = delta + np.linalg.norm(f.vs[near] - l.va, axis=1)
    # l's own cells always count it, even where rounding says otherwise
    M = np.maximum(inside.sum(axis=0), 1)
    mu_level = np.ceil(np.log2(M) - 1e-12).astype(int)
    top = int(math.ceil(math.log2(1.0 / delta) - 1e-12))
    sigma_level = np.full(len(cells), top)
    for j in range(top, -1, -1):
        within = (inside & (ang <= delta * 2.0**j + 1e-15)[:, None]).sum(axis=0)
        sigma_level = np.where(2 * within >= M, j, sigma_level)
    bins = []
    keys = mu_level * (top + 1) + sigma_level
    for key in np.unique(keys):
        sel = cells[keys == key]
        mu_l, sg_l = divmod(int(key), top + 1)
        bins.append(DyadicBin(l, 2**mu_l, min(delta * 2.0**sg_l, 1.0), sel))
    return bins


# -- two ends ----------------------------------------------------------------

@dataclass(frozen=True)
class TwoEndsParams:
    N: int = 10
    epsilon: float = 0.1
    slack: float = 2.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise DomainError("N must be an integer >= 2")
        if self.slack <= 0:
            raise DomainError("slack must be positive")


def two_ends_profile(t: Tube, E_field: ScalarField, params: TwoEndsParams) -> tuple[np.ndarray, np.ndarray]:
    """Ball centres along the axis and |T cap E cap B(x, delta^{1/N})| for each."""
    delta = t.delta
    spec = E_field.spec
    radius = delta ** (1.0 / params.N)
    cells = tube_cell_indices(t.line, delta, spec)
    cells = cells[E_field.values.ravel()[cells] != 0]
    steps = max(1, int(math.ceil(t.line.length / (radius / 2.0))))
    ts = np.linspace(0.0, 1.0, steps + 1)
    centres = np.concatenate([t.line.xa + np.outer(ts, t.line.va), ts[:, None]], axis=1)
    if len(cells) == 0:
        return centres, np.zeros(len(ts))
    pts = spec.cell_centers_flat(cells)
    d2 = ((pts[None, :, :] - centres[:, None, :]) ** 2).sum(axis=2)
    return centres, (d2 <= radius * radius).sum(axis=1) * spec.cell_volume


def two_ends_check(t: Tube, E_field: ScalarField, params: TwoEndsParams, lam: float) -> bool:
    """True iff no ball of radius delta^{1/N} centred on the axis holds more
    than delta^{eps/2N} lam |T_l| slack of T_l cap E (|T_l| in voxels)."""
    if not lam > 0:
        raise DomainError("lambda must be positive")
    _, mass = two_ends_profile(t, E_field, params)
    tube_cells = len(tube_cell_indices(t.line, t.delta, E_field.spec))
    tube_measure = tube_cells * E_field.spec.cell_volume
    bound = t.delta ** (params.epsilon / (2 * params.N)) * lam * tube_measure * params.slack
    return bool(np.all(mass <= bound))


# -- bilinear ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BilinearResult:
    E1: TubeFamily
    E2: TubeFamily
    norm: float
    cell1: tuple
    cell2: tuple
    separated_pairs: int

    def to_dict(self) -> dict:
        return {
            "norm": self.norm,
            "size1": len(self.E1),
            "size2": len(self.E2),
            "cell1": list(self.cell1),
            "cell2": list(self.cell2),
            "separated_pairs": self.separated_pairs,
        }


def direction_cells(f: TubeFamily, c0: float):
    """Group slopes into cubes of diameter c0/4; returns (keys, inverse, side)."""
    side = (c0 / 4.0) / math.sqrt(f.n - 1)
    q = np.floor(f.vs / side).astype(np.int64)
    keys, inverse = np.unique(q, axis=0, return_inverse=True)
    return keys, inverse.ravel(), side


def separated(keys: np.ndarray, side: float, c0: float) -> np.ndarray:
    """Boolean matrix: cube pairs at distance >= c0/2."""
    gap = np.maximum(np.abs(keys[:, None, :] - keys[None, :, :]) - 1, 0) * side
    return np.sqrt((gap**2).sum(axis=2)) >= c0 / 2.0 - 1e-12


def _sparse_counts(f: TubeFamily, spec: GridSpec, members: np.ndarray):
    cells = np.concatenate([tube_cell_indices(f.line(i), f.delta, spec) for i in members])
    return np.unique(cells, return_counts=True)


def bilinear_split(
    f: TubeFamily,
    c0: float = 0.25,
    profile: ExponentProfile | None = None,
    cell: float | None = None,
) -> BilinearResult:
    """Separated pair of direction cubes maximising ||F1 F2||_{p'/2}^{1/2}.

    F_i is the multiplicity function of the tubes whose slopes lie in the
    i-th cube; pairs count as separated when the cubes are at least c0/2
    apart.  Ties go to the lexicographically smallest pair of cube keys.
    """
    if not 0.0 < c0 < 1.0:
        raise DomainError("c0 must lie in (0, 1)")
    if len(f) == 0:
        raise DomainError("bilinear split of an empty family")
    profile = profile or squid_profile(f.n)
    s = float(profile.p_conj) / 2.0
    spec = GridSpec.standard(f.n, f.delta, cell)
    keys, inverse, side = direction_cells(f, c0)
    sep = np.triu(separated(keys, side, c0), 1)
    pairs = np.argwhere(sep)
    if len(pairs) == 0:
        raise DomainError("no separated pair of direction cells")
    # entries (cell, group, count) sorted by cell; self-join within equal cells
    cell_ids, group_ids, counts = [], [], []
    for g in range(len(keys)):
        c, k = _sparse_counts(f, spec, np.nonzero(inverse == g)[0])
        cell_ids.append(c)
        group_ids.append(np.full(len(c), g))
        counts.append(k)
    cell_ids = np.concatenate(cell_ids)
    group_ids = np.concatenate(group_ids)
    counts = np.concatenate(counts).astype(float)
    order = np.lexsort((group_ids, cell_ids))
    cell_ids, group_ids, counts = cell_ids[order], group_ids[order], counts[order]
    G = len(keys)
    acc = np.zeros(G * G)
    for off in range(1, G):
        same = cell_ids[off:] == cell_ids[:-off]
        if not same.any():
            break
        a = group_ids[:-off][same]
        b = group_ids[off:][same]
        np.add.at(acc, a * G + b, (counts[:-off][same] * counts[off:][same]) ** s)
    scores = acc[pairs[:, 0] * G + pairs[:, 1]]
    best = int(np.argmax(scores))  # first maximum = lexicographically smallest
    a, b = pairs[best]
    norm = float((scores[best] * spec.cell_volume) ** (1.0 / (2.0 * s))) if scores[best] > 0 else 0.0
    return BilinearResult(
        f.subset(np.nonzero(inverse == a)[0]),
        f.subset(np.nonzero(inverse == b)[0]),
        norm,
        tuple(int(c) for c in keys[a]),
        tuple(int(c) for c in keys[b]),
        int(len(pairs)),
    )


def bilinear_norm(F1: ScalarField, F2: ScalarField, p_conj: float) -> float:
    """||F1 F2||_{p'/2}^{1/2} on a common grid (quasi-norm when p' < 2)."""
    s = p_conj / 2.0
    prod = np.abs(F1.values.astype(float) * F2.values.astype(float))
    total = float(np.sum(prod**s)) * F1.spec.cell_volume
    return total ** (1.0 / (2.0 * s)) if total > 0 else 0.0


# -- Cordoba -----------------------------------------------------------------

@dataclass(frozen=True)
class CordobaResult:
    measured_l2_sq: float
    incidence_bound: float
    intersecting_pairs: int

    def to_dict(self) -> dict:
        return {
            "measured_l2_sq": self.measured_l2_sq,
            "incidence_bound": self.incidence_bound,
            "intersecting_pairs": self.intersecting_pairs,
        }


def incidence_bound(f: TubeFamily) -> tuple[float, int]:
    """sum_{l, l'} |T_l cap T_l'| with each term bounded: the exact tube
    volume on the diagonal, the intersection surrogate for distinct tubes
    whose axes come within 2 delta, and 0 for tubes that cannot meet."""
    delta = f.delta
    total = 0.0
    pairs = 0
    lines = f.lines
    for i, l in enumerate(lines):
        total += Tube(l, delta).full_volume
        if i + 1 == len(f):
            continue
        d = segment_distances(f.xs[i], f.vs[i], f.xs[i + 1 :], f.vs[i + 1 :])
        for j in np.nonzero(d <= 2.0 * delta)[0]:
            total += 2.0 * tube_intersection_bound(l, lines[i + 1 + j], delta)
            pairs += 1
    return total, pairs


def cordoba_l2(
    f: TubeFamily,
    restrict_to: ScalarField | None = None,
    cell: float | None = None,
    budget: int | None = None,
) -> CordobaResult:
    """||sum chi_{T_l}||_2^2 on the grid next to the pairwise incidence bound."""
    if len(f) == 0:
        raise DomainError("Cordoba bound of an empty family")
    if restrict_to is None:
        spec = GridSpec.standard(f.n, f.delta, cell)
        hist = multiplicity_histogram(f, spec, budget)
        measured = norm_from_histogram(hist, 2.0, spec.cell_volume) ** 2
    else:
        mult = multiplicity_field(f, restrict_to.spec, budget)
        vals = mult.values.astype(np.int64) * (restrict_to.values != 0)
        measured = float(np.sum(vals * vals)) * restrict_to.spec.cell_volume
    bound, pairs = incidence_bound(f)
    return CordobaResult(measured, bound, pairs)


# -- slabs -------------------------------------------------------------------

def _occupied_centres(E_field: ScalarField) -> np.ndarray:
    flat = np.flatnonzero(E_field.values)
    return E_field.spec.cell_centers_flat(flat)


def slab_mass(E_field: ScalarField, s: Slab) -> float:
    """|E cap S| by counting occupied cells whose centres lie in S."""
    pts = _occupied_centres(E_field)
    if len(pts) == 0:
        return 0.0
    return int(np.count_nonzero(s.contains(pts))) * E_field.spec.cell_volume


@dataclass(frozen=True, eq=False)
class SlabResult:
    slab: Slab
    theta: float
    mass: float
    score: float

    def to_dict(self) -> dict:
        return {"theta": self.theta, "mass": self.mass, "score": self.score, "slab": self.slab.to_dict()}


def _candidate_planes(f: TubeFamily, max_seeds: int, partners: int):
    tang = _tangents(f)
    mids = np.concatenate([f.xs + f.vs / 2.0, np.full((len(f), 1), 0.5)], axis=1)
    n = f.n
    seeds = range(min(len(f), max_seeds))
    planes = []
    for i in seeds:
        if len(f) > 1:
            dist = segment_distances(f.xs[i], f.vs[i], f.xs, f.vs)
            dist[i] = np.inf
            for j in np.argsort(dist, kind="stable")[:partners]:
                for other in (tang[j], mids[j] - mids[i]):
                    basis = orthonormal_completion(np.vstack([tang[i], other]))
                    if abs(basis[1] @ other) > 1e-9 * max(np.linalg.norm(other), 1e-300):
                        planes.append((mids[i], basis))
        for a in range(n - 1):
            planes.append((mids[i], orthonormal_completion(np.vstack([tang[i], np.eye(n)[a]]))))
    return planes


def best_slab_search(
    E_field: ScalarField,
    thetas,
    candidates_from: TubeFamily,
    max_seeds: int = 64,
    partners: int = 4,
) -> SlabResult:
    """Slab maximising |E cap S| / theta^{1/2} over planes spanned by a tube
    and a partner tube (or a coordinate axis), at each theta."""
    if len(candidates_from) == 0:
        raise DomainError("slab search needs a nonempty family")
    thetas = sorted(float(t) for t in thetas)
    if not thetas or thetas[0] <= 0:
        raise DomainError("thetas must be positive")
    pts = _occupied_centres(E_field)
    vol = E_field.spec.cell_volume
    best = None
    for point, basis in _candidate_planes(candidates_from, max_seeds, partners):
        normal = basis[2:]
        dist = np.linalg.norm((pts - point) @ normal.T, axis=1) if len(pts) else np.zeros(0)
        for theta in thetas:
            mass = int(np.count_nonzero(dist <= theta / 2.0)) * vol
            score = mass / math.sqrt(theta)
            if best is None or score > best[0]:
                best = (score, point, normal, theta, mass)
    score, point, normal, theta, mass = best
    slab = Slab(point, normal, theta)
    return SlabResult(slab, theta, slab_mass(E_field, slab), score)
