"""Seeded generators of tube families and test fields.

Every generator is a pure function of its parameters and seed.  Positions
are always snapped to the delta-lattice in the unit ball, so distinct
positions are automatically delta-separated; directions come from the
delta-lattice net of slopes.

Generator specs used by the CLI and by ``sweep`` look like::

    bush:count=64,seed=3
    hairbrush:sigma=0.25,count=64
    single:v=0.5;0

Vector values separate their components with ``;``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .family import TubeFamily, lattice_points
from .geom import LineSeg, check_dim
from .raster import GridSpec, ScalarField


class _Lattice:
    """The delta-lattice in the open unit ball with nearest-point lookup."""

    def __init__(self, delta: float, n: int):
        self.delta = delta
        self.points = lattice_points(delta, n)
        self._tree = cKDTree(self.points)

    def snap(self, p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        _, idx = self._tree.query(p)
        return self.points[idx]

    def nearest_k(self, p: np.ndarray, k: int):
        k = min(k, len(self.points))
        _, idx = self._tree.query(p, k=k)
        return np.atleast_1d(idx)


def _vec(v, n: int, name: str = "v") -> np.ndarray:
    if v is None:
        return np.zeros(n - 1)
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.shape != (n - 1,):
        raise DomainError(f"{name} needs {n - 1} components, got {a.size}")
    return a


def _check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    return delta


def _label(name: str, **params) -> str:
    parts = []
    for k in sorted(params):
        v = params[k]
        if isinstance(v, (list, tuple, np.ndarray)):
            v = ";".join(repr(float(c)) for c in np.ravel(v))
        parts.append(f"{k}={v}")
    return name + (":" + ",".join(parts) if parts else "")


def gen_single(delta: float, v=None, x=None, seed: int = 0, n: int = 3) -> TubeFamily:
    """One tube, vertical by default (the seed is recorded only)."""
    delta = _check_delta(delta)
    n = check_dim(n)
    v = _vec(v, n)
    x = _vec(x, n, "x")
    LineSeg(x, v)  # domain checks on |x|, |v|
    return TubeFamily(delta, x[None], v[None], 1, seed, _label("single", v=v, x=x))


def gen_ball(delta: float, n: int = 3, cell: float | None = None, center=None) -> ScalarField:
    """Indicator of the closed delta-ball around (0, ..., 0, 1/2) on the standard grid."""
    delta = _check_delta(delta)
    n = check_dim(n)
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if center is None:
        c[-1] = 0.5
    spec = GridSpec.standard(n, delta, cell)
    lo = np.asarray(spec.lo)
    # only touch the cells around the ball
    i0 = np.maximum(np.floor((c - delta - lo) / spec.cell).astype(int), 0)
    i1 = np.minimum(np.ceil((c + delta - lo) / spec.cell).astype(int) + 1, spec.dims)
    vals = np.zeros(spec.dims, dtype=np.uint8)
    axes = [lo[a] + (np.arange(i0[a], i1[a]) + 0.5) * spec.cell for a in range(n)]
    grids = np.meshgrid(*axes, indexing="ij")
    d2 = sum((g - c[a]) ** 2 for a, g in enumerate(grids))
    vals[tuple(slice(i0[a], i1[a]) for a in range(n))] = d2 <= delta * delta
    return ScalarField(spec, vals)


def default_center(delta: float, n: int) -> np.ndarray:
    """Centre of the standard-grid cell at (0, ..., 0, 1/2)."""
    spec = GridSpec.standard(n, delta)
    p = np.zeros(n)
    p[-1] = 0.5
    idx = spec.index_of(p)[0]
    return np.asarray(spec.lo) + (idx + 0.5) * spec.cell


def gen_bush(delta: float, count: int, center=None, seed: int = 0, n: int = 3) -> TubeFamily:
    """``count`` tubes through a common point with distinct lattice directions."""
    delta = _check_delta(delta)
    n = check_dim(n)
    count = int(count)
    if count < 1:
        raise DomainError("bush needs count >= 1")
    c = default_center(delta, n) if center is None else np.asarray(center, dtype=float)
    if c.shape != (n,) or not 0.0 <= c[-1] <= 1.0:
        raise DomainError("bush centre must be a point of R^n with 0 <= t <= 1")
    dirs = lattice_points(delta, n)
    if count > len(dirs):
        raise DomainError(f"bush count {count} exceeds the {len(dirs)} available directions")
    rng = np.random.default_rng(seed)
    vs = dirs[np.sort(rng.choice(len(dirs), size=count, replace=False))]
    xs = _Lattice(delta, n).snap(c[:-1][None] - vs * c[-1])
    return TubeFamily(delta, xs, vs, 1, seed, _label("bush", count=count, seed=seed))


def gen_hairbrush(
    delta: float,
    sigma: float,
    count: int,
    stem: LineSeg | None = None,
    seed: int = 0,
    n: int = 3,
) -> TubeFamily:
    """Bristles crossing the stem at angle about sigma, feet spread along it.

    Bristle slopes are lattice directions v with sigma/2 <= |v - v_stem| <=
    2 sigma - delta, so delta + |v - v_stem| lies within a factor two of
    sigma.  Feet sit at evenly spaced heights (at most 1/delta of them, so
    consecutive feet are at least delta apart) and bristles are dealt to
    them in turn; each bristle passes exactly through its foot.  A slope
    whose position would come closer than delta to an earlier bristle's is
    skipped in favour of the next one, and a foot with no usable slope left
    drops out.  The stem itself is not part of the family.
    """
    delta = _check_delta(delta)
    n = check_dim(n)
    count = int(count)
    if count <= 0:
        raise DomainError("hairbrush needs count >= 1")
    if not delta <= sigma <= 1.0:
        raise DomainError(f"sigma must lie in [delta, 1], got {sigma}")
    stem = stem or LineSeg(np.zeros(n - 1), np.zeros(n - 1))
    dirs = lattice_points(delta, n)
    gap = np.linalg.norm(dirs - stem.va, axis=1)
    pool = dirs[(gap >= sigma / 2.0) & (gap <= 2.0 * sigma - delta)]
    if count > len(pool):
        raise DomainError(f"hairbrush count {count} exceeds the {len(pool)} directions at angle ~{sigma}")
    pool = pool[np.random.default_rng(seed).permutation(len(pool))]
    used = np.zeros(len(pool), dtype=bool)
    nfeet = min(count, int(math.floor(1.0 / delta)))
    feet = list((np.arange(nfeet) + 0.5) / nfeet)
    xs, vs = [], []
    j = 0
    while len(xs) < count:
        if not feet:
            raise DomainError(f"hairbrush: only {len(xs)} separated bristles fit, {count} requested")
        j %= len(feet)
        t = feet[j]
        cand = stem.xa + stem.va * t - pool * t
        ok = ~used & (np.linalg.norm(cand, axis=1) < 1.0)
        if xs:
            d = np.linalg.norm(cand[:, None, :] - np.array(xs)[None], axis=2)
            ok &= np.all((d >= delta) | (d == 0.0), axis=1)
        hit = np.flatnonzero(ok)
        if len(hit) == 0:
            feet.pop(j)
            continue
        used[hit[0]] = True
        xs.append(cand[hit[0]])
        vs.append(pool[hit[0]])
        j += 1
    return TubeFamily(delta, np.array(xs), np.array(vs), 1, seed, _label("hairbrush", sigma=sigma, count=count, seed=seed))


def gen_slab_family(delta: float, rho: float, seed: int = 0, C: float = 1.0, n: int = 3) -> TubeFamily:
    """Directions in a C x C rho x C delta x ... box of slopes, random positions."""
    delta = _check_delta(delta)
    n = check_dim(n)
    if not delta <= rho <= 1.0:
        raise DomainError(f"rho must lie in [delta, 1], got {rho}")
    if C <= 0:
        raise DomainError("C must be positive")
    dirs = lattice_points(delta, n)
    half = np.full(n - 1, C * delta / 2.0)
    half[0] = C / 2.0
    half[1] = C * rho / 2.0
    vs = dirs[np.all(np.abs(dirs) <= half + 1e-12, axis=1)]
    rng = np.random.default_rng(seed)
    pos = lattice_points(delta, n)
    xs = pos[rng.integers(0, len(pos), size=len(vs))]
    return TubeFamily(delta, xs, vs, 1, seed, _label("slab", rho=rho, C=C, seed=seed))


def zorder_key(vs: np.ndarray, bits: int) -> np.ndarray:
    """Position in [0, 1) of each slope under iterated bisection of [-1, 1]^{n-1}.

    Bit j of every coordinate (coarsest first) is interleaved, so slopes in
    the same dyadic sub-cube get keys in the same dyadic interval.
    """
    vs = np.atleast_2d(vs)
    d = vs.shape[1]
    q = np.clip(np.floor((vs + 1.0) / 2.0 * 2**bits), 0, 2**bits - 1).astype(np.int64)
    key = np.zeros(len(vs))
    scale = 0.5
    for b in range(bits - 1, -1, -1):
        for j in range(d):
            key += ((q[:, j] >> b) & 1) * scale
            scale /= 2.0
    return key


def gen_sticky(delta: float, m: int = 1, seed: int = 0, n: int = 3) -> TubeFamily:
    """Every lattice slope, its lines through the vertical axis at heights
    chosen by iterated bisection of the slope.

    Slopes in a common dyadic cube of side 2^-j cross the axis within a
    height window of length about 2^{-j(n-1)}, so nearby directions share
    nearby positions.  With m > 1 the j-th copy is shifted by j/m in height;
    if two copies snap to the same position the later one takes the nearest
    unused lattice point.  ``seed`` rotates all heights by a seeded offset.
    """
    delta = _check_delta(delta)
    n = check_dim(n)
    m = int(m)
    if m < 1:
        raise DomainError("m must be >= 1")
    vs = lattice_points(delta, n)
    bits = int(math.ceil(math.log2(2.0 / delta))) + 1
    key = zorder_key(vs, bits)
    if seed:
        key = (key + np.random.default_rng(seed).random()) % 1.0
    lat = _Lattice(delta, n)
    all_x, all_v = [], []
    for j in range(m):
        t = (key + j / m) % 1.0
        all_x.append(lat.snap(-vs * t[:, None]))
        all_v.append(vs)
    xs = np.concatenate(all_x)
    vv = np.concatenate(all_v)
    if m > 1:
        xs = _dedupe_positions(xs, vv, len(vs), m, lat)
    return TubeFamily(delta, xs, vv, m, seed, _label("sticky", m=m, seed=seed))


def _dedupe_positions(xs, vv, ndir, m, lat: _Lattice):
    """Give each (slope, copy) a distinct lattice position, nearest first."""
    xs = xs.copy()
    for i in range(ndir):
        rows = [i + j * ndir for j in range(m)]
        used = set()
        for r in rows:
            key = tuple(np.round(xs[r] / lat.delta).astype(np.int64))
            if key in used:
                for cand in lat.nearest_k(xs[r], 8 * m + 1):
                    p = lat.points[cand]
                    ck = tuple(np.round(p / lat.delta).astype(np.int64))
                    if ck not in used:
                        xs[r] = p
                        key = ck
                        break
            used.add(key)
    return xs


def gen_random(delta: float, m: int = 1, seed: int = 0, n: int = 3) -> TubeFamily:
    """Every lattice slope with m distinct uniformly random lattice positions."""
    delta = _check_delta(delta)
    n = check_dim(n)
    m = int(m)
    if m < 1:
        raise DomainError("m must be >= 1")
    vs = lattice_points(delta, n)
    pos = lattice_points(delta, n)
    rng = np.random.default_rng(seed)
    picks = np.empty((len(vs), m), dtype=np.int64)
    for i in range(len(vs)):
        picks[i] = rng.choice(len(pos), size=m, replace=False) if m > 1 else rng.integers(len(pos))
    xs = pos[picks.T.ravel()]
    return TubeFamily(delta, xs, np.tile(vs, (m, 1)), m, seed, _label("random", m=m, seed=seed))


# -- spec grammar -----------------------------------------------------------

def _parse_value(text: str):
    if ";" in text:
        return [float(c) for c in text.split(";") if c]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    if "/" in text:
        a, b = text.split("/", 1)
        return float(a) / float(b)
    return text


def parse_spec(spec: str) -> tuple[str, dict]:
    """'name:key=value,key=value' -> (name, params)."""
    name, _, rest = spec.strip().partition(":")
    if not name:
        raise DomainError(f"empty generator spec {spec!r}")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq or not key:
            raise DomainError(f"bad generator parameter {item!r} in {spec!r}")
        params[key.strip()] = _parse_value(value.strip())
    return name, params


def _hairbrush_from_spec(delta, n, stem_x=None, stem_v=None, k=None, count=None, **kw):
    stem = None
    if stem_x is not None or stem_v is not None:
        stem = LineSeg(_vec(stem_x, n, "stem_x"), _vec(stem_v, n, "stem_v"))
    return gen_hairbrush(delta, count=count if count is not None else k, stem=stem, n=n, **kw)


def _bush_from_spec(delta, n, k=None, count=None, **kw):
    return gen_bush(delta, count=count if count is not None else k, n=n, **kw)


GENERATORS = {
    "single": lambda delta, n, **kw: gen_single(delta, n=n, **kw),
    "bush": _bush_from_spec,
    "hairbrush": _hairbrush_from_spec,
    "slab": lambda delta, n, **kw: gen_slab_family(delta, n=n, **kw),
    "sticky": lambda delta, n, **kw: gen_sticky(delta, n=n, **kw),
    "random": lambda delta, n, **kw: gen_random(delta, n=n, **kw),
}


def generate(spec: str, delta: float, n: int = 3) -> TubeFamily:
    """Build the family described by a generator spec at scale delta."""
    name, params = parse_spec(spec)
    if name not in GENERATORS:
        raise DomainError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}")
    params.pop("delta", None)
    n = int(params.pop("n", n))
    try:
        return GENERATORS[name](delta, n, **params)
    except TypeError as exc:
        raise DomainError(f"bad parameters for {name}: {exc}") from exc
