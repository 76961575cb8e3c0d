"""Lines, tubes, boxes and slabs in R^n.

A line segment is parameterized by its base position ``x`` and slope ``v``
(both in the open unit ball of R^{n-1}) as ``{(x + v t, t) : t in [0, 1]}``.
The last coordinate is always the "time" axis ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from .errors import DomainError

# Default constant C for C x Cw x Cdelta x ... x Cdelta plates.
PLATE_C = 4.0

# c_n in |T_l cap T_l'| <~ c_n delta^n / (delta + |v(l) - v(l')|), frozen from
# calibrate_intersection_constant(n, 2**-6, cells_per_delta) with 16, 12, 6, 4
# cells per delta for n = 3..6 (voxel counting on the transverse pair
# v = +-e_1/2 crossing at t = 1/2).
INTERSECTION_CONSTANTS = {
    3: 6.7960,
    4: 7.9839,
    5: 8.5659,
    6: 8.2678,
}


def check_dim(n: int) -> int:
    if int(n) != n or n < 3:
        raise DomainError(f"ambient dimension must be an integer >= 3, got {n}")
    return int(n)


def unit_ball_volume(k: int) -> float:
    """Volume of the unit ball in R^k."""
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def cross_section_constant(n: int) -> float:
    """Volume of the unit (n-1)-ball, so that |T_l| ~ c delta^{n-1} len(l)."""
    return unit_ball_volume(n - 1)


def transverse_intersection_volume(n: int, sin_angle: float) -> float:
    """Volume of the intersection of two unit-radius infinite cylinders in R^n
    whose axes cross at an angle with the given sine."""
    return 8.0 * unit_ball_volume(n - 2) / (n * sin_angle)


@dataclass(frozen=True)
class LineSeg:
    x: tuple
    v: tuple

    def __post_init__(self):
        x = tuple(float(c) for c in self.x)
        v = tuple(float(c) for c in self.v)
        if len(x) != len(v) or len(x) < 2:
            raise DomainError("x and v must have the same length n-1 >= 2")
        if math.hypot(*x) >= 1.0:
            raise DomainError(f"|x| must be < 1, got {math.hypot(*x)}")
        if math.hypot(*v) >= 1.0:
            raise DomainError(f"|v| must be < 1, got {math.hypot(*v)}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return len(self.x) + 1

    @property
    def xa(self) -> np.ndarray:
        return np.asarray(self.x)

    @property
    def va(self) -> np.ndarray:
        return np.asarray(self.v)

    @property
    def length(self) -> float:
        return math.sqrt(1.0 + sum(c * c for c in self.v))

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return point_at(self, 0.0), point_at(self, 1.0)

    def tangent(self) -> np.ndarray:
        """Unit vector along the segment."""
        d = np.append(self.va, 1.0)
        return d / np.linalg.norm(d)

    def midpoint(self) -> np.ndarray:
        return point_at(self, 0.5)


@dataclass(frozen=True)
class Tube:
    line: LineSeg
    delta: float

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def volume(self) -> float:
        """Analytic volume of the delta-neighbourhood, end caps ignored."""
        n = self.line.n
        return cross_section_constant(n) * self.delta ** (n - 1) * self.line.length

    @property
    def full_volume(self) -> float:
        """Exact volume: the cylinder plus the two half-ball end caps."""
        return self.volume + unit_ball_volume(self.line.n) * self.delta**self.line.n


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray
    half_lengths: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.axes, dtype=float)
        h = np.asarray(self.half_lengths, dtype=float)
        n = c.shape[0]
        if a.shape != (n, n) or h.shape != (n,):
            raise DomainError("box needs n axes of length n and n half-lengths")
        if np.max(np.abs(a @ a.T - np.eye(n))) > 1e-12:
            raise DomainError("box axes are not orthonormal")
        if np.any(h <= 0):
            raise DomainError("box half-lengths must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axes", a)
        object.__setattr__(self, "half_lengths", h)

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        local = (p - self.center) @ self.axes.T
        return np.all(np.abs(local) <= self.half_lengths, axis=1)

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "axes": self.axes.tolist(),
            "half_lengths": self.half_lengths.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OrientedBox":
        return cls(np.array(d["center"]), np.array(d["axes"]), np.array(d["half_lengths"]))


def plate_box(center, axes, w: float, delta: float, C: float = PLATE_C) -> OrientedBox:
    """A C x Cw x Cdelta x ... x Cdelta rectangle (full side lengths)."""
    axes = np.asarray(axes, dtype=float)
    n = axes.shape[0]
    half = np.full(n, C * delta / 2.0)
    half[0] = C / 2.0
    half[1] = C * w / 2.0
    return OrientedBox(np.asarray(center, dtype=float), axes, half)


@dataclass(frozen=True, eq=False)
class Slab:
    plane_point: np.ndarray
    normal_basis: np.ndarray
    theta: float

    def __post_init__(self):
        p = np.asarray(self.plane_point, dtype=float)
        nb = np.atleast_2d(np.asarray(self.normal_basis, dtype=float))
        n = p.shape[0]
        if nb.shape != (n - 2, n):
            raise DomainError(f"slab needs {n - 2} normal vectors of length {n}")
        if np.max(np.abs(nb @ nb.T - np.eye(n - 2))) > 1e-9:
            raise DomainError("slab normal basis is not orthonormal")
        if self.theta <= 0:
            raise DomainError("slab thickness must be positive")
        object.__setattr__(self, "plane_point", p)
        object.__setattr__(self, "normal_basis", nb)

    @classmethod
    def from_plane(cls, point, u1, u2, theta: float) -> "Slab":
        """Slab around the 2-plane through ``point`` spanned by ``u1``, ``u2``."""
        point = np.asarray(point, dtype=float)
        n = point.shape[0]
        span = orthonormal_completion(np.vstack([u1, u2]))
        return cls(point, span[2:], theta)

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        proj = (p - self.plane_point) @ self.normal_basis.T
        return np.linalg.norm(proj, axis=1) <= self.theta / 2.0

    def to_dict(self) -> dict:
        return {
            "plane_point": self.plane_point.tolist(),
            "normal_basis": self.normal_basis.tolist(),
            "theta": float(self.theta),
        }


def orthonormal_completion(vectors) -> np.ndarray:
    """Gram-Schmidt ``vectors`` (rows) and complete to an orthonormal basis.

    Input rows that are (numerically) dependent on earlier ones are skipped,
    so the first rows of the result span the same flag as the input.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    n = vectors.shape[1]
    basis: list[np.ndarray] = []
    for cand in list(vectors) + list(np.eye(n)):
        w = cand.astype(float).copy()
        for _ in range(2):
            for b in basis:
                w -= (w @ b) * b
        norm = np.linalg.norm(w)
        if norm > 1e-9:
            basis.append(w / norm)
        if len(basis) == n:
            break
    return np.array(basis)


def point_at(l: LineSeg, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    return np.append(l.xa + l.va * t, t)


def angle(l1: LineSeg, l2: LineSeg) -> float:
    """|v(l1) - v(l2)|, the slope-difference proxy for the angle."""
    return float(math.dist(l1.v, l2.v))


def point_segment_distance(p, x, v) -> np.ndarray:
    """Distance from points ``p`` (k x n) to the segment l(x, v)."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    w = p[:, :-1] - x
    t = p[:, -1]
    s = np.clip((w @ v + t) / (1.0 + v @ v), 0.0, 1.0)
    r = w - s[:, None] * v
    return np.sqrt(np.einsum("ij,ij->i", r, r) + (t - s) ** 2)


def tube_contains(tube: Tube, p) -> bool | np.ndarray:
    d = point_segment_distance(p, tube.line.xa, tube.line.va)
    inside = d <= tube.delta
    return bool(inside[0]) if np.ndim(p) == 1 else inside


def segment_distances(x1, v1, xs, vs) -> np.ndarray:
    """Closest distance between l(x1, v1) and each l(xs[i], vs[i])."""
    x1 = np.asarray(x1, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    # P(s) = (x1 + v1 s, s), Q(u) = (x2 + v2 u, u); minimise |r + s d1 - u d2|^2
    r = np.concatenate([x1 - xs, np.zeros((len(xs), 1))], axis=1)
    d1 = np.append(v1, 1.0)
    d2 = np.concatenate([vs, np.ones((len(xs), 1))], axis=1)
    a = d1 @ d1
    b = d2 @ d1
    c = np.einsum("ij,ij->i", d2, d2)
    d = r @ d1
    e = np.einsum("ij,ij->i", d2, r)
    rr = np.einsum("ij,ij->i", r, r)

    def f(s, u):
        return a * s * s - 2 * b * s * u + c * u * u + 2 * d * s - 2 * e * u + rr

    det = a * c - b * b
    with np.errstate(divide="ignore", invalid="ignore"):
        s_int = np.where(det > 1e-14, (b * e - c * d) / det, -1.0)
        u_int = np.where(det > 1e-14, (a * e - b * d) / det, -1.0)
    inside = (s_int >= 0) & (s_int <= 1) & (u_int >= 0) & (u_int <= 1)
    best = np.where(inside, f(s_int, u_int), np.inf)
    for s in (0.0, 1.0):
        u = np.clip((e + b * s) / c, 0.0, 1.0)
        best = np.minimum(best, f(s, u))
    for u in (0.0, 1.0):
        s = np.clip((b * u - d) / a, 0.0, 1.0)
        best = np.minimum(best, f(s, u))
    return np.sqrt(np.maximum(best, 0.0))


def segment_distance(l1: LineSeg, l2: LineSeg) -> float:
    return float(segment_distances(l1.xa, l1.va, l2.xa[None], l2.va[None])[0])


def intersection_constant(n: int) -> float:
    n = check_dim(n)
    if n in INTERSECTION_CONSTANTS:
        return INTERSECTION_CONSTANTS[n]
    # beyond the calibrated table: analytic value for the calibration pair
    return transverse_intersection_volume(n, 0.8)


def tube_intersection_bound(l1: LineSeg, l2: LineSeg, delta: float) -> float:
    """Upper-bound surrogate c_n delta^n / (delta + |v(l1) - v(l2)|)."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    n = l1.n
    return intersection_constant(n) * delta**n / (delta + angle(l1, l2))


def box_contains_tube(r: OrientedBox, t: Tube) -> bool:
    """Certificate that T_l lies in R: both endpoints inside R shrunk by delta."""
    shrunk = r.half_lengths - t.delta
    if np.any(shrunk < 0):
        return False
    p0, p1 = t.line.endpoints()
    local = (np.vstack([p0, p1]) - r.center) @ r.axes.T
    return bool(np.all(np.abs(local) <= shrunk))


def boxes_contain_tubes(r: OrientedBox, xs, vs, delta: float) -> np.ndarray:
    """Vectorised box_contains_tube over a family given as position/slope arrays."""
    xs = np.atleast_2d(xs)
    vs = np.atleast_2d(vs)
    shrunk = r.half_lengths - delta
    if np.any(shrunk < 0):
        return np.zeros(len(xs), dtype=bool)
    k = len(xs)
    p0 = np.concatenate([xs, np.zeros((k, 1))], axis=1)
    p1 = np.concatenate([xs + vs, np.ones((k, 1))], axis=1)
    l0 = np.abs((p0 - r.center) @ r.axes.T) <= shrunk
    l1 = np.abs((p1 - r.center) @ r.axes.T) <= shrunk
    return np.all(l0 & l1, axis=1)


def calibration_pair(n: int) -> tuple[LineSeg, LineSeg]:
    """Two segments crossing at (0, ..., 0, 1/2) with slope difference 1."""
    e = np.zeros(n - 1)
    e[0] = 0.5
    return LineSeg(-e / 2, e), LineSeg(e / 2, -e)


def rasterized_intersection_volume(
    l1: LineSeg, l2: LineSeg, delta: float, h: float, t_range: tuple[float, float] = (0.0, 1.0)
) -> float:
    """|T_1 cap T_2| by counting lattice cells of side ``h`` (cell-centre test).

    The lattice is aligned with the origin in the cross-section and with
    t = 0 in time; each t-slice only visits cells near the axis of ``l1``.
    """
    n = l1.n
    radius = delta * l1.length + h
    k0 = max(int(np.floor(t_range[0] / h)), 0)
    k1 = min(int(np.ceil(t_range[1] / h)), int(np.ceil(1.0 / h)))
    total = 0
    for k in range(k0, k1):
        t = (k + 0.5) * h
        c = l1.xa + l1.va * t
        axes = [
            (np.arange(np.floor((c[j] - radius) / h), np.ceil((c[j] + radius) / h)) + 0.5) * h
            for j in range(n - 1)
        ]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids] + [np.full(grids[0].size, t)], axis=1)
        d1 = point_segment_distance(pts, l1.xa, l1.va)
        pts = pts[d1 <= delta]
        if len(pts):
            total += int(np.count_nonzero(point_segment_distance(pts, l2.xa, l2.va) <= delta))
    return total * h**n


def calibrate_intersection_constant(n: int, delta: float = 2.0**-6, cells_per_delta: int = 8) -> float:
    """Voxel-count c_n on the transverse calibration pair."""
    l1, l2 = calibration_pair(n)
    span = (0.5 - 4.0 * delta, 0.5 + 4.0 * delta)
    vol = rasterized_intersection_volume(l1, l2, delta, delta / cells_per_delta, t_range=span)
    return vol * (delta + angle(l1, l2)) / delta**n
