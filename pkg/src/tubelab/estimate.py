"""Exponent bookkeeping and evaluation of the discretized x-ray estimate

    || sum_{l in A} chi_{T_l} ||_{p'} <~ delta^{-n/p + 1 - eps} m^{1/q - 1/r} (delta^{n-1} |A|)^{1/q'}

for concrete tube families, single configurations or delta-sweeps.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError
from .family import TubeFamily, validate_family
from .geom import check_dim
from .raster import GridSpec, multiplicity_histogram, norm_from_histogram

INF = math.inf


def _exact(x):
    """Fraction for finite input (parsing strings like '5/2'), inf kept as float."""
    if isinstance(x, str):
        x = x.strip()
        if x.lower() in ("inf", "infinity", "oo"):
            return INF
        return Fraction(x)
    if isinstance(x, float) and math.isinf(x):
        return INF
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**9)
    return Fraction(x)


def _inv(x):
    return Fraction(0) if x == INF else 1 / x


def conjugate(p):
    """p' with 1/p + 1/p' = 1 (so 1' = inf and inf' = 1)."""
    if p == INF:
        return Fraction(1)
    if p == 1:
        return INF
    return p / (p - 1)


@dataclass(frozen=True)
class ExponentProfile:
    p: Fraction | float
    q: Fraction | float
    r: Fraction | float
    alpha: Fraction | float = Fraction(0)

    def __post_init__(self):
        for name in ("p", "q", "r", "alpha"):
            object.__setattr__(self, name, _exact(getattr(self, name)))
        for name in ("p", "q", "r"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.alpha < 0:
            raise DomainError("alpha must be >= 0")

    @property
    def p_conj(self):
        return conjugate(self.p)

    @property
    def q_conj(self):
        return conjugate(self.q)

    @property
    def r_conj(self):
        return conjugate(self.r)

    @classmethod
    def parse(cls, text: str) -> "ExponentProfile":
        """'p,q,r,alpha' with rationals like 5/2 or 'inf'."""
        parts = [t for t in text.replace(" ", "").split(",") if t]
        if len(parts) not in (3, 4):
            raise DomainError(f"profile needs p,q,r[,alpha], got {text!r}")
        try:
            return cls(*parts)
        except (ValueError, ZeroDivisionError) as exc:
            raise DomainError(f"bad profile {text!r}: {exc}") from exc

    def with_alpha(self, alpha) -> "ExponentProfile":
        return ExponentProfile(self.p, self.q, self.r, alpha)

    def to_dict(self) -> dict:
        return {k: str(getattr(self, k)) for k in ("p", "q", "r", "alpha")}


def squid_profile(n: int) -> ExponentProfile:
    """The exponents of the main x-ray estimate (epsilon carried separately)."""
    n = check_dim(n)
    return ExponentProfile(
        Fraction(n + 2, 2),
        Fraction((n - 1) * (n + 2), n),
        Fraction(2 * (n + 2)),
        Fraction(n - 3, 2 * (n + 2)),
    )


@dataclass(frozen=True)
class Admissibility:
    scaling_lhs: Fraction
    scaling_rhs: Fraction
    knapp_lhs: Fraction
    knapp_rhs: Fraction
    besicovitch_ok: bool

    @property
    def scaling_ok(self) -> bool:
        return self.scaling_lhs >= self.scaling_rhs

    @property
    def knapp_ok(self) -> bool:
        return self.knapp_lhs >= self.knapp_rhs

    @property
    def scaling_tight(self) -> bool:
        return self.scaling_lhs == self.scaling_rhs

    @property
    def knapp_tight(self) -> bool:
        return self.knapp_lhs == self.knapp_rhs

    @property
    def all_ok(self) -> bool:
        return self.scaling_ok and self.knapp_ok and self.besicovitch_ok


def admissible(profile: ExponentProfile, n: int) -> Admissibility:
    """The three necessary conditions for the x-ray estimate at these exponents."""
    n = check_dim(n)
    ip, iq, ir = _inv(profile.p), _inv(profile.q), _inv(profile.r)
    a = profile.alpha
    return Admissibility(
        scaling_lhs=1 + (n - 1) * ir,
        scaling_rhs=n * ip - a,
        knapp_lhs=(n - 1) * iq + (n - 1) * ir,
        knapp_rhs=(n - 1) * ip - a,
        besicovitch_ok=not (profile.r == INF and a == 0),
    )


def rhs_bound(n: int, delta: float, m: float, family_size: int, epsilon: float, profile: ExponentProfile) -> float:
    """delta^{-n/p + 1 - eps} m^{1/q - 1/r} (delta^{n-1} |A|)^{1/q'}."""
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    if m < 1 or family_size < 1:
        raise DomainError("m and family size must be >= 1")
    ip, iq, ir = (float(_inv(x)) for x in (profile.p, profile.q, profile.r))
    iqc = 1.0 - iq
    return (
        delta ** (-n * ip + 1.0 - epsilon)
        * m ** (iq - ir)
        * (delta ** (n - 1) * family_size) ** iqc
    )


@dataclass
class EstimateReport:
    lhs: float
    rhs: float
    ratio: float
    params: dict
    sweep: list = field(default_factory=list)
    slope: float | None = None
    partial: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "slope": self.slope,
            "params": self.params,
            "sweep": self.sweep,
            "partial": self.partial,
            "error": self.error,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def csv_text(self) -> str:
        rows = self.sweep or [dict(delta=self.params.get("delta"), lhs=self.lhs, rhs=self.rhs, ratio=self.ratio)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "lhs", "rhs", "ratio"])
        for row in rows:
            w.writerow([repr(float(row[k])) for k in ("delta", "lhs", "rhs", "ratio")])
        return buf.getvalue()


def evaluate(
    f: TubeFamily,
    profile: ExponentProfile | None = None,
    epsilon: float = 0.0,
    cell: float | None = None,
    budget: int | None = None,
) -> EstimateReport:
    """LHS and RHS of the estimate for one family on the standard grid."""
    if len(f) == 0:
        raise DomainError("cannot evaluate an empty family")
    report = validate_family(f)
    if not report.valid:
        raise DomainError(f"family violates its invariants: {report.to_dict()}")
    profile = profile or squid_profile(f.n)
    spec = GridSpec.standard(f.n, f.delta, cell)
    hist = multiplicity_histogram(f, spec, budget)
    lhs = norm_from_histogram(hist, float(profile.p_conj), spec.cell_volume)
    m = report.max_multiplicity
    rhs = rhs_bound(f.n, f.delta, m, len(f), epsilon, profile)
    params = {
        "n": f.n,
        "delta": f.delta,
        "cell": spec.cell,
        "m": m,
        "m_declared": f.m,
        "family_size": len(f),
        "epsilon": epsilon,
        "seed": f.seed,
        "generator": f.label,
        "profile": profile.to_dict(),
        "max_multiplicity_field": int(len(hist) - 1),
    }
    return EstimateReport(lhs, rhs, lhs / rhs, params)


def fit_slope(deltas, ratios) -> float:
    """Ordinary least-squares slope of log(ratio) against log(1/delta)."""
    x = np.log(1.0 / np.asarray(deltas, dtype=float))
    y = np.log(np.asarray(ratios, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _check_dyadic_descending(deltas) -> list[float]:
    deltas = [float(d) for d in deltas]
    for d in deltas:
        k = math.log2(d)
        if abs(k - round(k)) > 1e-12 or not 0 < d < 1:
            raise DomainError(f"sweep deltas must be dyadic in (0, 1), got {d}")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise DomainError("sweep deltas must be strictly descending")
    return deltas


def sweep(
    generator_spec: str,
    deltas,
    profile: ExponentProfile | None = None,
    epsilon: float = 0.0,
    n: int = 3,
    cell_factor: float = 0.5,
    budget: int | None = None,
) -> EstimateReport:
    """Evaluate a generator across dyadic deltas and fit the ratio's growth rate.

    An evaluation failure stops the sweep; points computed so far are kept
    and the report is flagged partial.
    """
    from .gen import generate

    deltas = _check_dyadic_descending(deltas)
    profile = profile or squid_profile(n)
    rows, last, error = [], None, None
    for d in deltas:
        try:
            fam = generate(generator_spec, delta=d, n=n)
            last = evaluate(fam, profile, epsilon, cell=cell_factor * d, budget=budget)
        except (DomainError, MemoryError) as exc:
            error = f"delta={d}: {exc}"
            break
        rows.append({"delta": d, "lhs": last.lhs, "rhs": last.rhs, "ratio": last.ratio, "family_size": last.params["family_size"]})
    slope = fit_slope([r["delta"] for r in rows], [r["ratio"] for r in rows]) if len(rows) >= 2 else None
    params = {
        "n": n,
        "generator": generator_spec,
        "deltas": deltas,
        "epsilon": epsilon,
        "cell_factor": cell_factor,
        "profile": profile.to_dict(),
    }
    if last is None:
        return EstimateReport(math.nan, math.nan, math.nan, params, rows, slope, True, error)
    return EstimateReport(last.lhs, last.rhs, last.ratio, params, rows, slope, error is not None, error)
