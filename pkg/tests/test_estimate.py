import math
from fractions import Fraction

import numpy as np
import pytest

from tubelab.errors import BudgetExceeded, DomainError
from tubelab.estimate import (
    ExponentProfile,
    admissible,
    evaluate,
    fit_slope,
    rhs_bound,
    squid_profile,
    sweep,
)
from tubelab.family import TubeFamily
from tubelab.gen import gen_single
from tubelab.geom import Tube
from tubelab.raster import GridSpec, tube_voxel_volume


class TestProfiles:
    def test_squid_values(self):
        p = squid_profile(3)
        assert (p.p, p.q, p.r, p.alpha) == (Fraction(5, 2), Fraction(10, 3), 10, 0)
        p4 = squid_profile(4)
        assert (p4.p, p4.q, p4.r, p4.alpha) == (3, Fraction(9, 2), 12, Fraction(1, 12))
        with pytest.raises(DomainError):
            squid_profile(2)

    def test_conjugates(self):
        p = squid_profile(3)
        assert p.p_conj == Fraction(5, 3)
        assert p.q_conj == Fraction(10, 7)
        assert 1 / p.p + 1 / p.p_conj == 1
        assert ExponentProfile(1, "inf", 2).p_conj == math.inf
        assert ExponentProfile(1, "inf", 2).q_conj == 1

    def test_parse(self):
        p = ExponentProfile.parse("5/2,10/3,inf,0")
        assert p.r == math.inf and p.q == Fraction(10, 3)
        with pytest.raises(DomainError):
            ExponentProfile.parse("1,2")
        with pytest.raises(DomainError):
            ExponentProfile.parse("0.5,2,2,0")


class TestAdmissible:
    @pytest.mark.parametrize("n", range(3, 9))
    def test_squid_tight(self, n):
        a = admissible(squid_profile(n), n)
        assert a.scaling_tight and a.knapp_tight and a.besicovitch_ok

    def test_infinite_exponents(self):
        a = admissible(ExponentProfile("inf", "inf", "inf", 0), 3)
        assert a.scaling_ok and a.knapp_ok and not a.besicovitch_ok

    def test_besicovitch_fails(self):
        a = admissible(ExponentProfile(1, "inf", "inf", 0), 3)
        assert not a.besicovitch_ok

    def test_slightly_worse_fails(self):
        p = squid_profile(3)
        a = admissible(ExponentProfile(p.p * Fraction(9, 10), p.q, p.r, 0), 3)
        assert not a.scaling_ok


class TestRhs:
    def test_closed_form(self):
        p = squid_profile(3)
        assert rhs_bound(3, 1 / 16, 1, 256, 0.0, p) == pytest.approx(2 ** 0.8, rel=1e-12)

    def test_multiplicative(self):
        p = squid_profile(3)
        base = rhs_bound(3, 1 / 32, 2, 100, 0.0, p)
        assert rhs_bound(3, 1 / 32, 32, 100, 0.0, p) == pytest.approx(base * 16**0.2, rel=1e-12)
        assert rhs_bound(3, 1 / 32, 2, 300, 0.0, p) == pytest.approx(base * 3**0.7, rel=1e-12)
        assert rhs_bound(3, 1 / 32, 2, 100, 0.1, p) == pytest.approx(base * (1 / 32) ** -0.1, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            rhs_bound(3, 1.5, 1, 1, 0, squid_profile(3))
        with pytest.raises(DomainError):
            rhs_bound(3, 0.5, 0, 1, 0, squid_profile(3))


class TestEvaluate:
    def test_single_tube(self):
        d = 2**-5
        f = gen_single(d)
        rep = evaluate(f)
        vol = tube_voxel_volume(Tube(f.line(0), d), GridSpec.standard(3, d))
        assert rep.lhs == pytest.approx(vol**0.6, rel=1e-12)
        assert 0 < rep.ratio < 5
        assert rep.ratio == rep.lhs / rep.rhs

    def test_empty_and_invalid(self):
        with pytest.raises(DomainError):
            evaluate(TubeFamily.empty(0.1))
        dup = TubeFamily(0.1, np.array([[0.0, 0.0], [0.5, 0.0]]), np.zeros((2, 2)))
        with pytest.raises(DomainError):
            evaluate(dup)

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            evaluate(gen_single(2**-5), budget=1000)

    def test_rigid_motion(self):
        d = 2**-5
        a = evaluate(TubeFamily(d, np.array([[0.0, 0.0]]), np.array([[0.25, 0.125]])))
        b = evaluate(TubeFamily(d, np.array([[0.3, -0.2]]), np.array([[0.25, 0.125]])))
        assert b.ratio == pytest.approx(a.ratio, rel=0.1)

    def test_realized_m(self):
        d = 2**-3
        f = TubeFamily(d, np.array([[0.0, 0.0], [0.5, 0.0]]), np.zeros((2, 2)), m=4)
        assert evaluate(f).params["m"] == 2


class TestSweep:
    def test_single_slope_zero(self):
        # lhs ~ delta^{(n-1)/p'} and rhs ~ delta^{-n/p + 1 + (n-1)/q'}; both exponents are 6/5
        rep = sweep("single", [2**-3, 2**-4, 2**-5])
        assert abs(rep.slope) < 0.15
        assert [r["delta"] for r in rep.sweep] == [2**-3, 2**-4, 2**-5]
        assert rep.csv_text().splitlines()[0] == "delta,lhs,rhs,ratio"

    def test_partial(self):
        rep = sweep("bush:count=100", [2**-2, 2**-3])
        assert rep.partial and len(rep.sweep) == 0 and "exceeds" in rep.error
        rep = sweep("single", [2**-3, 2**-4], budget=70000)
        assert rep.partial and len(rep.sweep) == 1

    def test_bad_deltas(self):
        with pytest.raises(DomainError):
            sweep("single", [0.3, 0.1])
        with pytest.raises(DomainError):
            sweep("single", [2**-4, 2**-3])

    def test_bush_eps(self):
        rep = sweep("bush:count=32", [2**-4, 2**-5, 2**-6], epsilon=0.1)
        assert rep.slope <= 0.1

    def test_fit_slope(self):
        d = np.array([0.5, 0.25, 0.125])
        assert fit_slope(d, d**-0.3) == pytest.approx(0.3)
