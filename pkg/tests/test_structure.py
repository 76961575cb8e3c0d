import math

import numpy as np
import pytest

from tubelab.errors import DomainError
from tubelab.estimate import squid_profile
from tubelab.family import TubeFamily, density_stats
from tubelab.gen import gen_bush, gen_hairbrush, gen_random, gen_single
from tubelab.geom import LineSeg, OrientedBox, Slab, Tube, point_segment_distance, segment_distances
from tubelab.raster import GridSpec, ScalarField, lp_norm, multiplicity_field, union_field
from tubelab.structure import (
    TwoEndsParams,
    best_slab_search,
    bilinear_norm,
    bilinear_split,
    cordoba_l2,
    direction_cells,
    dyadic_decompose,
    hairbrush,
    plate_number,
    plate_value,
    separated,
    slab_mass,
    two_ends_check,
)

D = 2**-5


def stacked(delta, k=8):
    g = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)])[:k] * delta / 2
    return TubeFamily(delta, g, np.zeros_like(g))


def spread(delta, k=8):
    g = np.array([((j - (k - 1) / 2) * delta, 0.0) for j in range(k)])
    return TubeFamily(delta, g, np.zeros_like(g))


class TestPlate:
    def test_single(self):
        r = plate_number(gen_single(D, v=(0.2, -0.1)))
        assert r.value == 1.0
        assert plate_value(gen_single(D, v=(0.2, -0.1)), r.witness, r.w)[0] == r.value

    def test_stacked(self):
        f = stacked(D)
        r = plate_number(f)
        assert r.value == 8.0 and r.w == D
        assert plate_value(f, r.witness, r.w) == (r.value, r.count)

    def test_spread(self):
        f = spread(D)
        r = plate_number(f)
        # a C w wide plate holds (C w - 2 delta) / delta + 1 tubes; best is 7 at w = 2 delta
        assert r.value == 3.5
        assert plate_value(f, r.witness, r.w)[0] == r.value

    def test_lower_bound_and_witness(self):
        f = gen_random(2**-3, seed=1)
        r = plate_number(f, search_budget=32)
        assert r.value >= 1.0
        box = OrientedBox.from_dict(r.witness.to_dict())
        assert plate_value(f, box, r.w)[0] == r.value

    def test_monotone_with_seeded_witness(self):
        sub = stacked(D)
        extra = gen_random(D, seed=3).subset(np.arange(40))
        both = sub.union(extra)
        r_sub = plate_number(sub)
        r_all = plate_number(both, search_budget=8, witnesses=[(r_sub.witness, r_sub.w)])
        assert r_all.value >= r_sub.value

    def test_deterministic(self):
        f = gen_random(2**-3, seed=2)
        a = plate_number(f, search_budget=16, seed=4)
        b = plate_number(f, search_budget=16, seed=4)
        assert a.to_dict() == b.to_dict()

    def test_empty(self):
        with pytest.raises(DomainError):
            plate_number(TubeFamily.empty(D))


class TestHairbrush:
    def test_bush_through_stem(self):
        stem = LineSeg((0.0, 0.0), (0.0, 0.0))
        f = gen_hairbrush(D, 0.25, 30, stem=stem)
        assert len(hairbrush(f, stem, 0.25)) == 30

    def test_disjoint(self):
        f = TubeFamily(D, np.array([[0.5, 0.0], [0.0, 0.5]]), np.array([[0.0, 0.0], [0.1, 0.0]]))
        assert len(hairbrush(f, LineSeg((-0.5, 0.0), (0.0, 0.0)), 0.1)) == 0

    def test_brute_force_and_permutation(self):
        f = gen_random(2**-3, seed=9)
        l0 = f.line(5)
        got = hairbrush(f, l0, 0.5, 1)
        keep = []
        for l in f.lines:
            d = segment_distances(l0.xa, l0.va, l.xa[None], l.va[None])[0]
            a = f.delta + np.linalg.norm(l.va - l0.va)
            if d <= 2 * f.delta and 0.25 <= a <= 1.0:
                keep.append((tuple(l.x), tuple(l.v)))
        assert sorted((tuple(l.x), tuple(l.v)) for l in got.lines) == sorted(keep)
        perm = f.subset(np.random.default_rng(0).permutation(len(f)))
        again = hairbrush(perm, l0, 0.5, 1)
        assert sorted(map(tuple, again.xs)) == sorted(map(tuple, got.xs))


def recount(l, f, E_field):
    """Per-cell (mu, sigma) recomputed independently with plain loops."""
    spec = E_field.spec
    grids = np.meshgrid(*(spec.centers(a) for a in range(3)), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    own = point_segment_distance(pts, l.xa, l.va) <= f.delta
    cells = np.flatnonzero(own & (E_field.values.ravel() != 0))
    out = {}
    for c in cells:
        p = pts[c : c + 1]
        angs = [
            f.delta + np.linalg.norm(f.vs[k] - l.va)
            for k in range(len(f))
            if point_segment_distance(p, f.xs[k], f.vs[k])[0] <= f.delta
        ]
        M = max(len(angs), 1)
        mu = 1
        while mu < M:
            mu *= 2
        sigma = f.delta
        while sum(a <= sigma for a in angs) * 2 < M and sigma < 1:
            sigma *= 2
        out[int(c)] = (mu, min(sigma, 1.0))
    return out


class TestDyadic:
    def test_single(self):
        d = 2**-3
        f = gen_single(d)
        E = union_field(f, GridSpec.standard(3, d))
        bins = dyadic_decompose(f.line(0), f, E)
        assert len(bins) == 1 and bins[0].mu == 1 and bins[0].sigma == d
        assert len(bins[0].cells) == E.occupied_count()

    def test_bush_centre(self):
        d = 2**-4
        f = gen_bush(d, 8, seed=1)
        spec = GridSpec.standard(3, d)
        E = ScalarField(spec, np.ones(spec.dims, dtype=np.uint8))
        bins = dyadic_decompose(f.line(0), f, E)
        centre = np.asarray(f.meta.get("centre", (d / 4, d / 4, 0.5 + d / 4)))
        flat = np.ravel_multi_index(tuple(spec.index_of(centre)[0]), spec.dims)
        (hit,) = [b for b in bins if flat in set(b.cells.tolist())]
        assert hit.mu_level == 3
        assert hit.sigma >= 0.25

    def test_matches_recount(self):
        rng = np.random.default_rng(11)
        d = 2**-3
        spec = GridSpec.standard(3, d)
        for _ in range(3):
            f = gen_random(d, seed=int(rng.integers(1000))).subset(rng.choice(150, 40, replace=False))
            E = union_field(f.subset(np.arange(0, 40, 2)), spec)
            l = f.line(int(rng.integers(40)))
            got = {}
            for b in dyadic_decompose(l, f, E):
                for c in b.cells:
                    got[int(c)] = (b.mu, b.sigma)
            assert got == recount(l, f, E)


class TestTwoEnds:
    def test_full_tube_passes(self):
        d = 2**-6
        f = gen_single(d, v=(0.2, 0.1))
        E = union_field(f, GridSpec.standard(3, d))
        lam = density_stats(f, E).lam
        assert two_ends_check(Tube(f.line(0), d), E, TwoEndsParams(10, 0.1), lam)

    def test_concentrated_fails(self):
        d = 2**-5
        xs = np.array([[i * 0.1 - 0.45, 0.0] for i in range(10)])
        f = TubeFamily(d, xs, np.zeros_like(xs) + [0.0, 0.05 * 0] + np.arange(10)[:, None] * [0.0, d])
        spec = GridSpec.standard(3, d)
        # E: the first tube near its bottom only
        t0 = Tube(f.line(0), d)
        vals = union_field(f.subset([0]), spec).values.copy()
        centres_t = spec.centers(2)
        vals[:, :, centres_t > 0.1] = 0
        E = ScalarField(spec, vals)
        lam = density_stats(f, E).lam
        assert not two_ends_check(t0, E, TwoEndsParams(2, 0.1), lam)

    def test_empty_vacuous_and_monotone(self):
        d = 2**-5
        f = gen_single(d)
        spec = GridSpec.standard(3, d)
        t = Tube(f.line(0), d)
        assert two_ends_check(t, ScalarField.zeros(spec, np.uint8), TwoEndsParams(), 0.5)
        E = union_field(f, spec)
        lam = density_stats(f, E).lam
        assert two_ends_check(t, E, TwoEndsParams(4, 0.1), lam)
        half = E.values.copy()
        half[:, :, spec.centers(2) > 0.5] = 0
        assert two_ends_check(t, ScalarField(spec, half), TwoEndsParams(4, 0.1), lam)
        with pytest.raises(DomainError):
            two_ends_check(t, E, TwoEndsParams(), 0.0)
        with pytest.raises(DomainError):
            TwoEndsParams(1)


class TestBilinear:
    def test_two_clusters(self):
        # each cluster fits in one direction cube of diameter c0/4
        d = 2**-6
        vs = np.array([[-0.25, 0.0], [-0.25, d], [0.25, 0.0], [0.25, d]])
        xs = np.array([[0.25, 0.0], [0.25, 0.0], [-0.25, 0.0], [-0.25, 0.0]])
        f = TubeFamily(d, xs, vs)
        r = bilinear_split(f)
        assert {len(r.E1), len(r.E2)} == {2}
        assert np.all(r.E1.vs[:, 0] < 0) and np.all(r.E2.vs[:, 0] > 0)
        assert r.norm > 0

    def test_no_pair(self):
        d = 2**-4
        f = TubeFamily(d, np.array([[0.0, 0.0], [0.5, 0.0]]), np.zeros((2, 2)), m=2)
        with pytest.raises(DomainError, match="no separated pair"):
            bilinear_split(f)

    def test_exhaustive(self):
        d = 2**-3
        f = gen_random(d, seed=5)
        p_conj = float(squid_profile(3).p_conj)
        r = bilinear_split(f, 0.5)
        keys, inverse, side = direction_cells(f, 0.5)
        sep = separated(keys, side, 0.5)
        spec = GridSpec.standard(3, d)
        fields = [multiplicity_field(f.subset(np.flatnonzero(inverse == g)), spec) for g in range(len(keys))]
        best = max(
            bilinear_norm(fields[a], fields[b], p_conj)
            for a in range(len(keys))
            for b in range(a + 1, len(keys))
            if sep[a, b]
        )
        assert r.norm == pytest.approx(best, rel=1e-9)


class TestCordoba:
    def test_single(self):
        d = 2**-5
        f = gen_single(d)
        r = cordoba_l2(f)
        vol = Tube(f.line(0), d).full_volume
        assert r.measured_l2_sq == pytest.approx(vol, rel=0.1)
        assert r.incidence_bound == pytest.approx(vol)

    def test_disjoint(self):
        d = 2**-5
        f = TubeFamily(d, np.array([[-0.5, 0.0], [0.5, 0.0]]), np.zeros((2, 2)), m=2)
        r = cordoba_l2(f)
        single = cordoba_l2(f.subset([0])).measured_l2_sq
        assert r.measured_l2_sq == pytest.approx(2 * single)
        assert r.intersecting_pairs == 0
        assert r.incidence_bound >= r.measured_l2_sq

    @pytest.mark.parametrize("maker", [
        lambda: gen_bush(2**-5, 40, seed=1),
        lambda: gen_random(2**-4, 2, seed=2),
        lambda: gen_hairbrush(2**-5, 0.125, 48, seed=3),
    ])
    def test_identity_bound(self, maker):
        r = cordoba_l2(maker())
        assert r.measured_l2_sq <= 1.05 * r.incidence_bound

    def test_restricted(self):
        d = 2**-4
        f = gen_bush(d, 10)
        spec = GridSpec.standard(3, d)
        full = ScalarField(spec, np.ones(spec.dims, dtype=np.uint8))
        assert cordoba_l2(f, restrict_to=full).measured_l2_sq == pytest.approx(cordoba_l2(f).measured_l2_sq)
        assert lp_norm(multiplicity_field(f, spec), 2) ** 2 == pytest.approx(cordoba_l2(f).measured_l2_sq)


class TestSlabs:
    def test_full_box(self):
        spec = GridSpec.standard(3, 2**-4)
        E = ScalarField(spec, np.ones(spec.dims, dtype=np.uint8))
        s = Slab.from_plane([0, 0, 0.5], [1, 0, 0], [0, 0, 1], 0.25)
        assert slab_mass(E, s) == pytest.approx(4 * 0.25 * 1, rel=0.1)
        thick = Slab.from_plane([0, 0, 0.5], [1, 0, 0], [0, 0, 1], 100.0)
        assert slab_mass(E, thick) == pytest.approx(E.measure())
        away = Slab.from_plane([0, 5, 0.5], [1, 0, 0], [0, 0, 1], 0.25)
        assert slab_mass(E, away) == 0.0

    def test_one_tube(self):
        d = 2**-5
        f = gen_single(d, v=(0.3, 0.1))
        E = union_field(f, GridSpec.standard(3, d))
        r = best_slab_search(E, [d * 2**k for k in range(5)], f)
        assert r.mass == pytest.approx(E.measure())
        assert r.mass == slab_mass(E, r.slab)

    def test_planar_family(self):
        d = 2**-5
        xs = np.array([[x, 0.0] for x in (-0.4, -0.1, 0.2)])
        vs = np.array([[v, 0.0] for v in (0.3, 0.0, -0.2)])
        f = TubeFamily(d, xs, vs)
        E = union_field(f, GridSpec.standard(3, d))
        thetas = [d * 2**k for k in range(6)]
        r = best_slab_search(E, thetas, f)
        # the plane y = 0 at the thinnest slab holding the whole union
        assert abs(abs(r.slab.normal_basis[0][1]) - 1) < 1e-9
        full = [t for t in thetas if t >= 2 * d][0]
        assert r.theta == full
        assert r.mass == pytest.approx(E.measure())

    def test_errors(self):
        E = ScalarField.zeros(GridSpec.standard(3, 0.25))
        with pytest.raises(DomainError):
            best_slab_search(E, [0.1], TubeFamily.empty(0.25))
        with pytest.raises(DomainError):
            best_slab_search(E, [], gen_single(0.25))
