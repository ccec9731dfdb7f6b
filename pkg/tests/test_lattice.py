import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_niggli, metric_params, unimodular_matrices
from support import random_lattice
from xtalflow.lattice import (
    Crystal,
    InvalidCrystalError,
    InvalidLatticeError,
    LatticeParams,
    cell_volume,
    frac_to_cart,
    is_niggli_reduced,
    matrix_to_params,
    min_periodic_distance,
    niggli_reduce,
    params_to_matrix,
    self_image_distance,
)


class TestLatticeParams:
    def test_rejects_nonpositive_length(self):
        with pytest.raises(InvalidLatticeError):
            LatticeParams([1.0, 0.0, 1.0], [90, 90, 90])

    def test_rejects_out_of_range_angle(self):
        with pytest.raises(InvalidLatticeError):
            LatticeParams([1.0, 1.0, 1.0], [90, 180, 90])

    def test_cubic_volume(self):
        assert LatticeParams.from_tuple(2, 3, 4, 90, 90, 90).volume == pytest.approx(24.0)

    def test_degenerate_matrix_raises(self):
        # alpha = beta + gamma makes the three vectors coplanar
        with pytest.raises(InvalidLatticeError):
            params_to_matrix(LatticeParams.from_tuple(1, 1, 1, 120, 60, 60))


class TestParamsMatrix:
    def test_lower_triangular(self, rng):
        m = params_to_matrix(random_lattice(rng))
        assert m[0, 1] == 0 and m[0, 2] == 0 and m[1, 2] == 0

    def test_hexagonal_volume(self):
        p = LatticeParams.from_tuple(3.0, 3.0, 5.0, 90, 90, 120)
        assert p.volume == pytest.approx(3.0 * 3.0 * 5.0 * np.sqrt(3) / 2)

    def test_triclinic_volume_formula(self, rng):
        # V = abc sqrt(1 - cos^2 a - cos^2 b - cos^2 g + 2 cos a cos b cos g)
        for _ in range(20):
            p = random_lattice(rng)
            ca, cb, cg = np.cos(np.radians(p.angles))
            expected = np.prod(p.lengths) * np.sqrt(1 - ca**2 - cb**2 - cg**2 + 2 * ca * cb * cg)
            assert cell_volume(params_to_matrix(p)) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1))
    def test_roundtrip(self, seed):
        p = random_lattice(np.random.default_rng(seed))
        q = matrix_to_params(params_to_matrix(p))
        np.testing.assert_allclose(q.lengths, p.lengths, rtol=1e-12)
        np.testing.assert_allclose(q.angles, p.angles, rtol=1e-10)

    def test_matrix_to_params_rejects_coplanar(self):
        with pytest.raises(InvalidLatticeError):
            matrix_to_params([[1, 0, 0], [0, 1, 0], [1, 1, 0]])


class TestCrystal:
    def test_frac_out_of_range_names_site(self):
        with pytest.raises(InvalidCrystalError, match="site 1"):
            Crystal([1, 1], [[0.1, 0.1, 0.1], [0.2, 1.0, 0.3]], LatticeParams.from_tuple(3, 3, 3, 90, 90, 90))

    def test_angle_domain_enforced(self):
        with pytest.raises(InvalidCrystalError):
            Crystal([1], [[0, 0, 0]], LatticeParams.from_tuple(3, 3, 3, 50, 90, 90))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidCrystalError):
            Crystal([1, 2], [[0, 0, 0]], LatticeParams.from_tuple(3, 3, 3, 90, 90, 90))

    def test_composition_and_permutation(self, nacl):
        assert nacl.composition() == {11: 1, 17: 1}
        swapped = nacl.permuted([1, 0])
        np.testing.assert_array_equal(swapped.atom_types, [17, 11])
        np.testing.assert_array_equal(swapped.frac_coords[0], [0.5, 0.5, 0.5])

    def test_cartesian(self):
        c = Crystal([1], [[0.5, 0.5, 0.5]], LatticeParams.from_tuple(2, 4, 6, 90, 90, 90))
        np.testing.assert_allclose(frac_to_cart(c), [[1.0, 2.0, 3.0]], atol=1e-12)


class TestNiggli:
    def test_reduced_cell_is_fixed_point(self):
        m = params_to_matrix(LatticeParams.from_tuple(3, 4, 5, 90, 90, 90))
        r, t = niggli_reduce(m)
        np.testing.assert_allclose(metric_params(r), [3, 4, 5, 90, 90, 90], atol=1e-10)
        assert abs(round(np.linalg.det(t))) == 1

    def test_fcc_primitive_reduces_to_60_degrees(self):
        m = 0.5 * np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]]) * 4.0
        skew = np.array([[1, 0, 0], [1, 1, 0], [1, 1, 1]]) @ m
        r, _ = niggli_reduce(skew)
        np.testing.assert_allclose(metric_params(r), [2 * np.sqrt(2)] * 3 + [60.0] * 3, atol=1e-9)

    def test_transform_relation(self, rng):
        m = params_to_matrix(random_lattice(rng))
        r, t = niggli_reduce(m)
        np.testing.assert_allclose(r, t @ m, atol=1e-12)
        assert np.array_equal(t, np.round(t))

    def test_against_brute_force(self, rng):
        ts = unimodular_matrices()
        small = ts[np.abs(ts).max(axis=(1, 2)) <= 1]
        checked = 0
        while checked < 8:
            m = small[rng.integers(len(small))] @ params_to_matrix(random_lattice(rng))
            oracle = brute_force_niggli(m)
            if oracle is None:
                continue
            r, _ = niggli_reduce(m)
            np.testing.assert_allclose(metric_params(r), oracle, atol=1e-6)
            checked += 1

    def test_idempotent_and_volume_preserving(self, rng):
        for _ in range(20):
            m = params_to_matrix(random_lattice(rng))
            r, _ = niggli_reduce(m)
            assert is_niggli_reduced(r)
            r2, t2 = niggli_reduce(r)
            np.testing.assert_allclose(metric_params(r2), metric_params(r), atol=1e-9)
            assert cell_volume(r) == pytest.approx(cell_volume(m), rel=1e-10)

    def test_degenerate_raises(self):
        with pytest.raises(InvalidLatticeError):
            niggli_reduce(np.zeros((3, 3)))


class TestDistances:
    def test_nacl_nearest_neighbour(self, nacl):
        assert min_periodic_distance(nacl) == pytest.approx(5.64 / 2)

    def test_single_site_is_infinite(self):
        c = Crystal([1], [[0, 0, 0]], LatticeParams.from_tuple(3, 3, 3, 90, 90, 90))
        assert min_periodic_distance(c) == np.inf

    def test_self_image_is_shortest_vector(self):
        p = LatticeParams.from_tuple(3, 4, 5, 90, 90, 90)
        assert self_image_distance(p) == pytest.approx(3.0)

    def test_brute_force_minimum_image(self, rng):
        for _ in range(10):
            p = random_lattice(rng)
            c = Crystal(np.ones(4, dtype=int), rng.random((4, 3)), p)
            m = params_to_matrix(p)
            shifts = np.array([[i, j, k] for i in range(-3, 4) for j in range(-3, 4) for k in range(-3, 4)])
            best = np.inf
            for a in range(4):
                for b in range(a + 1, 4):
                    d = (c.frac_coords[b] - c.frac_coords[a] + shifts) @ m
                    best = min(best, np.sqrt((d**2).sum(axis=1)).min())
            assert min_periodic_distance(c) == pytest.approx(best, rel=1e-12)
