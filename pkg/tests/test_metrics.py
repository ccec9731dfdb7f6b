import json

import numpy as np
import pytest

from oracles import wasserstein_lp
from xtalflow.lattice import Crystal, LatticeParams, matrix_to_params, params_to_matrix
from xtalflow.metrics import (
    MatchTolerances,
    compositional_validity,
    match_rate_rmse,
    property_distances,
    structural_validity,
    structure_match,
    total_validity,
    wasserstein_1d,
    write_report_csv,
    write_verdicts_jsonl,
)
from xtalflow.toydata import prototype_crystal
from xtalflow.torus import torus_exp


def _perovskite():
    return prototype_crystal("SrTiO3")


def _reexpress(c, t):
    """Same crystal in the basis ``t @ lattice`` (``t`` unimodular)."""
    m = t @ params_to_matrix(c.lattice)
    frac = np.mod(c.frac_coords @ np.linalg.inv(t), 1.0)
    return Crystal(c.atom_types, np.where(frac >= 1.0, 0.0, frac), matrix_to_params(m))


class TestStructureMatch:
    def test_self_match(self):
        c = _perovskite()
        assert structure_match(c, c) == pytest.approx(0.0, abs=1e-12)

    def test_permutation_and_translation(self, rng):
        c = _perovskite()
        moved = Crystal(c.atom_types, torus_exp(c.frac_coords, rng.random(3)), c.lattice).permuted(
            rng.permutation(c.num_sites))
        assert structure_match(c, moved) == pytest.approx(0.0, abs=1e-9)

    def test_alternative_basis(self):
        c = Crystal([11, 17, 17], [[0.0, 0.0, 0.0], [0.3, 0.5, 0.2], [0.7, 0.1, 0.6]],
                    LatticeParams.from_tuple(4.0, 5.0, 6.0, 90.0, 100.0, 90.0))
        other = _reexpress(c, np.array([[1, 0, 0], [0, 1, 0], [1, 0, 1]]))
        assert not np.allclose(other.lattice.lengths, c.lattice.lengths)
        assert structure_match(c, other) == pytest.approx(0.0, abs=1e-9)

    def test_small_displacement_rmse(self):
        c = _perovskite()
        shifted = c.frac_coords.copy()
        shifted[2, 0] = 0.01
        rmse = structure_match(c, Crystal(c.atom_types, shifted, c.lattice))
        # one displaced site out of five, normalized by (V / N)^(1/3);
        # the mean-offset refinement spreads the displacement over all sites
        d = 0.01 * 3.905 / (3.905**3 / 5) ** (1 / 3)
        assert rmse == pytest.approx(d * np.sqrt(4 / 25), rel=1e-6)

    def test_symmetric(self, rng):
        c = _perovskite()
        jittered = Crystal(c.atom_types, torus_exp(c.frac_coords, 0.02 * rng.standard_normal((5, 3))),
                           LatticeParams(c.lattice.lengths * [1.02, 0.99, 1.0], c.lattice.angles + [1, -1, 0.5]))
        assert structure_match(c, jittered) == pytest.approx(structure_match(jittered, c), rel=1e-9)

    def test_composition_mismatch(self):
        assert structure_match(_perovskite(), prototype_crystal("BaTiO3")) is None

    def test_lattice_tolerance(self):
        c = _perovskite()
        big = Crystal(c.atom_types, c.frac_coords, LatticeParams(c.lattice.lengths * 1.5, c.lattice.angles))
        assert structure_match(c, big) is None
        assert structure_match(c, big, MatchTolerances(0.5, 0.6, 10)) is not None

    def test_site_tolerance(self):
        c = _perovskite()
        frac = c.frac_coords.copy()
        frac[1] = [0.1, 0.1, 0.1]
        far = Crystal(c.atom_types, frac, c.lattice)
        assert structure_match(c, far) is None
        assert structure_match(c, far, MatchTolerances(stol=2.0)) is not None

    def test_tolerances_validated(self):
        with pytest.raises(ValueError):
            MatchTolerances(stol=0.0)


class TestMatchRate:
    def test_any_candidate_counts(self):
        c = _perovskite()
        other = prototype_crystal("KTaO3")
        rate, rmse = match_rate_rmse([[other, c], [other]], [c, prototype_crystal("NaCl")])
        assert rate == 50.0
        assert rmse == pytest.approx(0.0, abs=1e-12)

    def test_nothing_matches(self):
        rate, rmse = match_rate_rmse([[prototype_crystal("NaCl")]], [_perovskite()])
        assert rate == 0.0 and np.isnan(rmse)

    def test_alignment_checked(self):
        with pytest.raises(ValueError):
            match_rate_rmse([[]], [])


class TestValidity:
    def test_prototypes_are_structurally_valid(self):
        assert structural_validity(prototype_crystal("NaCl"))
        assert structural_validity(_perovskite())

    def test_close_atoms_invalid(self):
        c = Crystal([11, 17], [[0, 0, 0], [0.05, 0, 0]], LatticeParams.from_tuple(5, 5, 5, 90, 90, 90))
        assert not structural_validity(c)

    def test_short_lattice_vector_invalid(self):
        c = Crystal([26], [[0, 0, 0]], LatticeParams.from_tuple(0.4, 5, 5, 90, 90, 90))
        assert not structural_validity(c)

    @pytest.mark.parametrize("comp", [{11: 1, 17: 1}, {26: 1}, {13: 1, 26: 3}, {38: 1, 22: 1, 8: 3},
                                      {1: 2, 8: 1}, {22: 1, 8: 2}])
    def test_valid_compositions(self, comp):
        assert compositional_validity(comp)

    @pytest.mark.parametrize("comp", [{11: 2, 17: 1}, {11: 1, 9: 2}, {1: 1, 79: 1}, {26: 3, 8: 4}])
    def test_invalid_compositions(self, comp):
        # HAu balances only with H as the anion, which is less electronegative
        # than Au; Fe3O4 needs mixed valence
        assert not compositional_validity(comp)

    def test_noble_gas_compound_without_states(self):
        assert not compositional_validity({2: 1, 8: 1})

    def test_total_validity(self):
        bad = Crystal([11, 11, 17], [[0, 0, 0], [0.5, 0, 0], [0.5, 0.5, 0.5]],
                      LatticeParams.from_tuple(5, 5, 5, 90, 90, 90))
        assert total_validity([prototype_crystal("NaCl"), bad]) == 0.5
        assert total_validity([]) == 0.0


class TestWasserstein:
    def test_equal_sizes(self):
        assert wasserstein_1d([0, 1, 3], [5, 6, 8]) == pytest.approx(5.0)

    def test_shift_invariance(self, rng):
        a = rng.random(30)
        assert wasserstein_1d(a, a + 0.7) == pytest.approx(0.7)

    @pytest.mark.parametrize("seed", range(10))
    def test_against_linear_program(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=rng.integers(1, 8))
        b = rng.normal(size=rng.integers(1, 8))
        assert abs(wasserstein_1d(a, b) - wasserstein_lp(a, b)) < 1e-9

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            wasserstein_1d([], [1.0])

    def test_property_distances(self):
        nacl = prototype_crystal("NaCl")
        perov = _perovskite()
        d_rho, d_elem = property_distances([nacl], [perov])
        assert d_rho == pytest.approx(abs(2 / nacl.volume - 5 / perov.volume))
        assert d_elem == 1.0


class TestReports:
    def test_csv_and_jsonl(self, tmp_path):
        write_report_csv(tmp_path / "r.csv", {"match_rate": "80.00"})
        assert (tmp_path / "r.csv").read_text().splitlines() == ["metric,value", "match_rate,80.00"]
        write_verdicts_jsonl(tmp_path / "v.jsonl", [{"id": "a", "ok": True}])
        assert json.loads((tmp_path / "v.jsonl").read_text()) == {"id": "a", "ok": True}
