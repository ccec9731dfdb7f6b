import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtalflow.paths import (
    K_ELEM,
    LogNormalPrior,
    MASK,
    PAD,
    categories_to_types,
    cond_rate_atoms,
    cond_vel_frac,
    cond_vel_linear,
    fit_lognormal,
    flow_matching_loss,
    gkl,
    interpolate_discrete,
    interpolate_frac,
    interpolate_linear,
    param_rate,
    param_rate_vjp,
    param_vel_frac,
    param_vel_linear,
    sample_base,
    sample_time,
    softmax,
    types_to_categories,
)
from xtalflow.torus import torus_log


class TestCategories:
    def test_token_layout(self):
        assert (K_ELEM, MASK, PAD) == (94, 94, 95)

    def test_roundtrip(self):
        np.testing.assert_array_equal(categories_to_types(types_to_categories([1, 8, 94])), [1, 8, 94])

    def test_mask_has_no_type(self):
        with pytest.raises(ValueError):
            categories_to_types([MASK])


class TestTimesAndBase:
    def test_clip(self, rng):
        t, s = sample_time(rng, 0.9, size=10_000)
        assert t.max() == 0.9 and s.max() == 0.9
        assert np.mean(t == 0.9) == pytest.approx(0.1, abs=0.02)

    def test_base_sample(self, rng):
        prior = LogNormalPrior(np.log([4.0, 5.0, 6.0]), np.full(3, 0.2))
        atoms, frac, lengths, angles = sample_base(7, prior, rng)
        assert np.all(atoms == MASK)
        assert frac.shape == (7, 3) and np.all((frac >= 0) & (frac < 1))
        assert np.all((angles >= 60) & (angles <= 120))
        assert lengths.shape == (3,)

    def test_lognormal_fit_recovers_parameters(self, rng):
        mu, sigma = np.log([3.0, 5.0, 8.0]), np.array([0.1, 0.2, 0.3])
        x = LogNormalPrior(mu, sigma).sample(rng, 50_000)
        fit = fit_lognormal(x)
        np.testing.assert_allclose(fit.mu, mu, atol=0.01)
        np.testing.assert_allclose(fit.sigma, sigma, atol=0.01)

    def test_lognormal_fit_rejects_bad_input(self):
        with pytest.raises(ValueError):
            fit_lognormal([[1.0, 2.0, -1.0], [1.0, 2.0, 3.0]])


class TestInterpolants:
    def test_discrete_endpoints(self, rng):
        a1 = rng.integers(0, K_ELEM, size=1000)
        assert np.all(interpolate_discrete(a1, 0.0, rng) == MASK)
        np.testing.assert_array_equal(interpolate_discrete(a1, 1.0, rng), a1)

    def test_discrete_keep_fraction(self, rng):
        a1 = np.zeros(100_000, dtype=int)
        assert np.mean(interpolate_discrete(a1, 0.3, rng) == 0) == pytest.approx(0.3, abs=0.01)

    def test_frac_geodesic_endpoints(self, rng):
        f0, f1 = rng.random((5, 3)), rng.random((5, 3))
        np.testing.assert_allclose(interpolate_frac(f0, f1, 0.0), f0, atol=1e-15)
        np.testing.assert_allclose(torus_log(interpolate_frac(f0, f1, 1.0), f1), 0, atol=1e-12)

    def test_frac_geodesic_constant_speed(self, rng):
        f0, f1 = rng.random((5, 3)), rng.random((5, 3))
        full = torus_log(f0, f1)
        half = torus_log(f0, interpolate_frac(f0, f1, 0.5))
        np.testing.assert_allclose(half, 0.5 * full, atol=1e-12)

    def test_linear(self):
        assert interpolate_linear(2.0, 6.0, 0.25) == 3.0


class TestConditionalFields:
    def test_rate_only_on_masked_sites(self):
        a_t = np.array([MASK, 3])
        a1 = np.array([5, 3])
        r = cond_rate_atoms(a_t, a1, 0.5)
        assert r.shape == (2, K_ELEM)
        assert r[0, 5] == pytest.approx(2.0) and r[0].sum() == pytest.approx(2.0)
        assert np.all(r[1] == 0)

    @given(st.floats(0.0, 0.99))
    def test_velocities_reach_endpoint(self, s):
        y_s, y1 = np.array([1.0, 2.0]), np.array([3.0, -1.0])
        np.testing.assert_allclose(y_s + (1 - s) * cond_vel_linear(y_s, y1, s), y1, atol=1e-9)

    def test_frac_velocity_is_log_over_remaining(self):
        assert cond_vel_frac(0.9, 0.1, 0.5) == pytest.approx(0.4)

    def test_parameterized_equals_conditional_at_truth(self, rng):
        f_s, f1 = rng.random((4, 3)), rng.random((4, 3))
        s = 0.3
        np.testing.assert_allclose(param_vel_frac(f_s, f1 + 3.0, s), cond_vel_frac(f_s, f1, s), atol=1e-12)
        np.testing.assert_allclose(param_vel_linear(1.0, 4.0, s), cond_vel_linear(1.0, 4.0, s))

    def test_param_rate_sums_to_inverse_remaining(self, rng):
        logits = rng.standard_normal((3, K_ELEM))
        r = param_rate(np.array([MASK, MASK, 2]), logits, 0.75)
        np.testing.assert_allclose(r.sum(axis=-1), [4.0, 4.0, 0.0])

    def test_param_rate_vjp_matches_finite_differences(self, rng):
        a_t = np.array([MASK, 7, MASK])
        logits = rng.standard_normal((3, K_ELEM))
        g = rng.standard_normal((3, K_ELEM))
        analytic = param_rate_vjp(a_t, logits, 0.4, g)
        fd = np.zeros_like(logits)
        h = 1e-6
        for idx in np.ndindex(logits.shape):
            up, dn = logits.copy(), logits.copy()
            up[idx] += h
            dn[idx] -= h
            fd[idx] = (np.sum(g * param_rate(a_t, up, 0.4)) - np.sum(g * param_rate(a_t, dn, 0.4))) / (2 * h)
        np.testing.assert_allclose(analytic, fd, atol=1e-8)

    def test_softmax_stable(self):
        p = softmax(np.array([1000.0, 1000.0]))
        np.testing.assert_allclose(p, [0.5, 0.5])


class TestGKL:
    def test_zero_for_equal_arguments(self, rng):
        u = rng.random((4, 6))
        np.testing.assert_allclose(gkl(u, u), 0, atol=1e-14)

    def test_reference_value(self):
        u, v = np.array([1.0, 0.0, 2.0]), np.array([0.5, 1.0, 2.0])
        expected = 1.0 * np.log(2.0) + 2.0 * 0.0 - 3.0 + 3.5
        assert gkl(u, v) == pytest.approx(expected)

    def test_nonnegative(self, rng):
        u, v = rng.random((100, 5)) * 3, rng.random((100, 5)) * 3
        assert np.all(gkl(u, v) >= -1e-12)

    def test_finite_for_zero_prediction(self):
        assert np.isfinite(gkl(np.array([1.0, 0.0]), np.array([0.0, 1.0])))


class TestLoss:
    def _setup(self, rng):
        b, n = 3, 4
        mask = np.ones((b, n), dtype=bool)
        mask[0, 3] = False
        target = {
            "rate": rng.random((b, n, 5)),
            "F": rng.standard_normal((b, n, 3)),
            "Ll": rng.standard_normal((b, 3)),
            "La": rng.standard_normal((b, 3)),
        }
        pred = {k: v + 0.3 * rng.standard_normal(v.shape) for k, v in target.items()}
        pred["rate"] = np.abs(pred["rate"]) + 0.1
        return pred, target, mask

    def test_zero_at_target(self, rng):
        pred, target, mask = self._setup(rng)
        assert flow_matching_loss(target, target, mask).total == pytest.approx(0.0, abs=1e-12)

    def test_default_weights(self, rng):
        pred, target, mask = self._setup(rng)
        rep = flow_matching_loss(pred, target, mask)
        expected = 0.5 * rep.terms["A"] + 2.0 * rep.terms["F"] + rep.terms["Ll"] + rep.terms["La"]
        assert rep.total == pytest.approx(expected)

    def test_padding_ignored(self, rng):
        pred, target, mask = self._setup(rng)
        a = flow_matching_loss(pred, target, mask).total
        pred["F"][0, 3] += 100.0
        assert flow_matching_loss(pred, target, mask).total == pytest.approx(a)

    def test_gradients_match_finite_differences(self, rng):
        pred, target, mask = self._setup(rng)
        rep = flow_matching_loss(pred, target, mask)
        h = 1e-6
        for key in ("rate", "F", "Ll", "La"):
            fd = np.zeros_like(pred[key])
            for idx in np.ndindex(pred[key].shape):
                up = {k: v.copy() for k, v in pred.items()}
                dn = {k: v.copy() for k, v in pred.items()}
                up[key][idx] += h
                dn[key][idx] -= h
                fd[idx] = (flow_matching_loss(up, target, mask).total
                           - flow_matching_loss(dn, target, mask).total) / (2 * h)
            grad = rep.grads[key] * (mask[..., None] if key in ("rate", "F") else 1.0)
            np.testing.assert_allclose(grad, fd, atol=1e-7, err_msg=key)
