"""Quantization, discretized likelihoods, PMF tables and the factorized density."""
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlcodec.entropy import (
    LIKELIHOOD_FLOOR,
    DistributionKind,
    FactorizedDensity,
    cdf,
    discretized_pmf,
    factorized_pmf,
    quantize,
    rate_bits,
    relaxed_likelihood,
)

KINDS = [k.value for k in DistributionKind]


class TestQuantize:
    def test_round_examples(self):
        out = quantize(np.array([2.4, -0.5, 0.5, 1.5, -2.5, -0.49]), "round").data
        assert out.tolist() == [2.0, -1.0, 1.0, 2.0, -3.0, -0.0]

    def test_noise_stays_within_half(self, rng):
        y = rng.normal(0, 10, size=10000)
        out = quantize(y, "noise", rng).data
        assert np.all(np.abs(out - y) <= 0.5)

    def test_noise_is_seeded(self):
        y = np.zeros(5)
        a = quantize(y, "noise", np.random.default_rng(3)).data
        b = quantize(y, "noise", np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            quantize(np.zeros(1), "floor")


class TestRelaxedLikelihood:
    def test_standard_gaussian_at_zero(self):
        mpmath.mp.dps = 30
        oracle = float(mpmath.erf(mpmath.mpf("0.5") / mpmath.sqrt(2)))  # 2*Phi(1/2) - 1
        got = relaxed_likelihood(0.0, 0.0, 1.0, "gaussian").item()
        assert got == pytest.approx(0.382925, abs=5e-7)
        assert got == pytest.approx(oracle, abs=1e-15)

    @pytest.mark.parametrize("kind", KINDS)
    def test_closed_forms(self, kind, rng):
        v, mu, s = rng.normal(0, 3, 50), rng.normal(0, 3, 50), rng.uniform(0.2, 4, 50)
        if kind == "gaussian":
            F = lambda x: 0.5 * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))
        elif kind == "logistic":
            F = lambda x: 1 / (1 + np.exp(-x))
        else:
            F = lambda x: np.where(x < 0, 0.5 * np.exp(x), 1 - 0.5 * np.exp(-x))
        ref = np.maximum(F((v + 0.5 - mu) / s) - F((v - 0.5 - mu) / s), LIKELIHOOD_FLOOR)
        np.testing.assert_allclose(relaxed_likelihood(v, mu, s, kind).data, ref, rtol=1e-9, atol=1e-15)

    @pytest.mark.parametrize("kind", KINDS)
    def test_mode_at_mean(self, kind, rng):
        mu, s = 0.3, 1.7
        v = np.linspace(-5, 5, 1001)
        p = relaxed_likelihood(v, mu, s, kind).data
        assert relaxed_likelihood(mu, mu, s, kind).item() >= p.max() * (1 - 1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_scale_monotonicity(self, kind):
        sig = np.linspace(0.11, 20, 400)
        p = relaxed_likelihood(np.zeros_like(sig), 0.0, sig, kind).data
        assert np.all(np.diff(p) < 0)

    def test_floor_applies_far_in_tail(self):
        assert relaxed_likelihood(1000.0, 0.0, 0.11).item() == LIKELIHOOD_FLOOR

    def test_noise_relaxation_tracks_discrete_rate(self):
        r = np.random.default_rng(5)
        for sigma in (2.0, 4.0, 8.0):
            y = r.normal(0.0, sigma, 40000)
            noisy = -np.log2(relaxed_likelihood(y + r.uniform(-0.5, 0.5, y.shape), 0.0, sigma).data).mean()
            discrete = -np.log2(relaxed_likelihood(np.round(y), 0.0, sigma).data).mean()
            assert abs(noisy - discrete) / discrete < 0.05


class TestPmf:
    @pytest.mark.parametrize("kind", KINDS)
    def test_normalization_with_tails(self, kind, rng):
        mu = rng.uniform(-70, 70, 1000)
        sigma = rng.uniform(0.11, 80, 1000)
        pmf, tail = discretized_pmf(mu, sigma, kind, -64, 63)
        assert np.abs(pmf.sum(-1) + tail - 1).max() < 1e-9
        assert (pmf >= 0).all() and (tail >= 0).all()

    def test_matches_relaxed_likelihood(self, rng):
        mu, sigma = rng.normal(0, 3, 20), rng.uniform(0.2, 5, 20)
        pmf, _ = discretized_pmf(mu, sigma, "gaussian", -10, 10)
        k = np.arange(-10, 11)
        ref = relaxed_likelihood(k[None], mu[:, None], sigma[:, None], floor=0.0).data
        np.testing.assert_allclose(pmf, ref, rtol=1e-12, atol=1e-300)

    @pytest.mark.parametrize("kind", KINDS)
    def test_cdf_monotone_sweep(self, kind):
        x = np.linspace(-40, 40, 20001)
        F = cdf(kind, x)
        assert np.all(np.diff(F) >= 0) and F[0] >= 0 and F[-1] <= 1
        assert cdf(kind, np.array([-1e6]))[0] == pytest.approx(0, abs=1e-300)
        assert cdf(kind, np.array([1e6]))[0] == 1.0

    @settings(max_examples=200, deadline=None)
    @given(mu=st.floats(-100, 100), sigma=st.floats(0.11, 200), kind=st.sampled_from(KINDS))
    def test_normalization_property(self, mu, sigma, kind):
        pmf, tail = discretized_pmf(mu, sigma, kind, -64, 63)
        assert abs(pmf.sum() + tail - 1) < 1e-9


class TestRateBits:
    def test_examples(self):
        assert rate_bits(np.ones(7)).item() == 0.0
        assert rate_bits(np.full(100, 0.5)).item() == pytest.approx(100.0, abs=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            rate_bits(np.array([0.5, bad]))


class TestFactorizedDensity:
    def test_symmetric_at_init(self):
        d = FactorizedDensity(4)
        assert np.allclose(d.cdf_np(np.zeros((4, 1))), 0.5, atol=1e-15)
        v = np.arange(-6, 7, dtype=float)
        for c in range(4):
            p = d.likelihood_np(v, c)
            np.testing.assert_allclose(p, p[::-1], rtol=1e-12)

    def _jittered(self, channels=6, seed=0):
        d = FactorizedDensity(channels)
        r = np.random.default_rng(seed)
        for p in d.parameters():
            p.assign(p.data + r.normal(0, 0.5, p.shape))
        return d

    def test_strictly_increasing(self):
        d = self._jittered()
        x = np.sort(np.random.default_rng(1).uniform(-30, 30, 1000))
        c = d.cdf_np(np.repeat(x[None], d.channels, axis=0))
        assert np.all(np.diff(c, axis=1) > 0)
        assert np.all((c > 0) & (c < 1))

    def test_every_channel_normalizes(self):
        d = self._jittered(channels=16)
        pmf, tail = factorized_pmf(d, -32, 31)
        assert np.abs(pmf.sum(-1) + tail - 1).max() < 1e-9

    def test_tensor_and_array_paths_agree(self, rng):
        d = self._jittered(channels=3)
        v = np.round(rng.normal(0, 3, size=(2, 3, 4, 5)))
        p = d.likelihood(v).data
        for c in range(3):
            np.testing.assert_allclose(p[:, c].ravel(), d.likelihood_np(v[:, c].ravel(), c), rtol=1e-12)

    def test_centre_bin_where_logits_cancel(self):
        # at v = 0 the two logits sum to exactly zero, the sign-flip edge case
        d = FactorizedDensity(2)
        c = d.cdf_np(np.array([[-0.5, 0.5], [-0.5, 0.5]]))[0]
        assert d.likelihood_np(np.zeros(1), 0)[0] == pytest.approx(c[1] - c[0], rel=1e-12)
        assert c[1] - c[0] > 0.02

    def test_bad_channel(self):
        with pytest.raises(IndexError):
            FactorizedDensity(2).likelihood_np(np.zeros(1), 2)

    def test_channel_count_checked(self):
        with pytest.raises(ValueError):
            FactorizedDensity(2).likelihood(np.zeros((1, 3, 2, 2)))
