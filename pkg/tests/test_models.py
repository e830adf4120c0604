import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import kstest, ks_2samp

from seqstop import (
    DensityModel,
    GbmParams,
    SimCounters,
    SvParams,
    density_box,
    gbm_transition,
    state_density,
    sv_transition,
)
from seqstop.models import silverman_bandwidth


@pytest.fixture
def gbm1():
    return GbmParams(spot=40.0, rate=0.06, vol=0.2, dim=1)


class TestGbmTransition:
    def test_deterministic_when_vol_zero(self, rng):
        params = GbmParams(spot=40.0, rate=0.06, vol=0.0, dim=1)
        out = gbm_transition(np.array([40.0]), 1.0, params, rng)
        assert out[0] == pytest.approx(40.0 * math.exp(0.06), abs=1e-10)

    def test_mean_matches_lognormal(self, gbm1, rng):
        draws = gbm_transition(np.full((1_000_000, 1), 40.0), 1.0, gbm1, rng)
        target = 40.0 * math.exp(0.06)
        se = draws.std(ddof=1) / math.sqrt(draws.shape[0])
        assert abs(draws.mean() - target) < 3 * se

    def test_coordinates_independent(self, rng):
        params = GbmParams(spot=40.0, rate=0.06, vol=0.2, dim=2)
        out = gbm_transition(np.full((100_000, 2), 40.0), 1.0, params, rng)
        logret = np.log(out / 40.0)
        corr = np.corrcoef(logret.T)[0, 1]
        assert -0.02 < corr < 0.02

    def test_exact_in_law(self, gbm1, rng):
        out = gbm_transition(np.full((100_000, 1), 40.0), 0.7, gbm1, rng)[:, 0]
        mu = math.log(40.0) + (0.06 - 0.02) * 0.7
        sd = 0.2 * math.sqrt(0.7)
        stat = kstest((np.log(out) - mu) / sd, "norm")
        assert stat.pvalue > 0.01

    def test_chapman_kolmogorov(self, gbm1):
        rng_a = np.random.default_rng(1)
        rng_b = np.random.default_rng(2)
        start = np.full((100_000, 1), 40.0)
        two_half = gbm_transition(gbm_transition(start, 0.3, gbm1, rng_a), 0.3, gbm1, rng_a)
        one_full = gbm_transition(start, 0.6, gbm1, rng_b)
        stat = ks_2samp(two_half[:, 0], one_full[:, 0])
        assert stat.pvalue > 0.01

    def test_counter_counts_rows(self, gbm1, rng):
        counters = SimCounters()
        gbm_transition(np.full((7, 1), 40.0), 0.5, gbm1, rng, counters)
        gbm_transition(np.array([40.0]), 0.5, gbm1, rng, counters)
        assert counters.transitions == 8

    def test_rejects_bad_inputs(self, gbm1, rng):
        with pytest.raises(ValueError):
            gbm_transition(np.array([-1.0]), 1.0, gbm1, rng)
        with pytest.raises(ValueError):
            gbm_transition(np.array([40.0]), 0.0, gbm1, rng)
        with pytest.raises(ValueError):
            GbmParams(spot=-1.0, rate=0.06, vol=0.2, dim=1)


@pytest.fixture
def sv_set1():
    # strong mean reversion, moderate vol-of-vol, daily exercise clock
    return SvParams(rate=0.055, meanrev=3.3, level=-0.583, volvol=0.5,
                    corr=-0.055, euler_step=0.1 / 252, price_floor=1e-8 * 20)


class TestSvTransition:
    def test_constant_logvol_without_noise_or_reversion(self, rng):
        params = SvParams(rate=0.05, meanrev=0.0, level=0.0, volvol=0.0,
                          corr=0.0, euler_step=0.01)
        out = sv_transition(np.array([[20.0, -0.7]] * 100), 0.1, params, rng)
        assert np.all(out[:, 1] == -0.7)

    def test_ou_mean_reverts_to_level(self):
        params = SvParams(rate=0.0, meanrev=8.0, level=-0.5, volvol=0.4,
                          corr=0.0, euler_step=0.005)
        rng = np.random.default_rng(3)
        start = np.column_stack([np.full(100_000, 20.0), np.full(100_000, 0.0)])
        out = sv_transition(start, 1.0, params, rng)
        y = out[:, 1]
        se = y.std(ddof=1) / math.sqrt(y.shape[0])
        assert abs(y.mean() - (-0.5)) < 3 * se + abs(0.0 - (-0.5)) * math.exp(-8.0)

    def test_perfect_correlation_shares_shocks(self):
        params = SvParams(rate=0.0, meanrev=0.0, level=0.0, volvol=0.3,
                          corr=1.0, euler_step=0.01)
        rng = np.random.default_rng(4)
        start = np.array([[10.0, -1.0]] * 5000)
        out = sv_transition(start, 0.01, params, rng)  # single Euler substep
        z1 = (out[:, 0] / 10.0 - 1.0) / (math.exp(-1.0) * 10.0 / 10.0 * math.sqrt(0.01))
        z2 = (out[:, 1] + 1.0) / (0.3 * math.sqrt(0.01))
        assert np.allclose(z1, z2, atol=1e-9)

    def test_clamp_floor_counts(self, rng):
        params = SvParams(rate=0.0, meanrev=0.0, level=3.0, volvol=0.0,
                          corr=0.0, euler_step=0.01, price_floor=1e-4)
        counters = SimCounters()
        start = np.column_stack([np.full(2000, 0.01), np.full(2000, 3.0)])
        out = sv_transition(start, 0.05, params, rng, counters)
        assert counters.sv_clamps > 0
        assert np.all(out[:, 0] >= 1e-4)

    def test_requires_integer_substeps(self, sv_set1, rng):
        with pytest.raises(ValueError):
            sv_transition(np.array([20.0, -0.7]), 0.00037, sv_set1, rng)

    def test_additive_flag_changes_diffusion(self, rng):
        kw = dict(rate=0.0, meanrev=0.0, level=0.0, volvol=0.0, corr=0.0, euler_step=0.01)
        mult = SvParams(multiplicative=True, **kw)
        add = SvParams(multiplicative=False, **kw)
        start = np.array([[50.0, 0.0]] * 40_000)
        a = sv_transition(start, 0.01, mult, np.random.default_rng(5))
        b = sv_transition(start, 0.01, add, np.random.default_rng(5))
        # same shocks: multiplicative moves scale with S (=50x), additive with exp(Y)=1
        assert np.allclose(a[:, 0] - 50.0, 50.0 * (b[:, 0] - 50.0), rtol=1e-9)


class TestStateDensity:
    def test_lognormal_at_log_mean(self, gbm1):
        model = DensityModel("analytic-lognormal", params=gbm1)
        x = 40.0 * math.exp((0.06 - 0.02) * 1.0)
        val = state_density(1.0, np.array([x]), model)
        assert val == pytest.approx(1.0 / (x * 0.2 * math.sqrt(2 * math.pi)), rel=1e-12)

    def test_analytic_integrates_to_one(self, gbm1):
        model = DensityModel("analytic-lognormal", params=gbm1)
        t = 1.0
        hi = 10 * 40.0 * math.exp(0.06 * t)
        total, _ = integrate.quad(
            lambda s: state_density(t, np.array([s]), model), 1e-9, hi, limit=200
        )
        assert abs(total - 1.0) < 1e-4

    def test_kernel_positive_at_reference_point(self, rng):
        samples = rng.normal(40.0, 3.0, size=(200, 2))
        model = DensityModel("kernel-estimate", samples=samples)
        assert state_density(0.5, samples[3], model) > 0

    def test_rejects_nonpositive_time(self, gbm1):
        model = DensityModel("analytic-lognormal", params=gbm1)
        with pytest.raises(ValueError):
            state_density(0.0, np.array([40.0]), model)

    def test_density_nonnegative_everywhere(self, gbm1, rng):
        model = DensityModel("analytic-lognormal", params=gbm1)
        pts = np.c_[rng.uniform(-10.0, 200.0, size=400)]
        assert np.all(state_density(0.3, pts, model) >= 0)

    def test_kernel_needs_samples(self):
        with pytest.raises(ValueError):
            DensityModel("kernel-estimate", samples=np.empty((0, 2)))


class TestDensityBox:
    def test_analytic_box_brackets_quantiles(self, gbm1):
        model = DensityModel("analytic-lognormal", params=gbm1)
        box = density_box(model, 0.8)
        mu = math.log(40.0) + (0.06 - 0.02) * 0.8
        sd = 0.2 * math.sqrt(0.8)
        assert box[0, 0] == pytest.approx(math.exp(mu - 3.0902 * sd), rel=1e-3)
        assert box[0, 1] == pytest.approx(math.exp(mu + 3.0902 * sd), rel=1e-3)

    def test_kernel_box_contains_mass(self, rng):
        samples = rng.normal(0.0, 1.0, size=(500, 1))
        model = DensityModel("kernel-estimate", samples=samples)
        box = density_box(model, 1.0, 0.1, 0.9)
        inside = (samples[:, 0] > box[0, 0]) & (samples[:, 0] < box[0, 1])
        assert 0.7 < inside.mean() < 0.9

    def test_silverman_scales_with_sd(self, rng):
        a = rng.normal(0, 1.0, size=(400, 1))
        assert silverman_bandwidth(3.0 * a)[0] == pytest.approx(3.0 * silverman_bandwidth(a)[0])
