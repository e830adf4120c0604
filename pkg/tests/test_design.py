import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import chisquare, norm

from seqstop import CandidateSet, EiConfig, ei_score, lhs_candidates, loss_sign, loss_zc, select_batch
from seqstop.design import (
    empirical_step_error,
    normalized_scores,
    selection_weights,
    termination_check,
)


def quadrature_zc(m, v):
    """Independent oracle: E[|y| 1{sign y != sign m}] under N(m, v)."""
    sd = np.sqrt(v)
    sign = 1.0 if m >= 0 else -1.0
    lo, hi = (-np.inf, 0.0) if sign > 0 else (0.0, np.inf)
    val, _ = integrate.quad(lambda y: abs(y) * norm.pdf(y, m, sd), lo, hi, limit=200)
    return val


class TestLossZc:
    def test_centered_unit_variance(self):
        assert loss_zc(0.0, 1.0) == pytest.approx(norm.pdf(0.0), abs=1e-6)
        assert loss_zc(0.0, 1.0) == pytest.approx(0.39894, abs=1e-5)

    def test_shifted_unit_variance(self):
        assert loss_zc(1.0, 1.0) == pytest.approx(norm.pdf(1) - norm.cdf(-1), abs=1e-6)
        assert loss_zc(1.0, 1.0) == pytest.approx(0.08331, abs=1e-5)

    def test_vanishing_variance(self):
        assert loss_zc(2.0, 0.0) == 0.0
        assert loss_zc(2.0, 1e-20) == pytest.approx(0.0, abs=1e-12)

    def test_matches_quadrature_on_grid(self):
        ms = np.linspace(-2.0, 2.0, 5)
        vs = np.linspace(0.05, 4.0, 5)
        for m in ms:
            for v in vs:
                assert loss_zc(m, v) == pytest.approx(quadrature_zc(m, v), abs=1e-6)

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            loss_zc(0.0, -1.0)

    def test_monotone_in_mean_and_variance(self):
        ms = np.linspace(0.05, 3.0, 12)
        vals = loss_zc(ms, np.ones_like(ms))
        assert np.all(np.diff(vals) < 0)
        vs = np.linspace(0.05, 3.0, 12)
        vals = loss_zc(np.ones_like(vs), vs)
        assert np.all(np.diff(vals) > 0)


class TestLossSign:
    def test_centered_is_half(self):
        assert loss_sign(0.0, 1.0) == 0.5

    def test_tail_probability(self):
        assert loss_sign(1.96, 1.0) == pytest.approx(0.0250, abs=1e-4)
        assert loss_sign(-1.96, 1.0) == pytest.approx(0.0250, abs=1e-4)

    def test_zero_variance(self):
        assert loss_sign(1.0, 0.0) == 0.0
        assert loss_sign(0.0, 0.0) == 0.5

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            loss_sign(0.0, -0.5)


class TestEiScore:
    def test_annihilation(self):
        assert ei_score(0.0, 0.3, 2.0) == 0.0

    def test_product(self):
        assert ei_score(0.1, 0.05, 2.0) == pytest.approx(0.01)

    def test_homogeneous_in_density(self):
        assert ei_score(0.2, 0.3, 4.0) == pytest.approx(2 * ei_score(0.2, 0.3, 2.0))

    def test_rejects_negative_components(self):
        with pytest.raises(ValueError):
            ei_score(-0.1, 0.5, 1.0)


class TestLhs:
    def test_one_point_per_stratum(self, rng):
        box = np.array([[0.0, 4.0]])
        pts = lhs_candidates(box, 4, rng)
        assert sorted(np.floor(pts[:, 0]).astype(int).tolist()) == [0, 1, 2, 3]

    @given(count=st.integers(min_value=2, max_value=64), seed=st.integers(0, 2**30))
    @settings(max_examples=25, deadline=None)
    def test_projections_stratified(self, count, seed):
        box = np.array([[-1.0, 3.0], [10.0, 12.0]])
        pts = lhs_candidates(box, count, np.random.default_rng(seed))
        for j in range(2):
            u = (pts[:, j] - box[j, 0]) / (box[j, 1] - box[j, 0])
            assert sorted(np.floor(u * count).astype(int).tolist()) == list(range(count))

    def test_seed_determinism(self):
        box = np.array([[0.0, 1.0], [0.0, 1.0]])
        a = lhs_candidates(box, 16, np.random.default_rng(7))
        b = lhs_candidates(box, 16, np.random.default_rng(7))
        c = lhs_candidates(box, 16, np.random.default_rng(8))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_rejects_degenerate_box(self, rng):
        with pytest.raises(ValueError):
            lhs_candidates(np.array([[1.0, 1.0]]), 4, rng)


def make_candidates(scores):
    scores = np.asarray(scores, float)
    pts = np.arange(len(scores), dtype=float)[:, None]
    z = np.zeros_like(scores)
    return CandidateSet(points=pts, loss=z, alc=z, density=z, score=scores)


class TestSelectBatch:
    def test_flat_scores_sample_uniformly(self, rng):
        config = EiConfig(beta=0.5)
        cands = make_candidates(np.ones(8))
        idx = select_batch(cands, config, rng, size=8000)[:, 0].astype(int)
        counts = np.bincount(idx, minlength=8)
        assert chisquare(counts).pvalue > 0.01

    def test_beta_zero_is_uniform(self, rng):
        config = EiConfig(beta=0.0)
        cands = make_candidates(np.linspace(0, 5, 10))
        idx = select_batch(cands, config, rng, size=10_000)[:, 0].astype(int)
        counts = np.bincount(idx, minlength=10)
        assert chisquare(counts).pvalue > 0.01

    def test_spike_dominates_with_large_beta(self, rng):
        config = EiConfig(beta=50.0, cap=20.0)
        scores = np.zeros(40)
        scores[17] = 2.0
        cands = make_candidates(scores)
        chosen = select_batch(cands, config, rng, size=200)[:, 0].astype(int)
        assert np.all(chosen == 17)

    def test_weights_monotone_in_score(self):
        config = EiConfig(beta=0.7)
        scores = np.array([0.0, 0.5, 1.0, 2.0, 4.0])
        w = selection_weights(scores, config)
        assert np.all(np.diff(w) >= 0)

    def test_greedy_pure_exploration_is_uniform(self, rng):
        config = EiConfig(rule="greedy", epsilon=1.0)
        cands = make_candidates(np.linspace(0, 5, 12))
        idx = select_batch(cands, config, rng, size=12_000)[:, 0].astype(int)
        assert chisquare(np.bincount(idx, minlength=12)).pvalue > 0.01

    def test_greedy_exploitation_takes_argmax(self, rng):
        config = EiConfig(rule="greedy", epsilon=0.0)
        cands = make_candidates(np.array([0.1, 0.9, 0.3]))
        chosen = select_batch(cands, config, rng, size=50)[:, 0].astype(int)
        assert np.all(chosen == 1)

    def test_duplicates_allowed(self, rng):
        config = EiConfig(beta=0.0)
        cands = make_candidates(np.ones(3))
        chosen = select_batch(cands, config, rng, size=50)
        assert chosen.shape == (50, 1)


class TestNormalization:
    def test_min_zero_mean_one(self):
        s = normalized_scores(np.array([3.0, 5.0, 10.0]))
        assert s.min() == 0.0
        assert s.mean() == pytest.approx(1.0)

    def test_flat_scores_return_none(self):
        assert normalized_scores(np.full(5, 2.0)) is None


class TestTermination:
    def test_budget_mode_never_stops(self):
        config = EiConfig(termination="budget")
        cands = make_candidates(np.ones(5))
        assert termination_check(cands, 3, 25, config) is False

    def test_certain_model_stops_in_tolerance_mode(self):
        config = EiConfig(termination="tolerance", tol_base=1.0)
        pts = np.zeros((4, 1))
        cands = CandidateSet(points=pts, loss=np.zeros(4), alc=np.ones(4),
                             density=np.ones(4), score=np.zeros(4))
        assert empirical_step_error(cands) == 0.0
        assert termination_check(cands, 3, 25, config)

    def test_zero_tolerance_never_stops(self):
        config = EiConfig(termination="tolerance", tol_base=0.0)
        pts = np.zeros((4, 1))
        cands = CandidateSet(points=pts, loss=np.full(4, 0.1), alc=np.ones(4),
                             density=np.ones(4), score=np.full(4, 0.1))
        assert not termination_check(cands, 3, 25, config)

    def test_clock_conventions_differ(self):
        cands = CandidateSet(points=np.zeros((2, 1)), loss=np.full(2, 1e-6),
                             alc=np.ones(2), density=np.ones(2), score=np.full(2, 1e-6))
        near_end = EiConfig(termination="tolerance", tol_base=1.0, tol_clock="step")
        # step clock: tolerance at t=20 is 3^-20, far tighter than 3^-5
        assert not termination_check(cands, 20, 25, near_end)
        remaining = EiConfig(termination="tolerance", tol_base=1.0, tol_clock="remaining")
        assert termination_check(cands, 20, 25, remaining)
