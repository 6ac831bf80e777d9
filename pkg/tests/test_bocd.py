import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from depegwatch.bocd import (
    Changepoint,
    DetectorConfig,
    NGParams,
    detect_series,
    hazard,
    init_state,
    log_sum_exp,
    ng_update,
    state_from_dict,
    state_to_dict,
    step,
    student_t_logpdf,
)
from depegwatch.core import MetricSeries, ValidationError
from oracles import brute_force_run_length_posteriors, scipy_t_logpdf

PP = "posterior_predictive"


def make_series(values, start_ts=3600, period=3600):
    values = np.asarray(values, dtype=float)
    ts = start_ts + period * np.arange(len(values), dtype=np.int64)
    return MetricSeries("m", "p", ts, values)


class TestHazard:
    def test_default_lambda(self):
        assert hazard(DetectorConfig(hazard_lambda=100.0)) == 0.01

    def test_lambda_two(self):
        assert hazard(DetectorConfig(hazard_lambda=2.0)) == 0.5

    def test_constant_in_run_length(self):
        cfg = DetectorConfig()
        assert len({hazard(cfg) for _ in range(5)}) == 1

    def test_lambda_must_exceed_one(self):
        with pytest.raises(ValidationError):
            DetectorConfig(hazard_lambda=1.0)


class TestStudentTLogpdf:
    @pytest.mark.parametrize("mode", ["paper", PP])
    def test_symmetric_about_mu(self, mode):
        p = NGParams(0.7, 2.0, 1.5, 3.0)
        for dx in (0.1, 1.0, 4.2):
            assert student_t_logpdf(p.mu + dx, p, mode) == pytest.approx(
                student_t_logpdf(p.mu - dx, p, mode), rel=1e-14)

    @pytest.mark.parametrize("mode", ["paper", PP])
    def test_maximized_at_mu(self, mode):
        p = NGParams(-1.2, 1.0, 2.0, 0.5)
        peak = student_t_logpdf(p.mu, p, mode)
        for dx in (0.05, 0.5, 2.0):
            assert student_t_logpdf(p.mu + dx, p, mode) < peak

    @pytest.mark.parametrize("mode", ["paper", PP])
    @pytest.mark.parametrize("params", [
        NGParams(0.0, 1.0, 1.0, 1.0),
        NGParams(0.5, 2.5, 0.3, 4.0),
        NGParams(-2.0, 0.7, 5.0, 0.2),
    ])
    def test_normalizes_to_one(self, mode, params):
        # quadrature oracle
        total, err = integrate.quad(
            lambda x: math.exp(student_t_logpdf(x, params, mode)),
            -np.inf, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_paper_scale_omits_kappa_plus_one(self):
        p = NGParams(0.0, 1.0, 1.0, 1.0)
        assert student_t_logpdf(0.0, p, "paper") == pytest.approx(
            scipy_t_logpdf(0.0, p, "paper"), rel=1e-12)
        assert student_t_logpdf(0.0, p, PP) == pytest.approx(
            scipy_t_logpdf(0.0, p, PP), rel=1e-12)
        assert student_t_logpdf(0.0, p, "paper") != pytest.approx(
            student_t_logpdf(0.0, p, PP), rel=1e-3)


class TestNGUpdate:
    def test_observation_at_mean_keeps_mu_beta(self):
        p = NGParams(1.5, 2.0, 3.0, 4.0)
        out = ng_update(p, 1.5)
        assert out.mu == p.mu and out.beta == p.beta
        assert out.kappa == p.kappa + 1 and out.alpha == p.alpha + 0.5

    def test_direct_evaluation(self):
        out = ng_update(NGParams(0.0, 1.0, 1.0, 1.0), 2.0)
        assert out == NGParams(mu=1.0, alpha=1.5, beta=2.0, kappa=2.0)

    def test_repeated_updates_grow_kappa_alpha(self):
        p = NGParams(0.0, 1.0, 1.0, 1.0)
        for _ in range(7):
            p = ng_update(p, 0.3)
        assert p.kappa == 8.0 and p.alpha == 4.5

    def test_positivity_required(self):
        with pytest.raises(ValidationError):
            NGParams(0.0, 0.0, 1.0, 1.0)


class TestStep:
    def test_first_observation_posterior(self):
        cfg = DetectorConfig(hazard_lambda=100.0)
        state, cp = step(init_state(cfg), 0.37, cfg)
        post = dict(zip(state.runs.tolist(), state.posterior().tolist()))
        assert post[0] == pytest.approx(0.01, rel=1e-12)
        assert post[1] == pytest.approx(0.99, rel=1e-12)
        assert state.prev_gamma == 1
        assert cp is None

    def test_iid_prior_consistent_data_never_emits(self):
        rng = np.random.default_rng(42)
        cfg = DetectorConfig(predictive_scale=PP)
        state = init_state(cfg)
        for t, x in enumerate(rng.standard_normal(50), start=1):
            state, cp = step(state, float(x), cfg)
            assert state.prev_gamma == t
            assert cp is None

    def test_jump_detected_within_three_steps(self):
        rng = np.random.default_rng(11)
        xs = np.concatenate([rng.normal(0, 1, 500), rng.normal(10, 1, 10)])
        cfg = DetectorConfig(predictive_scale=PP)
        cps, _, _ = detect_series(make_series(xs), cfg)
        assert any(501 <= cp.step <= 503 for cp in cps)

    def test_rejects_non_finite(self):
        cfg = DetectorConfig()
        with pytest.raises(ValidationError):
            step(init_state(cfg), float("nan"), cfg)

    def test_posterior_normalizes_every_step(self):
        rng = np.random.default_rng(1)
        cfg = DetectorConfig(predictive_scale=PP)
        state = init_state(cfg)
        for x in rng.standard_normal(200) * 3:
            state, _ = step(state, float(x), cfg)
            assert state.posterior().sum() == pytest.approx(1.0, abs=1e-9)

    def test_support_grows_by_one_or_resets(self):
        rng = np.random.default_rng(8)
        cfg = DetectorConfig(prob_floor=0.0)
        state = init_state(cfg)
        for t, x in enumerate(rng.standard_normal(40), start=1):
            state, _ = step(state, float(x), cfg)
            assert set(state.runs.tolist()) <= set(range(t + 1))
            assert state.runs[0] == 0


class TestExactness:
    @pytest.mark.parametrize("mode", ["paper", PP])
    def test_matches_brute_force_enumeration(self, mode):
        rng = np.random.default_rng(123)
        cfg = DetectorConfig(hazard_lambda=50.0,
                             prior=NGParams(0.0, 1.5, 0.8, 2.0),
                             prob_floor=0.0, predictive_scale=mode)
        for _ in range(6):
            T = int(rng.integers(2, 11))
            xs = rng.normal(0, 2, T).tolist()
            oracle = brute_force_run_length_posteriors(xs, cfg)
            state = init_state(cfg)
            for t, x in enumerate(xs, start=1):
                state, _ = step(state, x, cfg)
                got = dict(zip(state.runs.tolist(),
                               state.posterior().tolist()))
                for r in set(oracle[t - 1]) | set(got):
                    assert abs(oracle[t - 1].get(r, 0.0) - got.get(r, 0.0)) < 1e-8


class TestPruning:
    def test_floor_does_not_change_emissions(self):
        rng = np.random.default_rng(2)
        xs = np.concatenate([rng.normal(0, 1, 300), rng.normal(5, 1, 100)])
        series = make_series(xs)
        base = dict(hazard_lambda=100.0, predictive_scale=PP)
        pruned, _, _ = detect_series(series, DetectorConfig(
            prob_floor=1e-12, **base))
        exact, _, _ = detect_series(series, DetectorConfig(
            prob_floor=0.0, **base))
        assert [c.step for c in pruned] == [c.step for c in exact]

    def test_max_run_length_caps_support(self):
        rng = np.random.default_rng(3)
        cfg = DetectorConfig(max_run_length=20, prob_floor=0.0,
                             predictive_scale=PP)
        state = init_state(cfg)
        for x in rng.standard_normal(60):
            state, _ = step(state, float(x), cfg)
        assert state.runs.max() <= 20

    def test_prob_floor_validation(self):
        DetectorConfig(prob_floor=0.0)
        DetectorConfig(prob_floor=1e-9)
        with pytest.raises(ValidationError):
            DetectorConfig(prob_floor=1e-3)


class TestDetectSeries:
    def test_empty_series(self):
        cps, trace, state = detect_series(make_series([]), DetectorConfig())
        assert cps == [] and trace == [] and state.t == 0

    def test_constant_zero_series_no_emissions(self):
        cps, _, _ = detect_series(make_series(np.zeros(100)),
                                  DetectorConfig(predictive_scale=PP))
        assert cps == []

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        series = make_series(rng.standard_normal(150))
        cfg = DetectorConfig(predictive_scale=PP)
        a = detect_series(series, cfg)
        b = detect_series(series, cfg)
        assert a[0] == b[0]
        assert a[1] == b[1]

    def test_trace_has_one_point_per_step(self):
        series = make_series([0.1, -0.2, 0.3])
        _, trace, _ = detect_series(series, DetectorConfig())
        assert [p.step for p in trace] == [1, 2, 3]
        assert [p.ts for p in trace] == series.timestamps.tolist()

    def test_emission_marks_discontinuity_step(self):
        rng = np.random.default_rng(2)
        xs = np.concatenate([rng.normal(0, 1, 500), rng.normal(5, 1, 500)])
        cps, trace, _ = detect_series(make_series(xs),
                                      DetectorConfig(predictive_scale=PP))
        steps = [c.step for c in cps]
        assert steps == [501]
        assert all(isinstance(c, Changepoint) and 0 < c.probability <= 1
                   for c in cps)


class TestStatePersistence:
    def test_round_trip_preserves_bits(self):
        rng = np.random.default_rng(4)
        cfg = DetectorConfig(predictive_scale=PP)
        state = init_state(cfg)
        for x in rng.standard_normal(37):
            state, _ = step(state, float(x), cfg)
        doc = json.loads(json.dumps(state_to_dict(state, cfg)))
        restored, cfg2 = state_from_dict(doc)
        assert cfg2 == cfg
        assert restored.t == state.t
        assert restored.prev_gamma == state.prev_gamma
        assert np.array_equal(restored.log_joint, state.log_joint)
        assert np.array_equal(restored.mu, state.mu)
        assert np.array_equal(restored.beta, state.beta)

    def test_resume_equals_whole_run_bit_exact(self):
        rng = np.random.default_rng(6)
        series = make_series(np.concatenate([rng.normal(0, 1, 100),
                                             rng.normal(3, 1, 100)]))
        cfg = DetectorConfig(predictive_scale=PP)
        whole_cps, whole_trace, whole_state = detect_series(series, cfg)

        first = MetricSeries("m", "p", series.timestamps[:100].copy(),
                             series.values[:100].copy())
        second = MetricSeries("m", "p", series.timestamps[100:].copy(),
                              series.values[100:].copy())
        cps1, trace1, mid_state = detect_series(first, cfg)
        doc = json.loads(json.dumps(state_to_dict(mid_state, cfg)))
        resumed, cfg2 = state_from_dict(doc)
        cps2, trace2, end_state = detect_series(second, cfg2, resumed)

        assert cps1 + cps2 == whole_cps
        assert trace1 + trace2 == whole_trace
        assert np.array_equal(end_state.log_joint, whole_state.log_joint)

    def test_version_mismatch_rejected(self):
        cfg = DetectorConfig()
        doc = state_to_dict(init_state(cfg), cfg)
        doc["version"] = 99
        with pytest.raises(ValidationError):
            state_from_dict(doc)


class TestLogSumExp:
    def test_matches_naive(self):
        arr = np.array([-1000.0, -1001.0, -999.5])
        naive = math.log(sum(math.exp(v + 1000) for v in arr)) - 1000
        assert log_sum_exp(arr) == pytest.approx(naive, rel=1e-12)

    def test_empty_and_neg_inf(self):
        assert log_sum_exp(np.array([])) == -math.inf
        assert log_sum_exp(np.array([-math.inf, -math.inf])) == -math.inf
