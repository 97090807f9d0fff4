"""Displacement metrics, losses and the worst-case stratification protocol."""

import json
import math

import numpy as np
import pytest

from oracles import worst_case_oracle
from tailscope.errors import ParseError, UsageError, ValidationError
from tailscope.evaluation import (
    EvalReport,
    ForecastSample,
    LossWeights,
    evaluate,
    min_ade,
    min_fde,
    miss_rate,
    parse_forecast_jsonl,
    rmse,
    task_loss,
    total_loss,
    worst_case_subsets,
)


def straight_gt(horizon=5):
    return np.column_stack([np.arange(horizon, dtype=float), np.zeros(horizon)])


def offset_mode(gt, dx=0.0, dy=0.0):
    return gt + np.array([dx, dy])


def sample_from_offsets(sample_id, offsets, probs=None, horizon=5):
    gt = straight_gt(horizon)
    modes = np.stack([offset_mode(gt, dx, dy) for dx, dy in offsets])
    if probs is None:
        probs = np.full(len(offsets), 1.0 / len(offsets))
    return ForecastSample(sample_id=sample_id, modes=modes, probs=probs, gt=gt)


def random_sample(rng, sample_id, k=4, horizon=6):
    gt = rng.normal(size=(horizon, 2))
    modes = gt[None] + rng.normal(size=(k, horizon, 2))
    probs = rng.uniform(0.1, 1.0, size=k)
    probs = probs / probs.sum()
    return ForecastSample(sample_id=sample_id, modes=modes, probs=probs, gt=gt)


class TestMinAde:
    def test_exact_mode_gives_zero(self):
        sample = sample_from_offsets("s", [(0.0, 0.0), (9.0, 0.0)])
        assert min_ade(sample, 2) == 0.0

    def test_constant_offset_distance(self):
        sample = sample_from_offsets("s", [(3.0, 4.0)], probs=np.array([1.0]))
        assert min_ade(sample, 1) == pytest.approx(5.0, abs=1e-12)

    def test_min_over_modes(self):
        sample = sample_from_offsets("s", [(2.0, 0.0), (1.5, 0.0)])
        assert min_ade(sample, 2) == pytest.approx(1.5, abs=1e-12)

    def test_k_truncates_by_probability(self):
        # best mode has low probability; k=1 must use the high-probability one
        sample = sample_from_offsets(
            "s", [(2.0, 0.0), (0.0, 0.0)], probs=np.array([0.9, 0.1])
        )
        assert min_ade(sample, 1) == pytest.approx(2.0, abs=1e-12)
        assert min_ade(sample, 2) == 0.0

    def test_k_out_of_range(self):
        sample = sample_from_offsets("s", [(1.0, 0.0)], probs=np.array([1.0]))
        with pytest.raises(UsageError):
            min_ade(sample, 2)

    def test_non_increasing_in_k(self, rng):
        for i in range(30):
            sample = random_sample(rng, f"s{i}")
            values = [min_ade(sample, k) for k in range(1, sample.n_modes + 1)]
            assert all(a >= b for a, b in zip(values, values[1:]))

    def test_bounded_by_top_mode_ade(self, rng):
        from tailscope.evaluation import ade_per_mode

        for i in range(20):
            sample = random_sample(rng, f"s{i}")
            top_mode_ade = float(ade_per_mode(sample)[np.argmax(sample.probs)])
            for k in range(1, sample.n_modes + 1):
                assert min_ade(sample, k) <= top_mode_ade + 1e-15


class TestMinFde:
    def test_final_points_coincide(self):
        gt = straight_gt()
        modes = np.stack([np.vstack([gt[:-1] + 5.0, gt[-1:]])])
        sample = ForecastSample("s", modes, np.array([1.0]), gt)
        assert min_fde(sample, 1) == 0.0
        assert min_ade(sample, 1) > 0.0

    def test_min_over_final_offsets(self):
        sample = sample_from_offsets("s", [(5.0, 0.0), (0.0, 2.0)])
        assert min_fde(sample, 2) == pytest.approx(2.0, abs=1e-12)


class TestMissRate:
    def test_exact_forecasts_never_miss(self):
        samples = [sample_from_offsets(f"s{i}", [(0.0, 0.0)], probs=np.array([1.0])) for i in range(4)]
        assert miss_rate(samples, 1) == 0.0

    def test_miss_above_threshold(self):
        samples = [sample_from_offsets("s", [(0.0, 2.5)], probs=np.array([1.0]))]
        assert miss_rate(samples, 1, threshold=2.0) == 1.0

    def test_boundary_is_not_a_miss(self):
        samples = [sample_from_offsets("s", [(0.0, 2.0)], probs=np.array([1.0]))]
        assert miss_rate(samples, 1, threshold=2.0) == 0.0

    def test_non_increasing_in_threshold_and_k(self, rng):
        samples = [random_sample(rng, f"s{i}") for i in range(40)]
        rates_t = [miss_rate(samples, 2, threshold=t) for t in (0.5, 1.0, 2.0, 4.0)]
        assert all(a >= b for a, b in zip(rates_t, rates_t[1:]))
        rates_k = [miss_rate(samples, k) for k in (1, 2, 3, 4)]
        assert all(a >= b for a, b in zip(rates_k, rates_k[1:]))

    def test_empty_set_rejected(self):
        with pytest.raises(UsageError):
            miss_rate([], 1)


class TestRmse:
    def test_exact_forecasts(self):
        samples = [sample_from_offsets(f"s{i}", [(0.0, 0.0)], probs=np.array([1.0])) for i in range(3)]
        out = rmse(samples)
        assert np.all(out["per_horizon"] == 0.0)
        assert out["overall"] == 0.0

    def test_constant_offset(self):
        samples = [sample_from_offsets("s", [(1.0, 0.0)], probs=np.array([1.0]))]
        out = rmse(samples)
        assert np.allclose(out["per_horizon"], 1.0, atol=1e-12)
        assert out["overall"] == pytest.approx(1.0, abs=1e-12)

    def test_two_sample_pooling(self):
        a = sample_from_offsets("a", [(1.0, 0.0)], probs=np.array([1.0]))
        b = sample_from_offsets("b", [(3.0, 0.0)], probs=np.array([1.0]))
        out = rmse([a, b])
        assert np.allclose(out["per_horizon"], math.sqrt(5.0), atol=1e-12)

    def test_uses_highest_probability_mode(self):
        sample = sample_from_offsets(
            "s", [(0.0, 0.0), (2.0, 0.0)], probs=np.array([0.2, 0.8])
        )
        assert rmse([sample])["overall"] == pytest.approx(2.0, abs=1e-12)

    def test_mixed_horizons_rejected(self):
        a = sample_from_offsets("a", [(0.0, 0.0)], probs=np.array([1.0]), horizon=5)
        b = sample_from_offsets("b", [(0.0, 0.0)], probs=np.array([1.0]), horizon=6)
        with pytest.raises(UsageError):
            rmse([a, b])


class TestWorstCase:
    def test_hundred_samples_top_five(self):
        errors = {f"s{i:03d}": float(i) for i in range(1, 101)}
        out = worst_case_subsets(errors, [5.0])
        assert out[5.0]["count"] == 5
        assert out[5.0]["mean"] == pytest.approx(98.0)
        assert sorted(out[5.0]["sample_ids"]) == [f"s{i:03d}" for i in range(96, 101)]

    def test_top_hundred_percent_is_whole_set_mean(self):
        errors = {f"s{i}": float(i) for i in range(10)}
        out = worst_case_subsets(errors, [100.0])
        assert out[100.0]["count"] == 10
        assert out[100.0]["mean"] == pytest.approx(4.5)

    def test_ties_resolved_by_descending_id(self):
        errors = {f"s{i}": 1.0 for i in range(10)}
        out = worst_case_subsets(errors, [20.0])
        assert out[20.0]["sample_ids"] == ["s9", "s8"]
        assert out[20.0]["mean"] == 1.0

    def test_matches_brute_force_oracle(self, rng):
        errors = {f"s{i:04d}": float(rng.uniform(0, 50)) for i in range(333)}
        for p in (1.0, 2.5, 33.3, 100.0):
            got = worst_case_subsets(errors, [p])[p]
            want = worst_case_oracle(errors, p)
            assert got["count"] == want["count"]
            assert got["sample_ids"] == want["sample_ids"]
            assert got["mean"] == pytest.approx(want["mean"], rel=1e-12)

    def test_percent_bounds(self):
        with pytest.raises(UsageError):
            worst_case_subsets({"a": 1.0}, [0.0])
        with pytest.raises(UsageError):
            worst_case_subsets({"a": 1.0}, [100.5])


class TestLosses:
    def test_exact_confident_mode_zero_loss(self):
        sample = sample_from_offsets("s", [(0.0, 0.0)], probs=np.array([1.0]))
        out = task_loss(sample)
        assert out["l_task"] == 0.0
        assert out["k_star"] == 0

    def test_exact_half_confident_mode(self):
        sample = sample_from_offsets(
            "s", [(0.0, 0.0), (4.0, 0.0)], probs=np.array([0.5, 0.5])
        )
        out = task_loss(sample, LossWeights(lambda_cls=1.0))
        assert out["l_task"] == pytest.approx(math.log(2.0), abs=1e-12)

    def test_zero_classification_weight(self):
        sample = sample_from_offsets("s", [(1.0, 0.0)], probs=np.array([1.0]))
        out = task_loss(sample, LossWeights(lambda_cls=0.0))
        assert out["l_task"] == pytest.approx(1.0, abs=1e-12)  # mean squared L2 of 1 m offset

    def test_total_loss_weighting(self):
        assert total_loss(0.0, 0.0, 0.0) == 0.0
        assert total_loss(1.0, 2.0, 3.0) == 6.0
        assert total_loss(1.0, 2.0, 3.0, LossWeights(lambda_1=0.5, lambda_2=2.0)) == 8.0

    def test_probability_floor(self):
        sample = sample_from_offsets(
            "s", [(0.0, 0.0), (4.0, 0.0)], probs=np.array([0.0, 1.0])
        )
        out = task_loss(sample, LossWeights(lambda_cls=1.0))
        assert out["k_star"] == 0  # exact mode wins despite zero probability
        assert out["l_task"] == pytest.approx(-math.log(1e-12), rel=1e-12)

    def test_weights_non_negative(self):
        with pytest.raises(ValidationError):
            LossWeights(lambda_1=-0.5)


class TestParseJsonl:
    def line(self, sample_id="a", modes=None, probs=None, gt=None):
        return json.dumps(
            {
                "sample_id": sample_id,
                "modes": modes or [[[0.0, 0.0], [1.0, 0.0]]],
                "probs": probs or [1.0],
                "gt": gt or [[0.0, 0.0], [1.0, 0.0]],
            }
        )

    def test_round_trip(self):
        text = self.line("a") + "\n" + self.line("b") + "\n"
        samples = parse_forecast_jsonl(text)
        assert [s.sample_id for s in samples] == ["a", "b"]

    def test_bad_json_names_line(self):
        text = self.line("a") + "\n{oops\n"
        with pytest.raises(ParseError, match="line 2"):
            parse_forecast_jsonl(text)

    def test_missing_key_names_line(self):
        text = '{"sample_id": "a"}\n'
        with pytest.raises(ParseError, match="line 1"):
            parse_forecast_jsonl(text)

    def test_bad_probs_rejected(self):
        text = self.line(probs=[0.4])
        with pytest.raises(ParseError, match="sum to 1"):
            parse_forecast_jsonl(text)

    def test_duplicate_id_rejected(self):
        text = self.line("a") + "\n" + self.line("a")
        with pytest.raises(ParseError, match="duplicate"):
            parse_forecast_jsonl(text)


class TestEvaluate:
    def test_report_self_consistency(self, rng):
        samples = [random_sample(rng, f"s{i:03d}") for i in range(50)]
        report = evaluate(
            samples, ks=(1, 2, 4), percents=(10.0, 50.0), rank_metric="min_ade", rank_k=2
        )
        for k in (1, 2, 4):
            per = [row["min_ade"][str(k)] for row in report.per_sample]
            assert report.aggregate["min_ade"][str(k)] == pytest.approx(np.mean(per), rel=1e-12)
            per_f = [row["min_fde"][str(k)] for row in report.per_sample]
            assert report.aggregate["min_fde"][str(k)] == pytest.approx(np.mean(per_f), rel=1e-12)
        # worst-case strata recomputable from the per-sample table
        by_id = {row["sample_id"]: row for row in report.per_sample}
        for key, stratum in report.worst_case.items():
            p = float(key.removeprefix("top"))
            assert stratum["count"] == math.ceil(p * len(samples) / 100.0)
            mean_ade = np.mean([by_id[i]["min_ade"]["2"] for i in stratum["sample_ids"]])
            assert stratum["min_ade"] == pytest.approx(mean_ade, rel=1e-12)

    def test_worst_case_means_non_increasing_in_percent(self, rng):
        samples = [random_sample(rng, f"s{i:03d}") for i in range(60)]
        report = evaluate(
            samples, ks=(2,), percents=(5.0, 20.0, 50.0, 100.0), rank_metric="min_fde", rank_k=2
        )
        means = [report.worst_case[f"top{p:g}"]["min_fde"] for p in (5.0, 20.0, 50.0, 100.0)]
        assert all(a >= b - 1e-12 for a, b in zip(means, means[1:]))

    def test_rank_metric_required_with_percents(self, rng):
        samples = [random_sample(rng, "s0")]
        with pytest.raises(UsageError, match="rank_metric"):
            evaluate(samples, ks=(1,), percents=(5.0,))

    def test_jsonable(self, rng):
        samples = [random_sample(rng, f"s{i}") for i in range(5)]
        report = evaluate(samples, ks=(1,), percents=(50.0,), rank_metric="min_ade", rank_k=1)
        payload = json.dumps(report.to_jsonable(), sort_keys=True)
        assert "per_sample" in payload and "worst_case" in payload
