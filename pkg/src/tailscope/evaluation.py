"""Forecast evaluation: displacement errors, miss rate, RMSE, losses and the
worst-case top-k% stratification protocol.

A forecast sample carries K candidate motions with confidence scores and the
ground truth. ``minADE_k``/``minFDE_k`` consider the k highest-probability
modes; the miss rate counts samples whose best final displacement over k
modes strictly exceeds 2 m; RMSE follows the single-most-likely-mode
protocol. The worst-case report ranks every sample by a configurable error
metric and reports the mean errors of the top p% strata.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ParseError, UsageError, ValidationError

#: A sample is missed when its best final displacement exceeds this (m).
MISS_THRESHOLD = 2.0

#: Mode log-probabilities are floored at this before taking the log.
EPS_PROB = 1e-12

RANK_METRICS = ("min_ade", "min_fde")


@dataclass(frozen=True)
class ForecastSample:
    """K forecast modes with probabilities plus the ground-truth motion."""

    sample_id: str
    modes: np.ndarray  # (K, T, 2)
    probs: np.ndarray  # (K,)
    gt: np.ndarray     # (T, 2)

    def __post_init__(self):
        object.__setattr__(self, "modes", np.asarray(self.modes, dtype=float))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        object.__setattr__(self, "gt", np.asarray(self.gt, dtype=float))
        if self.modes.ndim != 3 or self.modes.shape[2] != 2:
            raise ValidationError(
                f"sample {self.sample_id!r}: modes must be (K, T, 2), got {self.modes.shape}"
            )
        if self.gt.ndim != 2 or self.gt.shape != self.modes.shape[1:]:
            raise ValidationError(
                f"sample {self.sample_id!r}: gt shape {self.gt.shape} does not match "
                f"modes {self.modes.shape}"
            )
        if self.probs.shape != (self.modes.shape[0],):
            raise ValidationError(
                f"sample {self.sample_id!r}: need one probability per mode"
            )
        if not (
            np.all(np.isfinite(self.modes))
            and np.all(np.isfinite(self.probs))
            and np.all(np.isfinite(self.gt))
        ):
            raise ValidationError(f"sample {self.sample_id!r}: non-finite values")
        if np.any(self.probs < 0) or abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValidationError(
                f"sample {self.sample_id!r}: probabilities must be >= 0 and sum to 1"
            )

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def horizon(self) -> int:
        return self.modes.shape[1]


@dataclass(frozen=True)
class LossWeights:
    """Balancing weights of the composite training loss."""

    lambda_cls: float = 1.0
    lambda_1: float = 1.0
    lambda_2: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_1", "lambda_2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {value!r}")


def ade_per_mode(sample: ForecastSample) -> np.ndarray:
    """Mean pointwise L2 error of each mode against the ground truth."""
    return np.linalg.norm(sample.modes - sample.gt[None], axis=2).mean(axis=1)


def fde_per_mode(sample: ForecastSample) -> np.ndarray:
    """Final-step L2 error of each mode against the ground truth."""
    return np.linalg.norm(sample.modes[:, -1] - sample.gt[-1], axis=1)


def _top_k_modes(sample: ForecastSample, k: int) -> np.ndarray:
    if not 1 <= k <= sample.n_modes:
        raise UsageError(
            f"sample {sample.sample_id!r}: k={k} outside 1..{sample.n_modes}"
        )
    # Highest-probability modes; stable order keeps ties deterministic.
    return np.argsort(-sample.probs, kind="stable")[:k]


def min_ade(sample: ForecastSample, k: int) -> float:
    """Best average displacement error among the k highest-probability modes."""
    return float(ade_per_mode(sample)[_top_k_modes(sample, k)].min())


def min_fde(sample: ForecastSample, k: int) -> float:
    """Best final displacement error among the k highest-probability modes."""
    return float(fde_per_mode(sample)[_top_k_modes(sample, k)].min())


def miss_rate(samples: Sequence[ForecastSample], k: int, threshold: float = MISS_THRESHOLD) -> float:
    """Fraction of samples whose best final displacement strictly exceeds the threshold."""
    if not samples:
        raise UsageError("miss_rate needs at least one sample")
    misses = sum(1 for s in samples if min_fde(s, k) > threshold)
    return misses / len(samples)


def rmse(samples: Sequence[ForecastSample]) -> dict:
    """RMSE of the single most likely mode, per horizon step and pooled.

    Returns ``{"per_horizon": (T,) array, "overall": float}``. All samples
    must share the forecast horizon.
    """
    if not samples:
        raise UsageError("rmse needs at least one sample")
    horizon = samples[0].horizon
    sq = np.zeros((len(samples), horizon), dtype=float)
    for i, sample in enumerate(samples):
        if sample.horizon != horizon:
            raise UsageError(
                f"sample {sample.sample_id!r}: horizon {sample.horizon} != {horizon}"
            )
        best = int(np.argmax(sample.probs))
        sq[i] = np.sum((sample.modes[best] - sample.gt) ** 2, axis=1)
    return {
        "per_horizon": np.sqrt(sq.mean(axis=0)),
        "overall": float(np.sqrt(sq.mean())),
    }


def _stratum_size(percent: float, n: int) -> int:
    # round() guards against float noise in percent * n / 100 before ceil
    return math.ceil(round(percent * n / 100.0, 9))


def worst_case_subsets(errors: Mapping[str, float], percents: Sequence[float]) -> dict:
    """Top-p% highest-error strata of a per-sample error table.

    For each percentage the ceil(p*n/100) largest errors are selected, with
    ties broken toward the lexicographically larger sample id so membership
    is deterministic. Returns ``{p: {"count", "sample_ids", "mean"}}``.
    """
    if not errors:
        raise UsageError("worst_case_subsets needs at least one sample")
    for p in percents:
        if not 0.0 < p <= 100.0:
            raise UsageError(f"percent {p} outside (0, 100]")
    ranked = sorted(errors.items(), key=lambda kv: (kv[1], kv[0]), reverse=True)
    n = len(ranked)
    out = {}
    for p in percents:
        count = _stratum_size(p, n)
        subset = ranked[:count]
        out[p] = {
            "count": count,
            "sample_ids": [sid for sid, _ in subset],
            "mean": float(np.mean([err for _, err in subset])),
        }
    return out


def task_loss(sample: ForecastSample, weights: LossWeights | None = None) -> dict:
    """Regression + classification loss of the best-matching mode.

    The best mode k* minimizes the ADE; the loss is its mean squared
    pointwise L2 error plus ``lambda_cls * -log p_{k*}`` with the probability
    floored at ``EPS_PROB``. Returns ``{"l_task", "k_star"}``.
    """
    weights = weights or LossWeights()
    ades = ade_per_mode(sample)
    k_star = int(np.argmin(ades))
    mse = float(np.mean(np.sum((sample.modes[k_star] - sample.gt) ** 2, axis=1)))
    nll = -math.log(max(float(sample.probs[k_star]), EPS_PROB))
    return {"l_task": mse + weights.lambda_cls * nll, "k_star": k_star}


def total_loss(l_task: float, l_ti: float, l_meta: float, weights: LossWeights | None = None) -> float:
    """Weighted composite loss: l_task + lambda_1 * l_ti + lambda_2 * l_meta."""
    weights = weights or LossWeights()
    return l_task + weights.lambda_1 * l_ti + weights.lambda_2 * l_meta


def parse_forecast_jsonl(source) -> list[ForecastSample]:
    """Parse forecast samples from JSONL (one object per line).

    Each line must carry ``sample_id``, ``modes``, ``probs`` and ``gt``.
    Errors name the offending line.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")
    samples = []
    seen = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line=line_no) from None
        if not isinstance(record, dict):
            raise ParseError("expected a JSON object", line=line_no)
        missing = {"sample_id", "modes", "probs", "gt"} - set(record)
        if missing:
            raise ParseError(f"missing keys {sorted(missing)}", line=line_no)
        try:
            sample = ForecastSample(
                sample_id=str(record["sample_id"]),
                modes=record["modes"],
                probs=record["probs"],
                gt=record["gt"],
            )
        except (ValidationError, ValueError) as exc:
            raise ParseError(str(exc), line=line_no) from None
        if sample.sample_id in seen:
            raise ParseError(f"duplicate sample_id {sample.sample_id!r}", line=line_no)
        seen.add(sample.sample_id)
        samples.append(sample)
    return samples


@dataclass(frozen=True)
class EvalReport:
    """Per-sample errors plus aggregate and worst-case statistics."""

    per_sample: tuple
    aggregate: dict
    worst_case: dict
    config_echo: dict

    def to_jsonable(self) -> dict:
        return {
            "per_sample": list(self.per_sample),
            "aggregate": self.aggregate,
            "worst_case": self.worst_case,
            "config_echo": self.config_echo,
        }


def _percent_key(p: float) -> str:
    return f"top{p:g}"


def evaluate(
    samples: Sequence[ForecastSample],
    ks: Sequence[int] = (1, 5, 10),
    threshold: float = MISS_THRESHOLD,
    percents: Sequence[float] = (),
    rank_metric: str | None = None,
    rank_k: int = 5,
) -> EvalReport:
    """Full evaluation report over a batch of forecast samples.

    ``ks`` selects the mode counts for minADE/minFDE/miss rate. When
    ``percents`` is non-empty a worst-case table is built by ranking every
    sample on ``rank_metric`` (``min_ade`` or ``min_fde``, no default) at
    ``rank_k`` modes and averaging both errors over each stratum.
    """
    if not samples:
        raise UsageError("evaluate needs at least one sample")
    ks = sorted(set(int(k) for k in ks))
    if not ks:
        raise UsageError("need at least one k")
    percents = list(percents)
    if percents:
        if rank_metric is None:
            raise UsageError(
                "worst-case percents given but no rank_metric; set it to 'min_ade' or 'min_fde'"
            )
        if rank_metric not in RANK_METRICS:
            raise UsageError(f"rank_metric must be one of {RANK_METRICS}, got {rank_metric!r}")

    per_sample = []
    for sample in samples:
        per_sample.append(
            {
                "sample_id": sample.sample_id,
                "min_ade": {str(k): min_ade(sample, k) for k in ks},
                "min_fde": {str(k): min_fde(sample, k) for k in ks},
            }
        )

    aggregate = {
        "n_samples": len(samples),
        "min_ade": {
            str(k): float(np.mean([row["min_ade"][str(k)] for row in per_sample])) for k in ks
        },
        "min_fde": {
            str(k): float(np.mean([row["min_fde"][str(k)] for row in per_sample])) for k in ks
        },
        "miss_rate": {str(k): miss_rate(samples, k, threshold) for k in ks},
    }
    rmse_stats = rmse(samples)
    aggregate["rmse"] = {
        "per_horizon": rmse_stats["per_horizon"].tolist(),
        "overall": rmse_stats["overall"],
    }

    worst_case = {}
    if percents:
        fn = min_ade if rank_metric == "min_ade" else min_fde
        rank_errors = {s.sample_id: fn(s, rank_k) for s in samples}
        ade_by_id = {s.sample_id: min_ade(s, rank_k) for s in samples}
        fde_by_id = {s.sample_id: min_fde(s, rank_k) for s in samples}
        for p, stratum in worst_case_subsets(rank_errors, percents).items():
            ids = stratum["sample_ids"]
            worst_case[_percent_key(p)] = {
                "count": stratum["count"],
                "sample_ids": ids,
                "min_ade": float(np.mean([ade_by_id[i] for i in ids])),
                "min_fde": float(np.mean([fde_by_id[i] for i in ids])),
            }

    config_echo = {
        "k": ks,
        "threshold": threshold,
        "percents": percents,
        "rank_metric": rank_metric,
        "rank_k": rank_k if percents else None,
    }
    return EvalReport(
        per_sample=tuple(per_sample),
        aggregate=aggregate,
        worst_case=worst_case,
        config_echo=config_echo,
    )
