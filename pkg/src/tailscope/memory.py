"""Tail-Index-partitioned prototype memory and the cognitive set mechanism.

Prototypes are per-category mean feature vectors, categories cut at Tail
Index percentiles, refined by a TI-weighted momentum update. At adaptation
time a gating MLP proposes a category allocation, a vigilance gate blends it
toward a tail-biased fallback when no prototype matches well, and a single
analytic gradient step on the prototype-alignment loss refines the memory
before it augments the feature vector.

Reads (allocation, similarity, vigilance, augment) are pure; the two update
operations return fresh arrays and never mutate their inputs, but concurrent
writers still need external coordination (single-writer contract).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DegenerateInputWarning, UsageError, ValidationError

#: Vectors with a norm below this are treated as directionless.
EPS_NORM = 1e-12


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return float(out) if out.ndim == 0 else out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class GateMlp:
    """Small dense network with an allocation head (C logits) and a scalar gate head."""

    w_hidden: np.ndarray  # (hidden, in)
    b_hidden: np.ndarray  # (hidden,)
    w_alloc: np.ndarray   # (C, hidden)
    b_alloc: np.ndarray   # (C,)
    w_gate: np.ndarray    # (hidden,)
    b_gate: float

    def __post_init__(self):
        for name in ("w_hidden", "b_hidden", "w_alloc", "b_alloc", "w_gate"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        hidden, _ = self.w_hidden.shape
        if self.b_hidden.shape != (hidden,):
            raise ConfigurationError("b_hidden does not match w_hidden rows")
        if self.w_alloc.ndim != 2 or self.w_alloc.shape[1] != hidden:
            raise ConfigurationError("w_alloc columns must match the hidden width")
        if self.b_alloc.shape != (self.w_alloc.shape[0],):
            raise ConfigurationError("b_alloc does not match w_alloc rows")
        if self.w_gate.shape != (hidden,):
            raise ConfigurationError("w_gate must match the hidden width")
        if not math.isfinite(self.b_gate):
            raise ConfigurationError("b_gate must be finite")

    @property
    def input_dim(self) -> int:
        return self.w_hidden.shape[1]

    @property
    def categories(self) -> int:
        return self.w_alloc.shape[0]

    def forward(self, h: np.ndarray) -> tuple[np.ndarray, float]:
        """Return (allocation logits, gate logit) for one input vector."""
        h = np.asarray(h, dtype=float)
        if h.shape != (self.input_dim,):
            raise ConfigurationError(f"expected input of shape ({self.input_dim},), got {h.shape}")
        hid = np.maximum(self.w_hidden @ h + self.b_hidden, 0.0)
        return self.w_alloc @ hid + self.b_alloc, float(self.w_gate @ hid + self.b_gate)

    @classmethod
    def create(cls, input_dim: int, categories: int, hidden: int = 32, seed: int = 0) -> "GateMlp":
        rng = np.random.default_rng(seed)
        return cls(
            w_hidden=rng.normal(0.0, 0.1, size=(hidden, input_dim)),
            b_hidden=np.zeros(hidden),
            w_alloc=rng.normal(0.0, 0.1, size=(categories, hidden)),
            b_alloc=np.zeros(categories),
            w_gate=rng.normal(0.0, 0.1, size=hidden),
            b_gate=0.0,
        )

    def to_jsonable(self) -> dict:
        return {
            "w_hidden": self.w_hidden.tolist(),
            "b_hidden": self.b_hidden.tolist(),
            "w_alloc": self.w_alloc.tolist(),
            "b_alloc": self.b_alloc.tolist(),
            "w_gate": self.w_gate.tolist(),
            "b_gate": float(self.b_gate),
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "GateMlp":
        try:
            return cls(
                w_hidden=np.array(data["w_hidden"], dtype=float),
                b_hidden=np.array(data["b_hidden"], dtype=float),
                w_alloc=np.array(data["w_alloc"], dtype=float),
                b_alloc=np.array(data["b_alloc"], dtype=float),
                w_gate=np.array(data["w_gate"], dtype=float),
                b_gate=float(data["b_gate"]),
            )
        except KeyError as exc:
            raise ConfigurationError(f"gate mlp missing key {exc}") from None


def default_tail_bias(categories: int) -> np.ndarray:
    """Normalized linear ramp putting the most mass on the highest-TI category."""
    ramp = np.arange(1, categories + 1, dtype=float)
    return ramp / ramp.sum()


@dataclass(frozen=True)
class CognitiveSetParams:
    """Temperature, vigilance and tail-bias parameters of the cognitive set mechanism."""

    tau: float = 10.0          # similarity temperature
    rho_vig: float = 0.5       # vigilance threshold on max similarity
    gamma_steep: float = 10.0  # steepness of the vigilance transition
    b_tail: np.ndarray = None
    gate_mlp: GateMlp = None

    def __post_init__(self):
        if self.b_tail is None or self.gate_mlp is None:
            raise ConfigurationError("b_tail and gate_mlp are required")
        object.__setattr__(self, "b_tail", np.asarray(self.b_tail, dtype=float))
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")
        if not (self.gamma_steep > 0 and math.isfinite(self.gamma_steep)):
            raise ConfigurationError(f"gamma_steep must be > 0, got {self.gamma_steep}")
        if not math.isfinite(self.rho_vig):
            raise ConfigurationError("rho_vig must be finite")
        if self.b_tail.ndim != 1 or np.any(self.b_tail < 0) or abs(self.b_tail.sum() - 1.0) > 1e-9:
            raise ConfigurationError("b_tail must be a probability vector")
        if self.b_tail.shape[0] != self.gate_mlp.categories:
            raise ConfigurationError(
                f"b_tail covers {self.b_tail.shape[0]} categories, gate mlp {self.gate_mlp.categories}"
            )

    @property
    def categories(self) -> int:
        return self.b_tail.shape[0]

    @classmethod
    def create(
        cls,
        categories: int = 5,
        feature_dim: int = 64,
        tau: float = 10.0,
        rho_vig: float = 0.5,
        gamma_steep: float = 10.0,
        hidden: int = 32,
        seed: int = 0,
    ) -> "CognitiveSetParams":
        """Defaults with the gating MLP sized for h = [F_m, F_i, F_r, TI]."""
        return cls(
            tau=tau,
            rho_vig=rho_vig,
            gamma_steep=gamma_steep,
            b_tail=default_tail_bias(categories),
            gate_mlp=GateMlp.create(feature_dim + 15, categories, hidden=hidden, seed=seed),
        )

    def to_jsonable(self) -> dict:
        return {
            "tau": float(self.tau),
            "rho_vig": float(self.rho_vig),
            "gamma_steep": float(self.gamma_steep),
            "b_tail": self.b_tail.tolist(),
            "gate_mlp": self.gate_mlp.to_jsonable(),
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "CognitiveSetParams":
        return cls(
            tau=float(data["tau"]),
            rho_vig=float(data["rho_vig"]),
            gamma_steep=float(data["gamma_steep"]),
            b_tail=np.array(data["b_tail"], dtype=float),
            gate_mlp=GateMlp.from_jsonable(data["gate_mlp"]),
        )


@dataclass(frozen=True)
class PrototypeMemory:
    """C x D prototype matrix with momentum factor and TI percentile boundaries."""

    prototypes: np.ndarray
    eta: float = 0.9
    boundaries: np.ndarray = ()

    def __post_init__(self):
        object.__setattr__(self, "prototypes", np.asarray(self.prototypes, dtype=float))
        object.__setattr__(self, "boundaries", np.asarray(self.boundaries, dtype=float))
        if self.prototypes.ndim != 2:
            raise ValidationError(f"prototypes must be a (C, D) matrix, got {self.prototypes.shape}")
        if not np.all(np.isfinite(self.prototypes)):
            raise ValidationError("prototypes contain non-finite values")
        if np.any(np.all(self.prototypes == 0.0, axis=1)):
            raise ValidationError("prototype rows must not be identically zero")
        if not (0.0 <= self.eta <= 1.0):
            raise ValidationError(f"eta must lie in [0, 1], got {self.eta}")
        if self.boundaries.size:
            if self.boundaries.shape != (self.categories - 1,):
                raise ValidationError(
                    f"expected {self.categories - 1} boundaries, got {self.boundaries.shape}"
                )
            # Ties in the reference TIs may collapse neighbouring cut points,
            # so equality is tolerated; descending boundaries are not.
            if np.any(np.diff(self.boundaries) < 0):
                raise ValidationError("boundaries must be ascending")

    @property
    def categories(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def category_of(self, ti: float) -> int:
        """Category index of a Tail Index value under the stored boundaries."""
        if not self.boundaries.size:
            raise UsageError("memory has no boundaries recorded")
        return int(np.searchsorted(self.boundaries, ti, side="right"))

    def to_jsonable(self) -> dict:
        return {
            "prototypes": self.prototypes.tolist(),
            "eta": float(self.eta),
            "boundaries": self.boundaries.tolist(),
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "PrototypeMemory":
        return cls(
            prototypes=np.array(data["prototypes"], dtype=float),
            eta=float(data["eta"]),
            boundaries=np.array(data.get("boundaries", ()), dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_jsonable()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PrototypeMemory":
        return cls.from_jsonable(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class AdaptationBatch:
    """Per-sample feature vectors, metric features and Tail Index of one batch."""

    f_m: np.ndarray  # (B, D)
    f_i: np.ndarray  # (B, 8)
    f_r: np.ndarray  # (B, 6)
    ti: np.ndarray   # (B,)

    def __post_init__(self):
        for name in ("f_m", "f_i", "f_r", "ti"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        b = self.f_m.shape[0]
        if self.f_m.ndim != 2:
            raise ValidationError(f"f_m must be (B, D), got {self.f_m.shape}")
        for name in ("f_i", "f_r"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != b:
                raise ValidationError(f"{name} must have {b} rows, got {arr.shape}")
        if self.ti.shape != (b,):
            raise ValidationError(f"ti must have shape ({b},), got {self.ti.shape}")

    def __len__(self) -> int:
        return self.f_m.shape[0]

    @property
    def h(self) -> np.ndarray:
        """Concatenated gating inputs [F_m, F_i, F_r, TI], one row per sample."""
        return np.hstack([self.f_m, self.f_i, self.f_r, self.ti[:, None]])


@dataclass(frozen=True)
class CategoryPartition:
    """Result of percentile partitioning: assignments, cut points, tie flag."""

    assignments: np.ndarray
    boundaries: np.ndarray
    flags: tuple[str, ...] = ()


def partition_categories(tis, categories: int) -> CategoryPartition:
    """Split samples into equal-mass Tail Index percentile bins.

    Ties are broken by stable input order and flagged. Boundaries are the
    k/C quantiles of the input for k = 1..C-1.
    """
    tis = np.asarray(tis, dtype=float)
    if tis.ndim != 1:
        raise UsageError("tis must be 1-D")
    n = tis.shape[0]
    if categories < 1:
        raise UsageError(f"need at least 1 category, got {categories}")
    if categories > n:
        raise UsageError(f"cannot split {n} samples into {categories} categories")
    order = np.argsort(tis, kind="stable")
    ranks = np.empty(n, dtype=int)
    ranks[order] = np.arange(n)
    assignments = np.minimum(ranks * categories // n, categories - 1)

    flags = []
    sorted_tis = tis[order]
    for c in range(1, categories):
        first_of_bin = np.searchsorted(assignments[order], c)
        if first_of_bin < n and sorted_tis[first_of_bin] == sorted_tis[first_of_bin - 1]:
            flags.append("ties")
            break
    boundaries = np.quantile(tis, [c / categories for c in range(1, categories)]) if categories > 1 else np.array([])
    return CategoryPartition(
        assignments=assignments, boundaries=boundaries, flags=tuple(flags)
    )


def initialize_memory(
    features: np.ndarray,
    partition: CategoryPartition,
    eta: float = 0.9,
) -> PrototypeMemory:
    """Prototype memory whose rows are the per-category mean feature vectors."""
    features = np.asarray(features, dtype=float)
    categories = int(partition.assignments.max()) + 1
    rows = np.stack(
        [features[partition.assignments == c].mean(axis=0) for c in range(categories)]
    )
    return PrototypeMemory(prototypes=rows, eta=eta, boundaries=partition.boundaries)


def update_prototypes(
    mem: PrototypeMemory, batch: AdaptationBatch, assignments
) -> PrototypeMemory:
    """TI-weighted momentum refresh of the prototypes touched by the batch.

    Each updated row becomes ``eta * old + (1 - eta) * softmax(TI)-weighted
    feature mean``; TIs are max-shifted before exponentiation. Categories
    with no samples are left unchanged.
    """
    assignments = np.asarray(assignments, dtype=int)
    if assignments.shape != (len(batch),):
        raise UsageError(f"need one assignment per sample, got {assignments.shape}")
    if batch.f_m.shape[1] != mem.dim:
        raise UsageError(f"feature dim {batch.f_m.shape[1]} != memory dim {mem.dim}")
    if assignments.size and (assignments.min() < 0 or assignments.max() >= mem.categories):
        raise UsageError("assignment out of category range")
    new_rows = mem.prototypes.copy()
    for c in range(mem.categories):
        mask = assignments == c
        if not np.any(mask):
            continue
        ti = batch.ti[mask]
        w = np.exp(ti - ti.max())
        w = w / w.sum()
        new_rows[c] = mem.eta * new_rows[c] + (1.0 - mem.eta) * (w @ batch.f_m[mask])
    return PrototypeMemory(prototypes=new_rows, eta=mem.eta, boundaries=mem.boundaries)


def allocation(h: np.ndarray, params: CognitiveSetParams) -> np.ndarray:
    """Base category allocation: softmax of the gating MLP's allocation head."""
    logits, _ = params.gate_mlp.forward(h)
    return _softmax(logits)


def similarity(f_m: np.ndarray, prototypes: np.ndarray, tau: float) -> np.ndarray:
    """Temperature-scaled cosine similarity of a feature against each prototype row.

    Entries involving a vector with norm below ``EPS_NORM`` are set to 0 and
    reported via :class:`DegenerateInputWarning`.
    """
    f_m = np.asarray(f_m, dtype=float)
    prototypes = np.asarray(prototypes, dtype=float)
    if f_m.shape != (prototypes.shape[1],):
        raise ConfigurationError(
            f"feature shape {f_m.shape} does not match prototype dim {prototypes.shape[1]}"
        )
    f_norm = float(np.linalg.norm(f_m))
    row_norms = np.linalg.norm(prototypes, axis=1)
    s = np.zeros(prototypes.shape[0], dtype=float)
    if f_norm < EPS_NORM:
        warnings.warn("zero-norm feature vector, similarities set to 0", DegenerateInputWarning)
        return s
    ok = row_norms >= EPS_NORM
    if not np.all(ok):
        warnings.warn("zero-norm prototype rows, their similarities set to 0", DegenerateInputWarning)
    s[ok] = (prototypes[ok] @ f_m) / (row_norms[ok] * f_norm) * tau
    return s


def vigilance_adjust(g: np.ndarray, s: np.ndarray, params: CognitiveSetParams) -> np.ndarray:
    """Blend the allocation toward the tail bias when no prototype matches well.

    lam = sigmoid(gamma * (max(s) - rho)); returns lam * g + (1 - lam) * b_tail,
    which stays on the probability simplex.
    """
    g = np.asarray(g, dtype=float)
    s = np.asarray(s, dtype=float)
    lam = sigmoid(params.gamma_steep * (float(np.max(s)) - params.rho_vig))
    return lam * g + (1.0 - lam) * params.b_tail


def proto_loss(g_adj: np.ndarray, s: np.ndarray) -> float:
    """Prototype-alignment loss of a batch.

    For each sample the margin is sum_k(g'_k s_k) - sum_k((1 - g'_k) s_k);
    the loss is the mean of -log sigmoid(margin), computed via a stable
    softplus.
    """
    g_adj = np.atleast_2d(np.asarray(g_adj, dtype=float))
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if g_adj.shape != s.shape:
        raise UsageError(f"shape mismatch: g' {g_adj.shape} vs s {s.shape}")
    if g_adj.shape[0] == 0:
        raise UsageError("empty batch")
    margins = np.sum((2.0 * g_adj - 1.0) * s, axis=1)
    # -log sigmoid(m) == softplus(-m)
    return float(np.mean(np.maximum(-margins, 0.0) + np.log1p(np.exp(-np.abs(margins)))))


def proto_loss_and_grad(
    prototypes: np.ndarray, f_m: np.ndarray, g_adj: np.ndarray, tau: float
) -> tuple[float, np.ndarray]:
    """Loss and its analytic gradient with respect to the prototype matrix.

    The allocation g' is treated as a constant; the similarity is the
    temperature-scaled cosine, so for prototype row M_k and sample i

        d s_ik / d M_k = (tau / |M_k|) * (f_hat_i - cos_ik * M_hat_k)

    and rows or samples with near-zero norm contribute zero gradient (flagged
    via :class:`DegenerateInputWarning`).
    """
    prototypes = np.asarray(prototypes, dtype=float)
    f_m = np.atleast_2d(np.asarray(f_m, dtype=float))
    g_adj = np.atleast_2d(np.asarray(g_adj, dtype=float))
    n_samples = f_m.shape[0]
    if g_adj.shape != (n_samples, prototypes.shape[0]):
        raise UsageError(f"g' must be (B, C) = ({n_samples}, {prototypes.shape[0]}), got {g_adj.shape}")

    f_norms = np.linalg.norm(f_m, axis=1)
    row_norms = np.linalg.norm(prototypes, axis=1)
    ok_f = f_norms >= EPS_NORM
    ok_m = row_norms >= EPS_NORM
    if not (np.all(ok_f) and np.all(ok_m)):
        warnings.warn(
            "zero-norm rows contribute zero similarity and zero gradient",
            DegenerateInputWarning,
        )

    f_hat = np.zeros_like(f_m)
    f_hat[ok_f] = f_m[ok_f] / f_norms[ok_f, None]
    m_hat = np.zeros_like(prototypes)
    m_hat[ok_m] = prototypes[ok_m] / row_norms[ok_m, None]

    cos = f_hat @ m_hat.T                     # (B, C); zero where degenerate
    s = tau * cos
    margins = np.sum((2.0 * g_adj - 1.0) * s, axis=1)
    loss = float(np.mean(np.maximum(-margins, 0.0) + np.log1p(np.exp(-np.abs(margins)))))

    dloss_dmargin = -sigmoid(-margins) / n_samples          # (B,)
    w = dloss_dmargin[:, None] * (2.0 * g_adj - 1.0) * tau  # (B, C)
    w[~ok_f] = 0.0
    inv_norms = np.where(ok_m, 1.0 / np.where(ok_m, row_norms, 1.0), 0.0)
    grad = (w.T @ f_hat - (w * cos).sum(axis=0)[:, None] * m_hat) * inv_norms[:, None]
    return loss, grad


def inner_update(
    mem: PrototypeMemory,
    batch: AdaptationBatch,
    params: CognitiveSetParams,
    alpha_lr: float = 1e-3,
) -> np.ndarray:
    """One analytic gradient step on the prototype-alignment loss.

    Computes g' per sample from the current memory (allocation, similarity,
    vigilance), holds it constant, and returns ``M - alpha_lr * grad`` as a
    fresh matrix without touching ``mem``.
    """
    if batch.f_m.shape[1] != mem.dim:
        raise UsageError(f"feature dim {batch.f_m.shape[1]} != memory dim {mem.dim}")
    g_adj = np.stack(
        [
            vigilance_adjust(
                allocation(batch.h[i], params),
                similarity(batch.f_m[i], mem.prototypes, params.tau),
                params,
            )
            for i in range(len(batch))
        ]
    )
    _, grad = proto_loss_and_grad(mem.prototypes, batch.f_m, g_adj, params.tau)
    return mem.prototypes - alpha_lr * grad


def augment(
    f_m: np.ndarray,
    h: np.ndarray,
    g_adj: np.ndarray,
    m_prime: np.ndarray,
    params: CognitiveSetParams,
) -> np.ndarray:
    """Gated prototype injection: F_v = F_m + sigmoid(gate(h)) * (g' @ M')."""
    f_m = np.asarray(f_m, dtype=float)
    g_adj = np.asarray(g_adj, dtype=float)
    m_prime = np.asarray(m_prime, dtype=float)
    if m_prime.ndim != 2 or g_adj.shape != (m_prime.shape[0],):
        raise ConfigurationError(
            f"g' of shape {g_adj.shape} does not match prototype matrix {m_prime.shape}"
        )
    if f_m.shape != (m_prime.shape[1],):
        raise ConfigurationError(
            f"feature shape {f_m.shape} does not match prototype dim {m_prime.shape[1]}"
        )
    _, gate_logit = params.gate_mlp.forward(h)
    return f_m + sigmoid(gate_logit) * (g_adj @ m_prime)
