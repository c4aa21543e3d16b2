"""Synthetic long-tail benchmark: data, SGD training under any (loss, q, w), sliced metrics.

Data is a Gaussian mixture whose class means lie on the unit sphere and
whose training labels follow an imbalance profile; the test set holds the
same number of examples per class, so plain error on it is balanced error.

Randomness: a run's seed feeds ``numpy.random.SeedSequence`` and is split
into named child streams in a fixed order (see ``seed_streams``).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import losses as L_
from .label_stats import ImbalanceProfile, LabelDistribution, LabelSlices, make_profile, slice_labels
from .sampler import SAMPLER_KINDS, draw_negatives_batch
from .weighting import MarginMatrix, WeightingScheme, parse_weighting, weight

log = logging.getLogger(__name__)

STREAMS = ("data", "init", "order", "negatives")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """One generator per purpose, spawned from ``SeedSequence(seed)`` in ``STREAMS`` order."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


class DivergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# data


@dataclass
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray
    class_means: np.ndarray
    noise_scale: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    profile: ImbalanceProfile

    @property
    def num_labels(self) -> int:
        return self.class_means.shape[0]

    @property
    def X_train(self):
        return self.features[self.train_idx]

    @property
    def y_train(self):
        return self.labels[self.train_idx]

    @property
    def X_test(self):
        return self.features[self.test_idx]

    @property
    def y_test(self):
        return self.labels[self.test_idx]

    def train_counts(self) -> np.ndarray:
        return np.bincount(self.y_train, minlength=self.num_labels)

    def train_prior(self) -> LabelDistribution:
        """Empirical training prior; classes absent from training get one pseudo-count."""
        return LabelDistribution.from_weights(np.maximum(self.train_counts(), 1))


def generate(profile: ImbalanceProfile, d: int, N: int, noise_scale: float, seed: int,
             n_test_per_class: int = 50) -> SyntheticDataset:
    """Draw ``N`` imbalanced training points plus a balanced test set.

    Each point is its class mean plus isotropic Gaussian noise with
    per-coordinate standard deviation ``noise_scale``.
    """
    L = profile.num_labels
    if d < 2:
        raise ValueError("feature dimension must be at least 2")
    if N < L:
        raise ValueError(f"N={N} is smaller than the number of labels {L}")
    if n_test_per_class < 1:
        raise ValueError("the balanced test set needs at least one example per class")
    rng = seed_streams(seed)["data"]
    means = rng.standard_normal((L, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    pi = make_profile(profile).probs
    y_train = rng.choice(L, size=N, p=pi)
    y_test = np.repeat(np.arange(L), n_test_per_class)
    labels = np.concatenate([y_train, y_test])
    features = means[labels] + noise_scale * rng.standard_normal((labels.size, d))
    idx = np.arange(labels.size)
    return SyntheticDataset(features, labels, means, float(noise_scale), idx[:N], idx[N:], profile)


# --------------------------------------------------------------------------
# scorers


class LinearScorer:
    """``f = X W^T + b``, zero-initialised.  With ``cosine`` scores are cosines."""

    def __init__(self, d: int, L: int, rng=None, cosine: bool = False):
        self.cosine = cosine
        self.params = {"W": np.zeros((L, d)), "b": np.zeros(L)}
        if cosine:
            # a cosine needs nonzero class vectors
            self.params["W"] = np.asarray(rng.standard_normal((L, d))) / math.sqrt(d)
            self.params["b"] = np.zeros(L)

    def forward(self, X):
        W, b = self.params["W"], self.params["b"]
        if not self.cosine:
            return X @ W.T + b, X
        U = X / np.linalg.norm(X, axis=1, keepdims=True)
        norms = np.linalg.norm(W, axis=1)
        Wn = W / norms[:, None]
        S = U @ Wn.T
        return S, (U, Wn, norms, S)

    def backward(self, cache, dF):
        if not self.cosine:
            X = cache
            return {"W": dF.T @ X, "b": dF.sum(axis=0)}
        U, Wn, norms, S = cache
        # d cos / dW_j = (u - cos * w_hat_j) / |W_j|
        dW = (dF.T @ U - (dF * S).sum(axis=0)[:, None] * Wn) / norms[:, None]
        return {"W": dW, "b": np.zeros_like(self.params["b"])}


class HiddenLayerScorer:
    def __init__(self, d: int, L: int, width: int, rng, activation: str = "relu"):
        if activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        a1, a2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(width)
        self.params = {
            "W1": rng.uniform(-a1, a1, (width, d)), "b1": rng.uniform(-a1, a1, width),
            "W2": rng.uniform(-a2, a2, (L, width)), "b2": rng.uniform(-a2, a2, L),
        }

    def forward(self, X):
        p = self.params
        Z = X @ p["W1"].T + p["b1"]
        H = np.maximum(Z, 0.0) if self.activation == "relu" else Z
        return H @ p["W2"].T + p["b2"], (X, Z, H)

    def backward(self, cache, dF):
        X, Z, H = cache
        p = self.params
        dH = dF @ p["W2"]
        if self.activation == "relu":
            dH = dH * (Z > 0)
        return {"W2": dF.T @ H, "b2": dF.sum(axis=0), "W1": dH.T @ X, "b1": dH.sum(axis=0)}


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    # data
    profile: str = "step"
    num_labels: int = 100
    imbalance_ratio: float = 100.0
    dim: int = 64
    n_train: int = 20000
    n_test_per_class: int = 50
    noise_scale: float = 1.0
    data_seed: int | None = None
    # model
    model: str = "linear"
    hidden_width: int = 128
    activation: str = "relu"
    # objective
    loss: str = "sampled_softmax"
    sampler: str = "within_batch"
    weighting: str = "constant"
    m: int = 32
    exclude_positive: bool = True
    batch_mode: str = "frequency"
    # positive-to-negative mass ratio of relative weights: "prior" uses the
    # training label prior, "proposal" the per-batch base proposal
    relative_base: str = "prior"
    # optimiser
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 50
    batch_size: int = 128
    seed: int = 0
    # reporting
    slice_hi: int = 100
    slice_lo: int = 20
    name: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        spec = L_.parse_loss(self.loss)
        if self.model not in ("linear", "hidden"):
            raise ValueError(f"unknown model {self.model!r}; expected linear or hidden")
        if spec.sampled:
            if self.sampler not in SAMPLER_KINDS or self.sampler == "custom":
                raise ValueError(f"unsupported sampler {self.sampler!r} for training")
            if self.m < 1:
                raise ValueError("sampled losses need m >= 1")
            if self.batch_mode == "literal" and self.sampler == "within_batch" and self.batch_size < self.m:
                raise ValueError("literal within-batch negatives need batch_size >= m")
            parse_weighting(self.weighting, pi=np.ones(2) / 2)
        if self.batch_mode not in ("frequency", "literal"):
            raise ValueError(f"unknown batch_mode {self.batch_mode!r}")
        if self.relative_base not in ("prior", "proposal"):
            raise ValueError(f"unknown relative_base {self.relative_base!r}")
        if spec.pair == "cosine_contrastive" and self.model != "linear":
            raise ValueError("cosine scoring is only implemented for the linear model")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("lr, epochs and batch_size must be nonnegative (batch_size positive)")

    @property
    def imbalance_profile(self) -> ImbalanceProfile:
        return ImbalanceProfile(self.profile, self.num_labels, self.imbalance_ratio)

    @property
    def dataset_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        spec = L_.parse_loss(self.loss)
        if spec.sampled:
            return f"{self.sampler}+{self.weighting}"
        return str(spec)

    def data_key(self) -> tuple:
        return (self.profile, self.num_labels, self.imbalance_ratio, self.dim, self.n_train,
                self.n_test_per_class, self.noise_scale, self.dataset_seed)


def make_dataset(config: ExperimentConfig) -> SyntheticDataset:
    return generate(config.imbalance_profile, config.dim, config.n_train, config.noise_scale,
                    config.dataset_seed, config.n_test_per_class)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    scorer: object
    trace: list[float]
    config: ExperimentConfig
    params_history: list[dict] = field(default_factory=list)


class _Objective:
    """Per-minibatch loss and logit gradient for one configuration."""

    def __init__(self, config: ExperimentConfig, prior: LabelDistribution, L: int):
        self.spec = L_.parse_loss(config.loss)
        self.config = config
        self.L = L
        self.prior = prior.probs
        self.pair = L_.margin_pair(self.spec.pair) if self.spec.pair else None
        if self.spec.family == "margin_ce":
            rho = MarginMatrix.preset(self.spec.preset, prior)
            self.margin_rows = np.stack([rho.row(y, L) for y in range(L)])
        if self.spec.sampled:
            self.scheme: WeightingScheme = parse_weighting(config.weighting, pi=prior)

    def proposal(self, F, Y):
        """Per-row base proposal and its positive-excluded version."""
        B, L = F.shape
        kind = self.config.sampler
        if kind == "uniform":
            base = np.full((B, L), 1.0 / L)
        elif kind == "within_batch":
            freq = np.bincount(Y, minlength=L) / B
            base = np.broadcast_to(freq, (B, L)).copy()
        else:
            E = np.exp(F - F.max(axis=1, keepdims=True))
            base = E / E.sum(axis=1, keepdims=True)
        Q = base.copy()
        if self.config.exclude_positive:
            Q[np.arange(B), Y] = 0.0
        return Q, base

    def negatives(self, F, Y, rng):
        B = F.shape[0]
        Q, base = self.proposal(F, Y)
        mass = Q.sum(axis=1)
        empty = mass <= 0
        if np.any(empty):
            # a batch holding only the positive's label leaves nothing to contrast
            Q[empty] = 1.0
        Q /= Q.sum(axis=1, keepdims=True)
        if self.config.relative_base == "prior" and self.config.sampler == "within_batch":
            # a batch frequency is a noisy estimate of the prior and is at least
            # 1/B for any positive, which hides how rare a tail label is
            base = np.broadcast_to(self.prior, base.shape)
        if self.config.sampler == "within_batch" and self.config.batch_mode == "literal":
            uniq = np.unique(Y)
            N = np.broadcast_to(uniq, (B, uniq.size)).copy()
            m_eff = max(uniq.size - 1, 1)
            is_pos = N == Y[:, None]
            # park each row's positive on a label with mass, then drop its weight
            N_safe = np.where(is_pos, np.argmax(Q, axis=1)[:, None], N)
            W = weight(self.scheme, Y, N_safe, Q, m_eff, base=base)
            W[is_pos] = 0.0
        else:
            m = self.config.m
            N = draw_negatives_batch(Q, m, rng)
            W = weight(self.scheme, Y, N, Q, m, base=base)
        W[empty] = 0.0
        return N, W

    def __call__(self, F, Y, rng):
        fam = self.spec.family
        if fam == "softmax_ce":
            return L_.batch_softmax_ce(F, Y)
        if fam == "margin_ce":
            return L_.batch_margin_ce(F, Y, self.margin_rows[Y])
        if fam == "decoupled":
            return L_.batch_decoupled(F, Y, self.pair)
        N, W = self.negatives(F, Y, rng)
        if fam == "sampled_softmax":
            return L_.batch_sampled_softmax(F, Y, N, W)
        return L_.batch_sampled_decoupled(F, Y, N, W, self.pair)


class EnumeratedObjective:
    """Sampled softmax whose negative set is every other label exactly once.

    Weights come from the configured weighting over the positive-excluded
    uniform proposal with ``m = L - 1``; with importance weights each one is
    ``1 / ((L - 1) * 1 / (L - 1)) = 1`` and the loss is the full softmax.
    """

    def __init__(self, weighting: str, prior: LabelDistribution, L: int):
        self.scheme = parse_weighting(weighting, pi=prior)
        self.L = L

    def __call__(self, F, Y, rng):
        B, L = F.shape
        N = np.array([np.delete(np.arange(L), y) for y in Y])
        Q = np.full((B, L), 1.0 / (L - 1))
        Q[np.arange(B), Y] = 0.0
        W = weight(self.scheme, Y, N, Q, L - 1)
        return L_.batch_sampled_softmax(F, Y, N, W)


def trajectory_divergence(config: ExperimentConfig, data: SyntheticDataset, steps: int = 10) -> list[float]:
    """Per-step max parameter gap between full softmax and enumerated importance-weighted training."""
    full = train(with_overrides(config, loss="softmax_ce"), data, max_steps=steps, record_params=True)
    enum = EnumeratedObjective("importance", data.train_prior(), data.num_labels)
    sampled = train(with_overrides(config, loss="sampled_softmax", weighting="importance"), data,
                    max_steps=steps, record_params=True, objective=enum)
    return [max(float(np.max(np.abs(a[k] - b[k]))) for k in a)
            for a, b in zip(full.params_history, sampled.params_history)]


def build_scorer(config: ExperimentConfig, d: int, L: int, rng):
    if config.model == "linear":
        cosine = L_.parse_loss(config.loss).pair == "cosine_contrastive"
        return LinearScorer(d, L, rng, cosine=cosine)
    return HiddenLayerScorer(d, L, config.hidden_width, rng, config.activation)


def train(config: ExperimentConfig, data: SyntheticDataset, *, max_steps: int | None = None,
          record_params: bool = False, objective=None) -> TrainResult:
    """Minibatch SGD with momentum; negatives are redrawn every step.

    ``max_steps`` truncates training (used by trajectory checks) and
    ``record_params`` keeps a copy of the parameters after every step.
    ``objective`` overrides the per-batch loss, mainly for tests.
    """
    streams = seed_streams(config.seed)
    X, Y = data.X_train, data.y_train
    n, d = X.shape
    L = data.num_labels
    scorer = build_scorer(config, d, L, streams["init"])
    objective = objective or _Objective(config, data.train_prior(), L)
    velocity = {k: np.zeros_like(v) for k, v in scorer.params.items()}
    trace: list[float] = []
    history: list[dict] = []
    step = 0
    B = config.batch_size
    for epoch in range(config.epochs):
        order = streams["order"].permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, B):
            idx = order[start:start + B]
            F, cache = scorer.forward(X[idx])
            losses, dF = objective(F, Y[idx], streams["negatives"])
            batch_loss = float(losses.mean())
            if not math.isfinite(batch_loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step} ({config.label})")
            grads = scorer.backward(cache, dF / idx.size)
            for k, p in scorer.params.items():
                g = grads[k]
                if config.weight_decay:
                    g = g + config.weight_decay * p
                velocity[k] = config.momentum * velocity[k] + g
                p -= config.lr * velocity[k]
                if not np.all(np.isfinite(p)):
                    raise DivergenceError(f"non-finite parameters at epoch {epoch}, step {step} ({config.label})")
            total += batch_loss * idx.size
            count += idx.size
            step += 1
            if record_params:
                history.append({k: v.copy() for k, v in scorer.params.items()})
            if max_steps is not None and step >= max_steps:
                trace.append(total / count)
                return TrainResult(scorer, trace, config, history)
        trace.append(total / count)
        log.debug("%s epoch %d loss %.4f", config.label, epoch, trace[-1])
    return TrainResult(scorer, trace, config, history)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class SlicedMetrics:
    balanced_error: float
    per_class_error: np.ndarray
    recall: dict[int, float]
    slices: dict[str, dict | None]

    def rows(self) -> list[dict]:
        out = [{"slice": "all", "balanced_error": self.balanced_error,
                **{f"recall@{k}": v for k, v in self.recall.items()}}]
        for name, vals in self.slices.items():
            if vals is None:
                out.append({"slice": name, "balanced_error": None, **{f"recall@{k}": None for k in self.recall}})
            else:
                out.append({"slice": name, **vals})
        return out

    def to_dict(self) -> dict:
        return {"balanced_error": self.balanced_error, "recall": {str(k): v for k, v in self.recall.items()},
                "per_class_error": self.per_class_error.tolist(), "slices": self.slices}


def evaluate(scorer, data: SyntheticDataset, slices: LabelSlices | None = None, ks=(1, 5)) -> SlicedMetrics:
    """Balanced error, per-slice error and top-k recall on the balanced test set."""
    F, _ = scorer.forward(data.X_test)
    return metrics_from_scores(F, data.y_test, data.num_labels,
                               slices if slices is not None else slice_labels(data.train_counts()), ks)


def metrics_from_scores(F, y, L: int, slices: LabelSlices, ks=(1, 5)) -> SlicedMetrics:
    F = np.asarray(F)
    y = np.asarray(y)
    pred = np.argmax(F, axis=1)
    wrong = (pred != y).astype(np.float64)
    support = np.bincount(y, minlength=L)
    per_class = np.bincount(y, weights=wrong, minlength=L) / np.maximum(support, 1)
    present = support > 0
    # rank of the true label: number of labels scoring strictly higher
    true_scores = F[np.arange(y.size), y]
    rank = (F > true_scores[:, None]).sum(axis=1)
    hits = {k: (rank < k) for k in ks}
    recall = {k: float(h.mean()) for k, h in hits.items()}
    out_slices: dict[str, dict | None] = {}
    for name, labels in slices.as_dict().items():
        labels = np.array(sorted(labels), dtype=np.int64)
        labels = labels[present[labels]] if labels.size else labels
        if labels.size == 0:
            out_slices[name] = None
            continue
        mask = np.isin(y, labels)
        out_slices[name] = {"balanced_error": float(per_class[labels].mean()),
                            **{f"recall@{k}": float(hits[k][mask].mean()) for k in ks}}
    return SlicedMetrics(float(per_class[present].mean()), per_class, recall, out_slices)


# --------------------------------------------------------------------------
# sweeps


def run_one(config: ExperimentConfig, data: SyntheticDataset | None = None) -> dict:
    data = data if data is not None else make_dataset(config)
    result = train(config, data)
    metrics = evaluate(result.scorer, data, slice_labels(data.train_counts(), config.slice_hi, config.slice_lo))
    return {"config": asdict(config), "metrics": metrics, "trace": result.trace}


def _run_indexed(args):
    i, config = args
    try:
        return i, run_one(config), None
    except Exception as exc:  # a failed run is recorded, the sweep goes on
        log.warning("run %d (%s) failed: %s", i, config.label, exc)
        return i, None, f"{type(exc).__name__}: {exc}"


def sweep(configs: list[ExperimentConfig], n_jobs: int = 1) -> list[dict]:
    """Run every config; results are ordered by config index, failures kept as ``error`` entries."""
    results: list[dict | None] = [None] * len(configs)
    data_cache: dict[tuple, SyntheticDataset] = {}
    if n_jobs == 1:
        for i, cfg in enumerate(configs):
            key = cfg.data_key()
            try:
                if key not in data_cache:
                    data_cache[key] = make_dataset(cfg)
                out = run_one(cfg, data_cache[key])
                results[i] = {"config_id": i, **out, "error": None}
            except Exception as exc:
                log.warning("run %d (%s) failed: %s", i, cfg.label, exc)
                results[i] = {"config_id": i, "config": asdict(cfg), "metrics": None, "trace": [],
                              "error": f"{type(exc).__name__}: {exc}"}
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for i, out, err in pool.map(_run_indexed, list(enumerate(configs))):
                if out is None:
                    results[i] = {"config_id": i, "config": asdict(configs[i]), "metrics": None,
                                  "trace": [], "error": err}
                else:
                    results[i] = {"config_id": i, **out, "error": None}
    return results


METRIC_COLUMNS = ("config_id", "sampler", "weighting", "m", "slice", "balanced_error", "recall@1", "recall@5")


def metric_rows(results: list[dict]) -> list[dict]:
    rows = []
    for res in results:
        cfg = res["config"]
        sampled = L_.parse_loss(cfg["loss"]).sampled
        ident = {"config_id": res["config_id"],
                 "sampler": cfg["sampler"] if sampled else "none",
                 "weighting": cfg["weighting"] if sampled else cfg["loss"],
                 "m": cfg["m"] if sampled else 0}
        if res["metrics"] is None:
            rows.append({**ident, "slice": "error", "balanced_error": None, "recall@1": None, "recall@5": None})
            continue
        for r in res["metrics"].rows():
            rows.append({**ident, **{c: r.get(c) for c in METRIC_COLUMNS[4:]}})
    return rows


def write_metrics_csv(results: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in metric_rows(results):
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})


def write_trace_csv(results: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        multi = len(results) > 1
        writer.writerow((["config_id"] if multi else []) + ["epoch", "train_loss"])
        for res in results:
            for epoch, loss in enumerate(res["trace"]):
                writer.writerow(([res["config_id"]] if multi else []) + [epoch, repr(float(loss))])


def summary(results: list[dict]) -> dict:
    return {"runs": [{"config_id": r["config_id"], "label": ExperimentConfig(**r["config"]).label,
                      "config": r["config"], "error": r["error"],
                      "metrics": None if r["metrics"] is None else r["metrics"].to_dict()}
                     for r in results]}


def write_summary_json(results: list[dict], path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(summary(results), fh, indent=2, sort_keys=True)


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
