"""Negative label samplers: alias tables, realised proposal q, i.i.d. draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .label_stats import LabelDistribution

SAMPLER_KINDS = ("uniform", "within_batch", "model", "custom")


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    @property
    def num_labels(self) -> int:
        return self.prob.size

    def induced_probs(self) -> np.ndarray:
        """Exact distribution of ``sample`` as implied by the table."""
        L = self.prob.size
        out = self.prob / L
        np.add.at(out, self.alias, (1.0 - self.prob) / L)
        return out

    def sample(self, rng, size) -> np.ndarray:
        rng = as_rng(rng)
        L = self.prob.size
        cols = rng.integers(0, L, size=size)
        coin = rng.random(size=size)
        return np.where(coin < self.prob[cols], cols, self.alias[cols])


def build_alias(dist: LabelDistribution | np.ndarray) -> AliasTable:
    """Vose's alias method: O(L) construction, O(1) draws."""
    p = np.asarray(dist.probs if isinstance(dist, LabelDistribution) else dist, dtype=np.float64)
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("distribution has NaN or negative mass")
    total = p.sum()
    if total <= 0:
        raise ValueError("distribution has no mass")
    L = p.size
    scaled = p * (L / total)
    prob = np.ones(L)
    alias = np.arange(L)
    small = [i for i in range(L) if scaled[i] < 1.0]
    large = [i for i in range(L) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # leftovers are 1 up to rounding; their alias is themselves
    for i in small + large:
        prob[i] = 1.0
    prob.setflags(write=False)
    alias.setflags(write=False)
    return AliasTable(prob, alias)


@dataclass(frozen=True)
class SamplingScheme:
    """How negatives are proposed.

    ``base`` is only used by the ``custom`` kind; ``within_batch`` derives its
    distribution from the minibatch labels and ``model`` from current logits.
    ``batch_mode="literal"`` makes within-batch sampling use the deduplicated
    batch labels themselves as the negative set instead of i.i.d. draws.
    """

    kind: str
    num_labels: int
    base: LabelDistribution | None = None
    exclude_positive: bool = True
    batch_mode: str = "frequency"

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if self.batch_mode not in ("frequency", "literal"):
            raise ValueError(f"unknown batch_mode {self.batch_mode!r}")
        if self.kind == "custom":
            if self.base is None:
                raise ValueError("custom sampler needs a base distribution")
            if self.base.num_labels != self.num_labels:
                raise ValueError("base distribution has the wrong number of labels")


@dataclass(frozen=True)
class NegativeSample:
    labels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.labels.shape != self.probs.shape:
            raise ValueError("labels and probs must have equal length")
        if np.any(self.probs <= 0):
            raise ValueError("a drawn label has zero proposal probability")

    def __len__(self) -> int:
        return self.labels.size


def base_weights(scheme: SamplingScheme, batch_labels=None, logits=None) -> np.ndarray:
    """Unnormalised proposal over all labels, before positive exclusion."""
    L = scheme.num_labels
    if scheme.kind == "uniform":
        return np.ones(L)
    if scheme.kind == "within_batch":
        if batch_labels is None or len(batch_labels) == 0:
            raise ValueError("within-batch sampling needs a non-empty batch")
        return np.bincount(np.asarray(batch_labels), minlength=L).astype(np.float64)
    if scheme.kind == "model":
        if logits is None:
            raise ValueError("model-based sampling needs logits")
        z = np.asarray(logits, dtype=np.float64)
        return np.exp(z - z.max())
    return np.asarray(scheme.base.probs, dtype=np.float64).copy()


def realize_q(scheme: SamplingScheme, positive: int | None = None, *,
              batch_labels=None, logits=None) -> LabelDistribution:
    """Concrete negative distribution for one example.

    With ``exclude_positive`` the positive label's mass is removed and the
    rest renormalised; raises if nothing is left.
    """
    w = base_weights(scheme, batch_labels, logits)
    if scheme.exclude_positive and positive is not None:
        w[positive] = 0.0
    if w.sum() <= 0:
        raise ValueError("proposal has zero mass after excluding the positive label")
    return LabelDistribution.from_weights(w)


def realize_base(scheme: SamplingScheme, *, batch_labels=None, logits=None) -> LabelDistribution:
    """The proposal without positive exclusion (used by relative weighting)."""
    return LabelDistribution.from_weights(base_weights(scheme, batch_labels, logits))


def draw_negatives(q: LabelDistribution, m: int, rng_seed=None, *, table: AliasTable | None = None) -> NegativeSample:
    """``m`` i.i.d. draws from ``q`` via an alias table."""
    if m < 1:
        raise ValueError("m must be at least 1")
    table = table if table is not None else build_alias(q)
    labels = table.sample(as_rng(rng_seed), m)
    return NegativeSample(labels, np.asarray(q.probs)[labels])


def literal_batch_negatives(batch_labels, positive: int) -> np.ndarray:
    """Deduplicated batch labels other than the positive."""
    labels = np.unique(np.asarray(batch_labels))
    return labels[labels != positive]


def draw_negatives_batch(Q: np.ndarray, m: int, rng) -> np.ndarray:
    """Draw ``m`` labels from every row of the row-stochastic matrix ``Q``.

    Row-wise inverse CDF on a flattened, row-offset cumulative sum so that a
    whole minibatch is sampled with a single ``searchsorted`` call.
    """
    Q = np.asarray(Q, dtype=np.float64)
    B, L = Q.shape
    cdf = np.cumsum(Q, axis=1)
    totals = cdf[:, -1:]
    if np.any(totals <= 0):
        raise ValueError("a proposal row has zero mass")
    cdf = cdf / totals
    # pin the cdf to 1 from each row's last positive entry on, so rounding
    # can never select a trailing zero-mass label
    last = L - 1 - np.argmax(Q[:, ::-1] > 0, axis=1)
    cdf[np.arange(L)[None, :] >= last[:, None]] = 1.0
    offsets = np.arange(B)[:, None]
    u = as_rng(rng).random((B, m))
    flat = (cdf + offsets).ravel()
    idx = np.searchsorted(flat, (u + offsets).ravel(), side="right")
    labels = idx.reshape(B, m) - offsets * L
    # zero-mass labels share a cdf value with their predecessor and are never hit
    return np.minimum(labels, L - 1)
