"""Full, margin and sampled losses over logits, with analytic gradients.

Single-example functions take a label ``y`` and a logit vector ``f``.  The
``batch_*`` variants take a logit matrix ``F`` of shape ``(B, L)`` and return
per-example losses together with ``dL/dF`` (not averaged), which is what
the training harness consumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .sampler import NegativeSample
from .weighting import MarginMatrix, WeightingScheme, weight

LOSS_FAMILIES = ("softmax_ce", "decoupled", "margin_ce", "sampled_softmax", "sampled_decoupled")


def log1p_sum_exp(t, axis=-1):
    """``log(1 + sum(exp(t)))`` without overflow and without losing tiny values."""
    t = np.asarray(t, dtype=np.float64)
    if t.shape[axis] == 0:
        return np.zeros(np.delete(t.shape, axis if axis >= 0 else t.ndim + axis))
    M = np.maximum(np.max(t, axis=axis, keepdims=True), 0.0)
    with np.errstate(invalid="ignore"):
        e = np.exp(t - M)
    e = np.where(np.isneginf(t), 0.0, e)
    s = e.sum(axis=axis, keepdims=True)
    small = np.log1p(s)  # exact branch when the max shift is zero
    big = M + np.log(np.exp(-M) + s)
    out = np.where(M == 0.0, small, big)
    return np.squeeze(out, axis=axis)


def _softmax_with_zero(t, axis=-1):
    """Probabilities of the extra zero term and of each ``t`` in ``softmax([0, t])``."""
    t = np.asarray(t, dtype=np.float64)
    M = np.maximum(np.max(t, axis=axis, keepdims=True), 0.0)
    e = np.where(np.isneginf(t), 0.0, np.exp(t - M))
    e0 = np.exp(-M)
    Z = e0 + e.sum(axis=axis, keepdims=True)
    return np.squeeze(e0 / Z, axis=axis), e / Z


# --------------------------------------------------------------------------
# binary margin losses


@dataclass(frozen=True)
class MarginLoss:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v):
        return self.value(np.asarray(v, dtype=np.float64))


@dataclass(frozen=True)
class MarginLossPair:
    """``phi`` scores the positive logit, ``varphi`` the negated negative logits."""

    name: str
    phi: MarginLoss
    varphi: MarginLoss


def _hinge():
    return MarginLoss("hinge", lambda v: np.maximum(0.0, 1.0 - v),
                      lambda v: np.where(v < 1.0, -1.0, 0.0))


def _squared_hinge():
    return MarginLoss("squared_hinge", lambda v: np.maximum(0.0, 1.0 - v) ** 2,
                      lambda v: -2.0 * np.maximum(0.0, 1.0 - v))


def _softplus():
    # logistic loss log(1 + e^{-v})
    return MarginLoss("softplus", lambda v: np.logaddexp(0.0, -v),
                      lambda v: -0.5 * (1.0 - np.tanh(0.5 * v)))


def _negative_contrastive(margin: float):
    # varphi(-s) = max(0, s - margin)^2 penalises a negative cosine score above the margin
    return MarginLoss(f"contrastive_neg({margin})",
                      lambda v: np.maximum(0.0, -v - margin) ** 2,
                      lambda v: -2.0 * np.maximum(0.0, -v - margin))


def margin_pair(name: str, margin: float = 0.0) -> MarginLossPair:
    """Named margin-loss pairs: hinge, softplus, squared_hinge, cosine_contrastive."""
    if name == "hinge":
        return MarginLossPair(name, _hinge(), _hinge())
    if name in ("softplus", "logistic"):
        return MarginLossPair("softplus", _softplus(), _softplus())
    if name == "squared_hinge":
        return MarginLossPair(name, _squared_hinge(), _squared_hinge())
    if name in ("cosine_contrastive", "contrastive"):
        return MarginLossPair("cosine_contrastive", _squared_hinge(), _negative_contrastive(margin))
    raise ValueError(f"unknown margin loss pair {name!r}")


PAIR_NAMES = ("hinge", "softplus", "squared_hinge", "cosine_contrastive")


# --------------------------------------------------------------------------
# helpers


def _labels(neg) -> np.ndarray:
    if isinstance(neg, NegativeSample):
        return np.asarray(neg.labels)
    return np.asarray(neg, dtype=np.int64)


def resolve_weights(y, neg, scheme, q=None, *, base=None) -> np.ndarray:
    """Weights for a drawn negative set; ``scheme`` may already be an array."""
    labels = _labels(neg)
    if isinstance(scheme, WeightingScheme):
        if q is None:
            raise ValueError("a weighting scheme needs the proposal q")
        return weight(scheme, y, labels, q, max(labels.size, 1), base=base)
    w = np.broadcast_to(np.asarray(scheme, dtype=np.float64), labels.shape)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return np.array(w)


def _rho_row(y: int, f: np.ndarray, rho) -> np.ndarray:
    if isinstance(rho, MarginMatrix):
        return rho.row(y, f.size)
    return np.broadcast_to(np.asarray(rho, dtype=np.float64), f.shape)


def _others(y: int, L: int) -> np.ndarray:
    return np.delete(np.arange(L), y)


# --------------------------------------------------------------------------
# single-example losses


def softmax_ce(y: int, f) -> float:
    """``log(1 + sum_{y' != y} exp(f[y'] - f[y]))``."""
    f = np.asarray(f, dtype=np.float64)
    return float(log1p_sum_exp(np.delete(f, y) - f[y]))


def softmax_ce_partition(y: int, f) -> float:
    """The ``-f[y] + logsumexp(f)`` form of softmax cross-entropy."""
    f = np.asarray(f, dtype=np.float64)
    M = f.max()
    return float(-f[y] + M + np.log(np.exp(f - M).sum()))


def decoupled_loss(y: int, f, pair: MarginLossPair) -> float:
    f = np.asarray(f, dtype=np.float64)
    return float(pair.phi(f[y]) + pair.varphi(-np.delete(f, y)).sum())


def margin_ce(y: int, f, rho) -> float:
    """Softmax cross-entropy with pairwise margins ``rho(y, .)``."""
    f = np.asarray(f, dtype=np.float64)
    r = np.delete(_rho_row(y, f, rho), y)
    if np.any(r < 0):
        raise ValueError("margins must be nonnegative")
    with np.errstate(divide="ignore"):
        t = np.log(r) + np.delete(f, y) - f[y]
    return float(log1p_sum_exp(t))


def sampled_softmax_ce(y: int, f, neg, scheme, q=None, *, base=None) -> float:
    """``log(1 + sum_{y' in N} w(y, y') exp(f[y'] - f[y]))``; duplicates count."""
    f = np.asarray(f, dtype=np.float64)
    labels = _labels(neg)
    w = resolve_weights(y, labels, scheme, q, base=base)
    with np.errstate(divide="ignore"):
        t = np.log(w) + f[labels] - f[y]
    return float(log1p_sum_exp(t))


def sampled_decoupled(y: int, f, neg, scheme, q=None, pair: MarginLossPair | None = None, *, base=None) -> float:
    if pair is None:
        raise ValueError("sampled_decoupled needs a margin loss pair")
    f = np.asarray(f, dtype=np.float64)
    labels = _labels(neg)
    w = resolve_weights(y, labels, scheme, q, base=base)
    return float(pair.phi(f[y]) + np.sum(w * pair.varphi(-f[labels])))


def corrected_logits(f, y: int, neg, scheme, q=None, *, base=None):
    """Negatives and their shifted logits ``f[y'] + log w(y, y')``.

    Zero-weight negatives are dropped.  The sampled softmax loss equals the
    unweighted ``log(1 + sum exp(fbar - f[y]))`` over what is returned.
    """
    f = np.asarray(f, dtype=np.float64)
    labels = _labels(neg)
    w = resolve_weights(y, labels, scheme, q, base=base)
    keep = w > 0
    return labels[keep], f[labels[keep]] + np.log(w[keep])


def unweighted_sampled_ce(y: int, f, fbar) -> float:
    f = np.asarray(f, dtype=np.float64)
    return float(log1p_sum_exp(np.asarray(fbar, dtype=np.float64) - f[y]))


# --------------------------------------------------------------------------
# gradients


def softmax_ce_grad(y: int, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    p = np.exp(f - f.max())
    p /= p.sum()
    p[y] -= 1.0
    return p


def margin_ce_grad(y: int, f, rho) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    idx = _others(y, f.size)
    r = _rho_row(y, f, rho)[idx]
    with np.errstate(divide="ignore"):
        t = np.log(r) + f[idx] - f[y]
    _, p = _softmax_with_zero(t)
    g = np.zeros_like(f)
    g[idx] = p
    g[y] = -p.sum()
    return g


def decoupled_grad(y: int, f, pair: MarginLossPair) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    g = -pair.varphi.deriv(-f)
    g[y] = pair.phi.deriv(f[y])
    return g


def sampled_softmax_grad(y: int, f, neg, scheme, q=None, *, base=None) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    labels = _labels(neg)
    w = resolve_weights(y, labels, scheme, q, base=base)
    with np.errstate(divide="ignore"):
        t = np.log(w) + f[labels] - f[y]
    _, p = _softmax_with_zero(t)
    g = np.zeros_like(f)
    np.add.at(g, labels, p)
    g[y] -= p.sum()
    return g


def sampled_decoupled_grad(y: int, f, neg, scheme, q=None, pair: MarginLossPair | None = None, *, base=None) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    labels = _labels(neg)
    w = resolve_weights(y, labels, scheme, q, base=base)
    g = np.zeros_like(f)
    np.add.at(g, labels, -w * pair.varphi.deriv(-f[labels]))
    g[y] += pair.phi.deriv(f[y])
    return g


_LOSSES = {
    "softmax_ce": (softmax_ce, softmax_ce_grad),
    "decoupled": (decoupled_loss, decoupled_grad),
    "margin_ce": (margin_ce, margin_ce_grad),
    "sampled_softmax": (sampled_softmax_ce, sampled_softmax_grad),
    "sampled_decoupled": (sampled_decoupled, sampled_decoupled_grad),
}


def loss_value(loss: str, y: int, f, *args, **kwargs) -> float:
    return _LOSSES[loss][0](y, f, *args, **kwargs)


def grad(loss: str, y: int, f, *args, **kwargs) -> np.ndarray:
    """Analytic gradient of the named loss family with respect to all logits."""
    if loss not in _LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSS_FAMILIES}")
    return _LOSSES[loss][1](y, f, *args, **kwargs)


# --------------------------------------------------------------------------
# batched forms: F is (B, L), Y is (B,), N and W are (B, m)


def batch_softmax_ce(F, Y):
    F = np.asarray(F, dtype=np.float64)
    rows = np.arange(F.shape[0])
    M = F.max(axis=1, keepdims=True)
    E = np.exp(F - M)
    Z = E.sum(axis=1, keepdims=True)
    losses = (M[:, 0] + np.log(Z[:, 0])) - F[rows, Y]
    dF = E / Z
    dF[rows, Y] -= 1.0
    return losses, dF


def batch_margin_ce(F, Y, R):
    """``R[b]`` holds ``rho(Y[b], .)``; its entry at ``Y[b]`` is ignored."""
    F = np.asarray(F, dtype=np.float64)
    rows = np.arange(F.shape[0])
    with np.errstate(divide="ignore"):
        T = np.log(R) + F - F[rows, Y][:, None]
    T[rows, Y] = -np.inf
    losses = log1p_sum_exp(T, axis=1)
    _, P = _softmax_with_zero(T, axis=1)
    dF = P
    dF[rows, Y] = -P.sum(axis=1)
    return losses, dF


def batch_sampled_softmax(F, Y, N, W):
    F = np.asarray(F, dtype=np.float64)
    B, L = F.shape
    rows = np.arange(B)
    fy = F[rows, Y]
    with np.errstate(divide="ignore"):
        T = np.log(W) + np.take_along_axis(F, N, axis=1) - fy[:, None]
    losses = log1p_sum_exp(T, axis=1)
    _, P = _softmax_with_zero(T, axis=1)
    dF = np.zeros((B, L))
    np.add.at(dF, (np.repeat(rows, N.shape[1]), N.ravel()), P.ravel())
    dF[rows, Y] -= P.sum(axis=1)
    return losses, dF


def batch_decoupled(F, Y, pair: MarginLossPair):
    F = np.asarray(F, dtype=np.float64)
    rows = np.arange(F.shape[0])
    fy = F[rows, Y]
    neg = pair.varphi(-F)
    neg[rows, Y] = 0.0
    losses = pair.phi(fy) + neg.sum(axis=1)
    dF = -pair.varphi.deriv(-F)
    dF[rows, Y] = pair.phi.deriv(fy)
    return losses, dF


def batch_sampled_decoupled(F, Y, N, W, pair: MarginLossPair):
    F = np.asarray(F, dtype=np.float64)
    B, L = F.shape
    rows = np.arange(B)
    fy = F[rows, Y]
    FN = np.take_along_axis(F, N, axis=1)
    losses = pair.phi(fy) + np.sum(W * pair.varphi(-FN), axis=1)
    dF = np.zeros((B, L))
    np.add.at(dF, (np.repeat(rows, N.shape[1]), N.ravel()), (-W * pair.varphi.deriv(-FN)).ravel())
    dF[rows, Y] += pair.phi.deriv(fy)
    return losses, dF


# --------------------------------------------------------------------------
# loss selection strings


@dataclass(frozen=True)
class LossSpec:
    family: str
    pair: str | None = None
    preset: str | None = None

    @property
    def sampled(self) -> bool:
        return self.family.startswith("sampled")

    def __str__(self) -> str:
        arg = self.pair or self.preset
        return f"{self.family}:{arg}" if arg else self.family


def parse_loss(spec: str) -> LossSpec:
    """``softmax_ce | decoupled:<pair> | margin_ce:<preset> | sampled_softmax | sampled_decoupled:<pair>``."""
    family, _, arg = spec.strip().partition(":")
    if family not in LOSS_FAMILIES:
        raise ValueError(f"unknown loss {family!r}; expected one of {LOSS_FAMILIES}")
    if family in ("decoupled", "sampled_decoupled"):
        margin_pair(arg or "")  # validates the name
        return LossSpec(family, pair=arg)
    if family == "margin_ce":
        if not arg:
            raise ValueError("margin_ce needs a preset, e.g. margin_ce:logit_adjusted")
        return LossSpec(family, preset=arg)
    if arg:
        raise ValueError(f"loss {family!r} takes no argument")
    return LossSpec(family)
