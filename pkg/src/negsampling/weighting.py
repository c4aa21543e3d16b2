"""Negative weights w(y, y') and pairwise label margins rho(y, y').

Every weight is paired with the margin it induces in expectation,
``rho = m * w * q[y']``.  Choosing ``w = rho / (m * q[y'])`` therefore turns
any proposal ``q`` into an estimator of the margin loss with target ``rho``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .label_stats import LabelDistribution

WEIGHT_KINDS = ("constant", "importance", "relative", "tail", "target_margin")
MARGIN_PRESETS = ("adaptive", "equalised", "logit_adjusted", "unit")


def _probs(d) -> np.ndarray:
    return np.asarray(d.probs if isinstance(d, LabelDistribution) else d, dtype=np.float64)


@dataclass(frozen=True)
class MarginMatrix:
    """Pairwise margins ``rho(y, y')``, evaluated lazily and vectorised."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, y, y_neg) -> np.ndarray:
        y, y_neg = np.asarray(y), np.asarray(y_neg)
        return np.broadcast_to(np.asarray(self.fn(y, y_neg), dtype=np.float64),
                               np.broadcast_shapes(y.shape, y_neg.shape))

    def row(self, y: int, num_labels: int) -> np.ndarray:
        """``rho(y, .)`` over all labels."""
        return np.array(self(y, np.arange(num_labels)))

    @classmethod
    def unit(cls) -> "MarginMatrix":
        return cls("unit", lambda y, yn: np.ones(np.broadcast_shapes(np.shape(y), np.shape(yn))))

    @classmethod
    def constant(cls, value: float) -> "MarginMatrix":
        if value < 0:
            raise ValueError("margins must be nonnegative")
        return cls(f"constant({value})", lambda y, yn: np.full(np.broadcast_shapes(np.shape(y), np.shape(yn)), value))

    @classmethod
    def from_array(cls, rho, name: str = "array") -> "MarginMatrix":
        rho = np.array(rho, dtype=np.float64)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError("margin array must be L x L")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise ValueError("margins must be finite and nonnegative")
        rho.setflags(write=False)
        return cls(name, lambda y, yn: rho[y, yn])

    @classmethod
    def adaptive(cls, pi) -> "MarginMatrix":
        # pi_y^{-1/4} scaled by its maximum so margins lie in (0, 1]
        p = _check_positive(pi)
        scale = p ** -0.25 / np.max(p ** -0.25)
        return cls("adaptive", lambda y, yn: scale[y] * np.ones(np.shape(yn)))

    @classmethod
    def equalised(cls, pi, F: Callable[[np.ndarray], np.ndarray] | None = None) -> "MarginMatrix":
        p = _check_positive(pi)
        vals = p if F is None else np.asarray(F(p), dtype=np.float64)
        if np.any(vals < 0):
            raise ValueError("F must map into the nonnegative reals")
        return cls("equalised", lambda y, yn: vals[yn] * np.ones(np.shape(y)))

    @classmethod
    def logit_adjusted(cls, pi) -> "MarginMatrix":
        p = _check_positive(pi)
        return cls("logit_adjusted", lambda y, yn: p[yn] / p[y])

    @classmethod
    def preset(cls, name: str, pi=None) -> "MarginMatrix":
        if name == "unit":
            return cls.unit()
        if pi is None:
            raise ValueError(f"margin preset {name!r} needs a label distribution")
        if name == "adaptive":
            return cls.adaptive(pi)
        if name in ("equalised", "equalized"):
            return cls.equalised(pi)
        if name in ("logit_adjusted", "logit"):
            return cls.logit_adjusted(pi)
        raise ValueError(f"unknown margin preset {name!r}; expected one of {MARGIN_PRESETS}")


def _check_positive(pi) -> np.ndarray:
    p = _probs(pi)
    if np.any(p <= 0):
        raise ValueError("margin presets need strictly positive label probabilities")
    return p


@dataclass(frozen=True)
class WeightingScheme:
    """Rule producing ``w(y, y')``.

    ``zero_positive`` zeroes the positive label's own weight, which is how a
    proposal that can draw the positive is kept from counting it as a
    negative.  ``pi`` is the label prior used by ``tail``; ``rho`` the target
    margins of ``target_margin``.
    """

    kind: str
    pi: LabelDistribution | None = None
    rho: MarginMatrix | None = None
    zero_positive: bool = False

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weighting {self.kind!r}; expected one of {WEIGHT_KINDS}")
        if self.kind == "tail" and self.pi is None:
            raise ValueError("tail weighting needs the label prior pi")
        if self.kind == "target_margin" and self.rho is None:
            raise ValueError("target_margin weighting needs margins rho")

    @property
    def name(self) -> str:
        if self.kind == "target_margin":
            return f"target_margin:{self.rho.name}"
        return self.kind


def parse_weighting(spec: str, pi=None, zero_positive: bool = False) -> WeightingScheme:
    """Build a scheme from ``constant | importance | relative | tail | target_margin:<preset>``."""
    spec = spec.strip()
    kind, _, arg = spec.partition(":")
    if kind == "target_margin":
        if not arg:
            raise ValueError("target_margin needs a preset, e.g. target_margin:logit_adjusted")
        return WeightingScheme("target_margin", rho=MarginMatrix.preset(arg, pi), zero_positive=zero_positive)
    if arg:
        raise ValueError(f"weighting {kind!r} takes no argument")
    if kind == "tail":
        if pi is None:
            raise ValueError("tail weighting needs a label distribution")
        pi = pi if isinstance(pi, LabelDistribution) else LabelDistribution(np.asarray(pi))
    return WeightingScheme(kind, pi=pi if kind == "tail" else None, zero_positive=zero_positive)


def _gather(q: np.ndarray, idx) -> np.ndarray:
    idx = np.asarray(idx)
    if q.ndim == 1:
        return q[idx]
    return np.take_along_axis(q, idx.reshape(q.shape[0], -1), axis=1).reshape(idx.shape)


def weight(scheme: WeightingScheme, y, y_neg, q, m: int, *, base=None, context=None) -> np.ndarray:
    """Weights of negatives ``y_neg`` for positive ``y``.

    ``q`` is the distribution the negatives were drawn from, either one
    vector or one row per example (then ``y`` is a vector and ``y_neg`` has
    one row per example).  ``base`` is the proposal before positive
    exclusion; relative weighting takes the positive's mass from it, since
    an excluded ``q`` has none.  ``context`` is accepted for
    instance-dependent schemes and unused by the built-in ones.
    """
    del context
    q = _probs(q)
    y = np.asarray(y)
    y_neg = np.asarray(y_neg)
    if q.ndim == 2:
        y = y.reshape(-1, *([1] * (y_neg.ndim - 1)))
    kind = scheme.kind
    if kind == "constant":
        w = np.full(np.broadcast_shapes(y.shape, y_neg.shape), 1.0 / m)
    else:
        q_neg = _gather(q, y_neg)
        if np.any(q_neg <= 0):
            raise ValueError(f"{kind} weighting divides by q[y'] but a negative has q[y'] = 0")
        if kind == "importance":
            w = 1.0 / (m * q_neg)
        elif kind == "relative":
            ref = q if base is None else _probs(base)
            w = _gather(ref, y) / _gather(ref, y_neg)
        elif kind == "tail":
            pi = scheme.pi.probs
            w = pi[y_neg] / (m * q_neg * pi[y])
        else:
            w = scheme.rho(y, y_neg) / (m * q_neg)
    w = np.array(w, dtype=np.float64)
    if scheme.zero_positive:
        w = np.where(y_neg == y, 0.0, w)
    return w


def rho_of(q, scheme: WeightingScheme, y, y_neg, m: int, *, base=None) -> np.ndarray:
    """Implied margin ``m * w(y, y') * q[y']``."""
    w = weight(scheme, y, y_neg, q, m, base=base)
    return m * w * _gather(_probs(q), y_neg)
