"""Closed-form implicit losses of sampled losses and their catalog.

For a proposal ``q`` and weights ``w`` with ``m`` i.i.d. negatives, each
negative ``y'`` enters the expected loss with the margin
``rho(y, y') = m * w(y, y') * q[y']``.  The sampled decoupled loss has an
exact mean and variance in terms of ``rho``; for the sampled softmax loss
Jensen's inequality gives an upper bound that is itself a margin loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .label_stats import LabelDistribution
from .losses import MarginLossPair, margin_ce
from .weighting import WeightingScheme, weight

_Q_TOL = 0.0


def _probs(d) -> np.ndarray:
    return np.asarray(d.probs if isinstance(d, LabelDistribution) else d, dtype=np.float64)


@dataclass(frozen=True)
class ImplicitLossReport:
    expected_or_bound: float
    variance: float
    is_exact: bool
    rho_used: np.ndarray


@dataclass(frozen=True)
class ConvergenceQuantities:
    mu: float
    sigma_sq: float
    eta: np.ndarray

    @property
    def inverse_snr(self) -> float:
        """``sigma^2 / mu^2``, the constant in the ``1/m`` squared-error rate."""
        return self.sigma_sq / self.mu ** 2


def _check_positive_excluded(y: int, q: np.ndarray, scheme: WeightingScheme | None) -> None:
    if q[y] > _Q_TOL and not (scheme is not None and scheme.zero_positive):
        raise ValueError("implicit losses assume q[y] = 0; exclude the positive or zero its weight")


def weights_and_margins(y: int, q, scheme: WeightingScheme, m: int, *, base=None):
    """Per-label weight and implied margin vectors over all ``L`` labels.

    Labels outside the support of ``q`` are never drawn; their weight and
    margin are reported as zero.
    """
    q = _probs(q)
    L = q.size
    support = np.flatnonzero(q > 0)
    w = np.zeros(L)
    w[support] = weight(scheme, y, support, q, m, base=base)
    rho = m * w * q
    rho[y] = 0.0
    return w, rho


def implicit_decoupled(y: int, f, q, scheme: WeightingScheme, m: int, pair: MarginLossPair, *,
                       base=None) -> ImplicitLossReport:
    """Exact mean and variance of the sampled decoupled loss."""
    q = _probs(q)
    _check_positive_excluded(y, q, scheme)
    f = np.asarray(f, dtype=np.float64)
    w, rho = weights_and_margins(y, q, scheme, m, base=base)
    neg = pair.varphi(-f)
    neg[y] = 0.0
    s = np.sum(rho * neg)
    expected = float(pair.phi(f[y]) + s)
    variance = float(np.sum(w * rho * neg ** 2) - s ** 2 / m)
    return ImplicitLossReport(expected, max(variance, 0.0), True, rho)


def implicit_softmax_bound(y: int, f, q, scheme: WeightingScheme, m: int, *, base=None) -> ImplicitLossReport:
    """Jensen upper bound on the expected sampled softmax loss.

    ``variance`` is the delta-method approximation ``sigma^2 / (m mu^2)`` of
    the sampled loss around the bound; it is not exact.
    """
    q = _probs(q)
    _check_positive_excluded(y, q, scheme)
    f = np.asarray(f, dtype=np.float64)
    w, rho = weights_and_margins(y, q, scheme, m, base=base)
    bound = margin_ce(y, f, rho)
    cq = convergence_quantities(y, f, q, m * w)
    return ImplicitLossReport(bound, cq.sigma_sq / (m * cq.mu ** 2), False, rho)


def eta_of(y: int, q, scheme: WeightingScheme, m: int = 1, *, base=None) -> np.ndarray:
    """The m-free weight factor ``m * w(y, .)``, zero off the support of ``q``."""
    w, _ = weights_and_margins(y, q, scheme, m, base=base)
    return m * w


def convergence_quantities(y: int, f, q, eta) -> ConvergenceQuantities:
    """Mean and variance of ``eta[y'] exp(f[y'])`` under ``y' ~ q``, plus ``exp(f[y])``."""
    q = _probs(q)
    f = np.asarray(f, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if q[y] > _Q_TOL and eta[y] != 0:
        raise ValueError("the positive label may only carry proposal mass if its weight is zero")
    z = np.where(q > 0, eta * np.exp(f), 0.0)
    mean = np.sum(q * z)
    sigma_sq = float(np.sum(q * (z - mean) ** 2))
    return ConvergenceQuantities(float(np.exp(f[y]) + mean), sigma_sq, eta)


# --------------------------------------------------------------------------
# catalog of (sampler, weighting) rows

SAMPLERS = ("uniform", "within_batch")
WEIGHTINGS = ("constant", "importance", "relative", "tail")
CONVENTIONS = ("exclusive", "inclusive")


@dataclass(frozen=True)
class CatalogRow:
    family: str  # "softmax" or "decoupled"
    sampler: str
    weighting: str
    rho_pattern: str  # exclusive convention, q[y] = 0
    rho_pattern_inclusive: str  # q[y] > 0 with w(y, y) = 0
    comment: str
    annotation: str  # "unbiased", "tail", "head" or "neutral"
    margins: Callable[[int, np.ndarray, int, str], np.ndarray]


def _row_margins(sampler: str, weighting: str):
    """Closed-form margin vector for a catalog row, written out per case."""

    def margins(y: int, pi: np.ndarray, m: int, convention: str) -> np.ndarray:
        L = pi.size
        incl = convention == "inclusive"
        if weighting == "importance":
            rho = np.ones(L)
        elif weighting == "tail":
            rho = pi / pi[y]
        elif sampler == "uniform":
            denom = L if incl else L - 1
            rho = np.full(L, (1.0 if weighting == "constant" else float(m)) / denom)
        elif weighting == "constant":
            rho = pi.copy() if incl else pi / (1.0 - pi[y])
        else:
            rho = np.full(L, m * pi[y] if incl else m * pi[y] / (1.0 - pi[y]))
        rho[y] = 0.0
        return rho

    return margins


_ROW_TEXT = {
    # (sampler, weighting): (exclusive rho, inclusive rho, softmax comment, decoupled comment, annotation)
    ("uniform", "constant"): ("1/(L-1)", "1/L", "softmax with downweighted negatives", "scaled decoupled loss", "neutral"),
    ("uniform", "importance"): ("1", "1", "softmax cross-entropy", "decoupled loss", "unbiased"),
    ("uniform", "relative"): ("m/(L-1)", "m/L", "softmax with downweighted negatives", "scaled decoupled loss", "neutral"),
    ("uniform", "tail"): ("pi[y']/pi[y]", "pi[y']/pi[y]", "logit-adjusted loss", "tail-heavy loss", "tail"),
    ("within_batch", "constant"): ("pi[y']/(1-pi[y])", "pi[y']", "equalised loss", "tail-heavy loss", "tail"),
    ("within_batch", "importance"): ("1", "1", "softmax cross-entropy", "decoupled loss", "unbiased"),
    ("within_batch", "relative"): ("m*pi[y]/(1-pi[y])", "m*pi[y]", "softmax with upweighted head labels", "head-heavy loss", "head"),
    ("within_batch", "tail"): ("pi[y']/pi[y]", "pi[y']/pi[y]", "logit-adjusted loss", "tail-heavy loss", "tail"),
}

CATALOG: tuple[CatalogRow, ...] = tuple(
    CatalogRow(family, s, w, text[0], text[1], text[2] if family == "softmax" else text[3], text[4], _row_margins(s, w))
    for family in ("softmax", "decoupled")
    for (s, w), text in _ROW_TEXT.items()
)


def find_row(family: str, sampler: str, weighting: str) -> CatalogRow:
    for row in CATALOG:
        if (row.family, row.sampler, row.weighting) == (family, sampler, weighting):
            return row
    raise KeyError(f"no catalog row for ({family}, {sampler}, {weighting})")


@dataclass(frozen=True)
class CatalogEntry:
    """A catalog row bound to a label prior, ``m`` and a q-convention."""

    row: CatalogRow
    pi: np.ndarray
    m: int
    convention: str = "exclusive"

    def rho(self, y: int) -> np.ndarray:
        return self.row.margins(y, self.pi, self.m, self.convention)

    def __call__(self, y: int, f, pair: MarginLossPair | None = None) -> float:
        f = np.asarray(f, dtype=np.float64)
        rho = self.rho(y)
        if self.row.family == "softmax":
            return margin_ce(y, f, rho)
        if pair is None:
            raise ValueError("decoupled rows need a margin loss pair")
        neg = pair.varphi(-f)
        neg[y] = 0.0
        return float(pair.phi(f[y]) + np.sum(rho * neg))

    def proposal(self, y: int) -> tuple[np.ndarray, np.ndarray]:
        """``(q, base)`` this row samples from, under the bound convention."""
        L = self.pi.size
        base = np.full(L, 1.0 / L) if self.row.sampler == "uniform" else self.pi.copy()
        if self.convention == "inclusive":
            return base, base
        q = base.copy()
        q[y] = 0.0
        return q / q.sum(), base

    def scheme(self) -> WeightingScheme:
        pi = LabelDistribution.from_weights(self.pi)
        return WeightingScheme(self.row.weighting, pi=pi if self.row.weighting == "tail" else None,
                               zero_positive=self.convention == "inclusive")


def catalog_implicit(q_kind: str, w_kind: str, pi, m: int, *, family: str = "softmax",
                     convention: str = "exclusive") -> CatalogEntry:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    return CatalogEntry(find_row(family, q_kind, w_kind), _probs(pi), m, convention)
