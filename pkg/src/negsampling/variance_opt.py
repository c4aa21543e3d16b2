"""Minimum-variance proposal for the sampled decoupled loss.

With margin-targeting weights ``w = rho / (m q)`` the sampled decoupled loss
is unbiased for the margin loss for any ``q``; its variance is
``(1/m) [sum rho^2 varphi^2 / q - (sum rho varphi)^2]``, minimised by
``q* ~ rho * varphi(-f)``.  This is an analysis tool: computing ``q*`` needs
every label's loss, which is exactly what sampling avoids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .label_stats import LabelDistribution
from .losses import MarginLossPair, _rho_row


@dataclass(frozen=True)
class VarianceProfile:
    q_star: np.ndarray
    achieved_variance: float
    degenerate: bool = False

    def distribution(self) -> LabelDistribution:
        if self.degenerate:
            raise ValueError("degenerate profile has no proposal")
        return LabelDistribution.from_weights(self.q_star)


def _contributions(y: int, f, rho, pair: MarginLossPair) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    c = _rho_row(y, f, rho) * pair.varphi(-f)
    c = np.array(c, dtype=np.float64)
    c[y] = 0.0
    if np.any(c < 0):
        raise ValueError("margins must be nonnegative")
    return c


def variance_under(q, y: int, f, rho, m: int, pair: MarginLossPair) -> float:
    """Loss variance under proposal ``q`` with weights ``rho / (m q)``."""
    q = np.asarray(q.probs if isinstance(q, LabelDistribution) else q, dtype=np.float64)
    c = _contributions(y, f, rho, pair)
    support = c > 0
    if np.any(q[support] <= 0):
        raise ValueError("q must be positive wherever rho * varphi(-f) is")
    total = c.sum()
    # sum c^2/q - S^2 rewritten as a sum of nonnegative terms, so the
    # optimum evaluates to ~0 instead of a difference of two large numbers
    qs = q[support]
    spread = np.sum(qs * (c[support] / qs - total) ** 2)
    off_support = np.sum(q[~support])
    return float((spread + total ** 2 * off_support) / m)


def optimal_q(y: int, f, rho, pair: MarginLossPair, m: int = 1) -> VarianceProfile:
    """``q*`` proportional to ``rho(y, y') varphi(-f[y'])``.

    When every term is zero the loss on negatives is already zero; a
    degenerate profile with an all-zero ``q_star`` is returned.
    """
    c = _contributions(y, f, rho, pair)
    total = c.sum()
    if total <= 0:
        return VarianceProfile(np.zeros_like(c), 0.0, degenerate=True)
    q_star = c / total
    return VarianceProfile(q_star, variance_under(q_star, y, f, rho, m, pair))
