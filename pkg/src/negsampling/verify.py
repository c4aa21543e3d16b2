"""Self-checks behind the ``verify`` subcommand.

Each suite draws random instances from a seeded generator, compares a
closed form against an oracle (exhaustive enumeration, Monte Carlo or
finite differences) and yields one :class:`CheckRow` per comparison.

Monte Carlo uses multinomial label counts in place of explicit negative
lists.  Every weighting depends on the drawn label only, so the sampled
loss is a function of the counts and the two representations have the
same distribution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterator

import numpy as np

from .implicit import convergence_quantities, eta_of, implicit_decoupled, implicit_softmax_bound
from .label_stats import LabelDistribution
from .losses import grad, loss_value, margin_ce, margin_pair
from .variance_opt import optimal_q, variance_under
from .weighting import MarginMatrix, WeightingScheme, weight

SUITES = ("lemma1", "lemma2", "theorem1", "prop1", "variance_opt", "gradients")
COLUMNS = ("check_name", "instance_id", "statistic", "closed_form", "estimate", "stderr", "pass")


@dataclass(frozen=True)
class CheckRow:
    check_name: str
    instance_id: int
    statistic: str
    closed_form: float
    estimate: float
    stderr: float
    passed: bool

    def as_record(self) -> dict:
        d = asdict(self)
        for key in ("closed_form", "estimate", "stderr"):
            d[key] = float(d[key])
        d["instance_id"] = int(d["instance_id"])
        d["pass"] = bool(d.pop("passed"))
        return d


# --------------------------------------------------------------------------
# random instances


def _excluded_q(rng, L: int, y: int, floor: float = 1e-3) -> np.ndarray:
    q = rng.dirichlet(np.ones(L)) + floor
    q[y] = 0.0
    return q / q.sum()


def _random_scheme(rng, L: int, kind: str) -> WeightingScheme:
    if kind == "tail":
        return WeightingScheme("tail", pi=LabelDistribution.from_weights(rng.exponential(size=L) + 0.05))
    if kind == "target_margin":
        return WeightingScheme("target_margin", rho=MarginMatrix.from_array(rng.exponential(size=(L, L))))
    return WeightingScheme(kind)


def _per_label_weights(y, q, scheme, m) -> np.ndarray:
    # weight for every label on the support of q; the drawn tuple only indexes into it
    w = np.zeros(q.size)
    support = np.flatnonzero(q > 0)
    w[support] = weight(scheme, y, support, q, m)
    return w


def mc_sampled_softmax(y, f, q, w, m, trials, rng, chunk: int = 25000) -> np.ndarray:
    """Sampled softmax losses of ``trials`` independent draws of ``m`` negatives."""
    t = np.where(w > 0, w * np.exp(f - f[y]), 0.0)
    out = np.empty(trials)
    for start in range(0, trials, chunk):
        n = min(chunk, trials - start)
        counts = rng.multinomial(m, q, size=n)
        out[start:start + n] = np.log1p(counts @ t)
    return out


# --------------------------------------------------------------------------
# suites


def check_lemma1(rng, instances: int = 200) -> Iterator[CheckRow]:
    """Closed-form decoupled mean and variance against full enumeration."""
    kinds = ("constant", "importance", "tail", "target_margin")
    pairs = ("hinge", "softplus")
    for i in range(instances):
        L = int(rng.integers(2, 6))
        m = int(rng.integers(1, 4))
        y = int(rng.integers(L))
        f = rng.normal(scale=1.5, size=L)
        q = _excluded_q(rng, L, y)
        scheme = _random_scheme(rng, L, kinds[i % len(kinds)])
        pair = margin_pair(pairs[(i // len(kinds)) % len(pairs)])
        rep = implicit_decoupled(y, f, q, scheme, m, pair)
        w = _per_label_weights(y, q, scheme, m)
        neg = pair.varphi(-f)
        pos = float(pair.phi(f[y]))
        support = [j for j in range(L) if q[j] > 0]
        mean = 0.0
        values = []
        for tup in itertools.product(support, repeat=m):
            p = math.prod(q[j] for j in tup)
            v = pos + sum(w[j] * neg[j] for j in tup)
            values.append((p, v))
            mean += p * v
        var = sum(p * (v - mean) ** 2 for p, v in values)
        yield CheckRow("lemma1_mean", i, "abs_error", rep.expected_or_bound, mean, 0.0,
                       abs(rep.expected_or_bound - mean) <= 1e-10)
        yield CheckRow("lemma1_variance", i, "abs_error", rep.variance, var, 0.0, abs(rep.variance - var) <= 1e-10)


def check_lemma2(rng, instances: int = 100, trials: int = 100_000) -> Iterator[CheckRow]:
    """Monte-Carlo mean of the sampled softmax loss against the Jensen bound.

    Every fourth instance uses a model-based proposal with importance
    weights, where the bound is attained.  The sampled loss is then
    constant and its standard error is rounding noise, so both checks add
    an absolute floor of 1e-12.
    """
    kinds = ("constant", "tail", "target_margin")
    for i in range(instances):
        L = int(rng.integers(2, 33))
        m = int(rng.integers(1, 17))
        y = int(rng.integers(L))
        f = rng.normal(size=L)
        if i % 4 == 3:
            q = np.exp(f - f.max())
            q[y] = 0.0
            q /= q.sum()
            scheme = WeightingScheme("importance")
        else:
            q = _excluded_q(rng, L, y)
            scheme = _random_scheme(rng, L, kinds[i % len(kinds)])
        rep = implicit_softmax_bound(y, f, q, scheme, m)
        losses = mc_sampled_softmax(y, f, q, _per_label_weights(y, q, scheme, m), m, trials, rng)
        mean = float(losses.mean())
        se = float(losses.std(ddof=1) / math.sqrt(trials))
        if scheme.kind == "importance":
            ok = abs(mean - rep.expected_or_bound) <= 3 * se + 1e-10
            yield CheckRow("lemma2_equality", i, "mc_mean_minus_bound", rep.expected_or_bound, mean, se, ok)
        else:
            # with L = 2 only one negative exists and se is pure rounding
            ok = mean <= rep.expected_or_bound + 3 * se + 1e-12
            yield CheckRow("lemma2_bound", i, "mc_mean_minus_bound", rep.expected_or_bound, mean, se, ok)


def rate_statistic(y, f, q, eta, m, trials, rng) -> tuple[float, float]:
    """``m * MSE * mu^2 / sigma^2`` and its Monte-Carlo standard error."""
    w = eta / m
    rho = eta * q
    bound = margin_ce(y, f, rho)
    cq = convergence_quantities(y, f, q, eta)
    sq = (mc_sampled_softmax(y, f, q, w, m, trials, rng) - bound) ** 2
    scale = m * cq.mu ** 2 / cq.sigma_sq
    return float(sq.mean() * scale), float(sq.std(ddof=1) / math.sqrt(trials) * scale)


def check_theorem1(rng, instances: int = 20, trials: int = 100_000,
                   ms: tuple[int, ...] = (512, 1024, 2048)) -> Iterator[CheckRow]:
    """The squared error of the sampled loss around the bound decays as ``sigma^2 / (m mu^2)``."""
    kinds = ("constant", "importance", "tail")
    for i in range(instances):
        L = int(rng.integers(3, 33))
        y = int(rng.integers(L))
        f = rng.normal(size=L)
        q = _excluded_q(rng, L, y, floor=0.01)
        eta = eta_of(y, q, _random_scheme(rng, L, kinds[i % len(kinds)]))
        stats = {}
        for m in ms:
            s, se = rate_statistic(y, f, q, eta, m, trials, rng)
            stats[m] = s
            if m == max(ms):
                yield CheckRow("theorem1_rate", i, f"m*mse*mu^2/sigma^2@m={m}", 1.0, s, se, 0.75 <= s <= 1.25)
        lo, hi = min(stats.values()), max(stats.values())
        yield CheckRow("theorem1_flat", i, "max/min over m", 1.0, hi / lo, 0.0, hi / lo < 1.25)


def check_prop1(rng, instances: int = 1000) -> Iterator[CheckRow]:
    """Margin-targeting weights make the bound equal the requested margin loss."""
    for i in range(instances):
        L = int(rng.integers(2, 41))
        m = int(rng.integers(1, 257))
        y = int(rng.integers(L))
        R = MarginMatrix.from_array(rng.exponential(size=(L, L)) * 2)
        f = rng.normal(scale=2, size=L)
        q = _excluded_q(rng, L, y, floor=1e-4)
        rep = implicit_softmax_bound(y, f, q, WeightingScheme("target_margin", rho=R), m)
        target = margin_ce(y, f, R)
        yield CheckRow("prop1", i, "abs_error", target, rep.expected_or_bound, 0.0,
                       abs(target - rep.expected_or_bound) <= 1e-12)


def _simplex_grid(n_free: int, steps: int) -> Iterator[np.ndarray]:
    for cut in itertools.combinations(range(steps + n_free), n_free):
        # stars and bars: gaps between bar positions
        bounds = (-1,) + cut + (steps + n_free,)
        parts = np.diff(bounds) - 1
        yield parts / steps


def check_variance_opt(rng, grid_instances: int = 5, random_q: int = 10_000) -> Iterator[CheckRow]:
    """``q*`` against a simplex grid at L=4 and random proposals at L=32."""
    pair = margin_pair("softplus")
    for i in range(grid_instances):
        L = 4
        y = int(rng.integers(L))
        f = rng.normal(scale=1.5, size=L)
        rho = rng.exponential(size=L)
        opt = optimal_q(y, f, rho, pair).achieved_variance
        negs = np.delete(np.arange(L), y)
        worst = math.inf
        for point in _simplex_grid(L - 2, 20):
            if np.any(point == 0):
                continue
            q = np.zeros(L)
            q[negs] = point
            worst = min(worst, variance_under(q, y, f, rho, 1, pair))
        yield CheckRow("variance_opt_grid", i, "min_grid_minus_opt", opt, worst, 0.0, opt <= worst)
    L = 32
    y = int(rng.integers(L))
    f = rng.normal(scale=1.5, size=L)
    rho = rng.exponential(size=L)
    opt = optimal_q(y, f, rho, pair).achieved_variance
    Q = rng.dirichlet(np.full(L, 0.5), size=random_q) + 1e-12
    c = rho * pair.varphi(-f)
    c[y] = 0.0
    S = c.sum()
    support = c > 0
    variances = (Q[:, support] * (c[support] / Q[:, support] - S) ** 2).sum(axis=1) + S ** 2 * Q[:, ~support].sum(axis=1)
    yield CheckRow("variance_opt_random", grid_instances, "min_random_minus_opt", opt, float(variances.min()), 0.0,
                   bool(np.all(opt <= variances)))
    prof = optimal_q(y, f, rho, pair, m=3)
    yield CheckRow("variance_opt_substitution", grid_instances + 1, "abs_error", 0.0, prof.achieved_variance, 0.0,
                   abs(prof.achieved_variance) <= 1e-12)


def _gradient_cases(rng, L: int):
    y = int(rng.integers(L))
    f = rng.normal(scale=2, size=L)
    neg = rng.integers(0, L - 1, size=5)
    neg[neg >= y] += 1
    w = rng.exponential(size=5)
    cases = {
        "softmax_ce": ((), {}),
        "margin_ce": ((rng.exponential(size=L) * 2,), {}),
        "sampled_softmax": ((neg, w), {}),
    }
    for p in ("hinge", "softplus", "squared_hinge"):
        cases[f"decoupled:{p}"] = ((margin_pair(p),), {})
        cases[f"sampled_decoupled:{p}"] = ((neg, w), {"pair": margin_pair(p)})
    return y, f, cases


def check_gradients(rng, points: int = 100, h: float = 1e-6) -> Iterator[CheckRow]:
    """Analytic gradients against central differences, away from margin kinks."""
    counts: dict[str, int] = {}
    worst: dict[str, float] = {}
    while not counts or min(counts.values()) < points:
        y, f, cases = _gradient_cases(rng, 6)
        if np.any(np.abs(np.abs(f) - 1.0) < 1e-3):
            continue
        for name, (args, kw) in cases.items():
            if counts.get(name, 0) >= points:
                continue
            family = name.partition(":")[0]
            g = grad(family, y, f, *args, **kw)
            num = np.empty_like(f)
            for j in range(f.size):
                e = np.zeros_like(f)
                e[j] = h
                num[j] = (loss_value(family, y, f + e, *args, **kw) - loss_value(family, y, f - e, *args, **kw)) / (2 * h)
            err = float(np.max(np.abs(g - num)) / max(np.max(np.abs(num)), 1e-8))
            counts[name] = counts.get(name, 0) + 1
            worst[name] = max(worst.get(name, 0.0), err)
    for i, name in enumerate(sorted(worst)):
        yield CheckRow(f"gradient_{name}", i, "max_rel_error", 0.0, worst[name], 0.0, worst[name] <= 1e-5)


_RUNNERS: dict[str, Callable[..., Iterator[CheckRow]]] = {
    "lemma1": lambda rng, trials: check_lemma1(rng),
    "lemma2": lambda rng, trials: check_lemma2(rng, trials=trials),
    "theorem1": lambda rng, trials: check_theorem1(rng, trials=trials),
    "prop1": lambda rng, trials: check_prop1(rng),
    "variance_opt": lambda rng, trials: check_variance_opt(rng),
    "gradients": lambda rng, trials: check_gradients(rng),
}


def run_suite(suite: str, *, trials: int = 100_000, seed: int = 0) -> list[CheckRow]:
    """Run one suite, or all of them for ``suite == "all"``.

    Each suite gets its own generator spawned from ``seed`` so that running
    ``all`` reproduces the rows of running the suites one by one.
    """
    names = SUITES if suite == "all" else (suite,)
    for name in names:
        if name not in _RUNNERS:
            raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES + ('all',)}")
    rows: list[CheckRow] = []
    for name in names:
        rng = np.random.default_rng(np.random.SeedSequence([seed, SUITES.index(name)]))
        rows.extend(_RUNNERS[name](rng, trials))
    return rows
