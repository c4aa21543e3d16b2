import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import enumerate_moments_centered, margin_softmax, mc_sampled_softmax
from negsampling.implicit import (
    CATALOG,
    catalog_implicit,
    convergence_quantities,
    eta_of,
    find_row,
    implicit_decoupled,
    implicit_softmax_bound,
)
from negsampling.label_stats import LabelDistribution
from negsampling.losses import decoupled_loss, margin_ce, margin_pair, softmax_ce
from negsampling.weighting import MarginMatrix, WeightingScheme


def _q_excl(rng, L, y, spread=1.0):
    q = rng.dirichlet(np.full(L, spread)) + 1e-3
    q[y] = 0.0
    return q / q.sum()


def _schemes(rng, L):
    pi = LabelDistribution.from_weights(rng.exponential(size=L) + 0.05)
    return [
        WeightingScheme("constant"),
        WeightingScheme("importance"),
        WeightingScheme("tail", pi=pi),
        WeightingScheme("target_margin", rho=MarginMatrix.from_array(rng.exponential(size=(L, L)))),
    ]


def test_importance_decoupled_is_exact(rng):
    pair = margin_pair("softplus")
    for _ in range(20):
        L = int(rng.integers(2, 20))
        y = int(rng.integers(L))
        f = rng.normal(size=L)
        rep = implicit_decoupled(y, f, _q_excl(rng, L, y), WeightingScheme("importance"), 5, pair)
        assert rep.is_exact
        assert rep.expected_or_bound == pytest.approx(decoupled_loss(y, f, pair), rel=1e-12)


def test_zero_terms_zero_variance():
    f = np.array([3.0, -4.0, -2.0])
    rep = implicit_decoupled(0, f, np.array([0, 0.5, 0.5]), WeightingScheme("constant"), 2, margin_pair("hinge"))
    assert rep.variance == 0.0


@pytest.mark.parametrize("pair_name", ["hinge", "softplus", "squared_hinge"])
def test_decoupled_matches_enumeration(pair_name, rng):
    pair = margin_pair(pair_name)
    for _ in range(15):
        L = int(rng.integers(2, 6))
        m = int(rng.integers(1, 4))
        y = int(rng.integers(L))
        f = rng.normal(scale=1.5, size=L)
        q = _q_excl(rng, L, y)
        for scheme in _schemes(rng, L):
            rep = implicit_decoupled(y, f, q, scheme, m, pair)
            rho = rep.rho_used
            w = np.where(q > 0, rho / (m * np.where(q > 0, q, 1)), 0.0)
            neg = np.array(pair.varphi(-f))

            def loss(tup):
                return float(pair.phi(f[y])) + sum(w[j] * neg[j] for j in tup)

            mean, var = enumerate_moments_centered(q, m, loss)
            assert rep.expected_or_bound == pytest.approx(mean, abs=1e-10)
            assert rep.variance == pytest.approx(var, abs=1e-10)


def test_rejects_positive_mass():
    q = np.array([0.2, 0.4, 0.4])
    with pytest.raises(ValueError):
        implicit_decoupled(0, np.zeros(3), q, WeightingScheme("constant"), 2, margin_pair("hinge"))
    with pytest.raises(ValueError):
        implicit_softmax_bound(0, np.zeros(3), q, WeightingScheme("constant"), 2)
    rep = implicit_softmax_bound(0, np.zeros(3), q, WeightingScheme("constant", zero_positive=True), 2)
    np.testing.assert_allclose(rep.rho_used, [0, 0.4, 0.4])


def test_importance_bound_is_softmax(rng):
    for _ in range(20):
        L = int(rng.integers(2, 30))
        y = int(rng.integers(L))
        f = rng.normal(size=L)
        rep = implicit_softmax_bound(y, f, _q_excl(rng, L, y), WeightingScheme("importance"), 3)
        assert not rep.is_exact
        assert rep.expected_or_bound == pytest.approx(softmax_ce(y, f), rel=1e-12)


def test_equalised_bound(rng):
    L, m, y = 8, 4, 2
    pi = rng.dirichlet(np.ones(L))
    q = pi.copy()
    q[y] = 0
    q /= q.sum()
    f = rng.normal(size=L)
    rep = implicit_softmax_bound(y, f, q, WeightingScheme("constant"), m)
    expected = margin_softmax(y, f, pi / (1 - pi[y]))
    assert rep.expected_or_bound == pytest.approx(expected, rel=1e-12)


def test_bound_holds_by_monte_carlo():
    rng = np.random.default_rng(3)
    for _ in range(6):
        L = int(rng.integers(3, 12))
        m = int(rng.integers(1, 6))
        y = int(rng.integers(L))
        f = rng.normal(size=L)
        q = _q_excl(rng, L, y)
        for scheme in _schemes(rng, L):
            rep = implicit_softmax_bound(y, f, q, scheme, m)
            w = rep.rho_used / (m * np.where(q > 0, q, 1))
            losses = mc_sampled_softmax(y, f, q, w, m, 20000, rng)
            se = losses.std(ddof=1) / np.sqrt(losses.size)
            assert losses.mean() <= rep.expected_or_bound + 3 * se


def test_model_based_importance_is_tight():
    rng = np.random.default_rng(4)
    for _ in range(5):
        L = int(rng.integers(3, 12))
        y = int(rng.integers(L))
        f = rng.normal(size=L)
        q = np.exp(f)
        q[y] = 0
        q /= q.sum()
        rep = implicit_softmax_bound(y, f, q, WeightingScheme("importance"), 3)
        losses = mc_sampled_softmax(y, f, q, 1.0 / (3 * np.where(q > 0, q, 1)), 3, 20000, rng)
        assert losses.mean() == pytest.approx(rep.expected_or_bound, abs=1e-10)


def test_convergence_quantities_examples(rng):
    L, y = 9, 4
    f = rng.normal(size=L)
    q = _q_excl(rng, L, y)
    cq = convergence_quantities(y, f, q, eta_of(y, q, WeightingScheme("importance")))
    assert cq.mu == pytest.approx(np.exp(f).sum(), rel=1e-12)
    point = np.zeros(L)
    point[2] = 1.0
    cq = convergence_quantities(y, f, point, np.ones(L) * (np.arange(L) != y))
    assert cq.sigma_sq == 0.0
    eta = rng.exponential(size=L)
    eta[y] = 0
    cq = convergence_quantities(y, f, q, eta)
    z = [eta[j] * np.exp(f[j]) for j in range(L)]
    mean = sum(q[j] * z[j] for j in range(L))
    var = sum(q[j] * (z[j] - mean) ** 2 for j in range(L))
    assert cq.mu == pytest.approx(np.exp(f[y]) + mean, rel=1e-12)
    assert cq.sigma_sq == pytest.approx(var, rel=1e-12)


def test_eta_is_m_free(rng):
    L, y = 7, 0
    q = _q_excl(rng, L, y)
    s = WeightingScheme("importance")
    np.testing.assert_allclose(eta_of(y, q, s, 3), eta_of(y, q, s, 300), rtol=1e-14)


# ------------------------------------------------------------------ catalog

def test_catalog_has_sixteen_rows():
    assert len(CATALOG) == 16
    assert {(r.family, r.sampler, r.weighting) for r in CATALOG}.__len__() == 16


@pytest.mark.parametrize("sampler,weighting,annotation", [
    ("within_batch", "constant", "tail"),
    ("within_batch", "relative", "head"),
    ("uniform", "importance", "unbiased"),
    ("within_batch", "importance", "unbiased"),
    ("uniform", "tail", "tail"),
])
def test_catalog_annotations(sampler, weighting, annotation):
    assert find_row("softmax", sampler, weighting).annotation == annotation


def test_catalog_reference_margins(rng):
    pi = rng.dirichlet(np.ones(10))
    y = 3
    tail = catalog_implicit("within_batch", "tail", pi, 8).rho(y)
    np.testing.assert_allclose(np.delete(tail, y), np.delete(pi / pi[y], y))
    rel = catalog_implicit("within_batch", "relative", pi, 8, convention="inclusive").rho(y)
    np.testing.assert_allclose(np.delete(rel, y), 8 * pi[y])
    imp = catalog_implicit("uniform", "importance", pi, 8).rho(y)
    np.testing.assert_allclose(np.delete(imp, y), 1.0)
    uc = catalog_implicit("uniform", "constant", pi, 8, convention="inclusive").rho(y)
    np.testing.assert_allclose(np.delete(uc, y), 1 / 10)


@pytest.mark.parametrize("convention", ["exclusive", "inclusive"])
@pytest.mark.parametrize("row", CATALOG, ids=lambda r: f"{r.family}-{r.sampler}-{r.weighting}")
def test_catalog_agrees_with_generic(row, convention, rng):
    pair = margin_pair("softplus")
    for _ in range(100):
        L = int(rng.integers(2, 12))
        m = int(rng.integers(1, 64))
        y = int(rng.integers(L))
        pi = rng.dirichlet(np.ones(L)) + 1e-3
        pi /= pi.sum()
        f = rng.normal(scale=2, size=L)
        entry = catalog_implicit(row.sampler, row.weighting, pi, m, family=row.family, convention=convention)
        q, base = entry.proposal(y)
        if row.family == "softmax":
            rep = implicit_softmax_bound(y, f, q, entry.scheme(), m, base=base)
            got = entry(y, f)
        else:
            rep = implicit_decoupled(y, f, q, entry.scheme(), m, pair, base=base)
            got = entry(y, f, pair)
        assert got == pytest.approx(rep.expected_or_bound, rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(entry.rho(y), rep.rho_used, rtol=1e-12, atol=1e-15)


def test_catalog_unknown_row():
    with pytest.raises(KeyError):
        catalog_implicit("model", "constant", np.ones(3) / 3, 2)
    with pytest.raises(ValueError):
        catalog_implicit("uniform", "constant", np.ones(3) / 3, 2, convention="mixed")


@given(st.integers(2, 40), st.integers(1, 256), st.integers(0, 2 ** 32 - 1))
def test_target_margin_bound_is_margin_ce(L, m, seed):
    rng = np.random.default_rng(seed)
    y = int(rng.integers(L))
    rho = MarginMatrix.from_array(rng.exponential(size=(L, L)) * 2)
    f = rng.normal(scale=3, size=L)
    rep = implicit_softmax_bound(y, f, _q_excl(rng, L, y, 0.3), WeightingScheme("target_margin", rho=rho), m)
    assert rep.expected_or_bound == pytest.approx(margin_ce(y, f, rho), rel=1e-12, abs=1e-12)
