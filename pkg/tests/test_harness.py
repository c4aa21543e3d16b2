import numpy as np
import pytest

from negsampling.harness import (
    STREAMS,
    DivergenceError,
    ExperimentConfig,
    HiddenLayerScorer,
    LinearScorer,
    evaluate,
    generate,
    make_dataset,
    metric_rows,
    metrics_from_scores,
    seed_streams,
    sweep,
    train,
    trajectory_divergence,
    with_overrides,
)
from negsampling.label_stats import ImbalanceProfile, LabelSlices, slice_labels

SMALL = dict(num_labels=10, imbalance_ratio=10, dim=8, n_train=600, n_test_per_class=10,
             noise_scale=0.3, epochs=3, batch_size=32, m=4, lr=0.5)


def small(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


# ---------------------------------------------------------------- data

def test_generate_is_deterministic():
    prof = ImbalanceProfile("exp", 12, 20)
    a = generate(prof, 5, 400, 0.4, seed=3)
    b = generate(prof, 5, 400, 0.4, seed=3)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    c = generate(prof, 5, 400, 0.4, seed=4)
    assert c.features.tobytes() != a.features.tobytes()


def test_class_means_on_unit_sphere():
    data = generate(ImbalanceProfile("step", 20, 5), 7, 200, 0.1, seed=0)
    np.testing.assert_allclose(np.linalg.norm(data.class_means, axis=1), 1.0, rtol=1e-12)


def test_noiseless_nearest_mean_is_perfect():
    data = generate(ImbalanceProfile("step", 30, 10), 6, 300, 0.0, seed=1)
    dist = ((data.X_test[:, None, :] - data.class_means[None]) ** 2).sum(-1)
    assert np.all(dist.argmin(axis=1) == data.y_test)


def test_balanced_test_set():
    data = generate(ImbalanceProfile("exp", 9, 50), 4, 500, 0.2, seed=2, n_test_per_class=7)
    assert np.all(np.bincount(data.y_test, minlength=9) == 7)


def test_step_counts_match_multinomial_expectation():
    L, r, N = 100, 100, 10_000
    data = generate(ImbalanceProfile("step", L, r), 4, N, 0.1, seed=5)
    counts = data.train_counts()
    p_head, p_tail = r / (50 * r + 50), 1 / (50 * r + 50)
    for cls_counts, p in ((counts[:50], p_head), (counts[50:], p_tail)):
        sigma = np.sqrt(N * p * (1 - p))
        assert np.all(np.abs(cls_counts - N * p) <= 4 * sigma + 1e-9)
    assert N * p_head == pytest.approx(198.02, abs=0.01)


@pytest.mark.parametrize("kw", [dict(d=1), dict(N=5), dict(n_test_per_class=0)])
def test_generate_rejects(kw):
    args = dict(profile=ImbalanceProfile("step", 10, 2), d=3, N=100, noise_scale=0.1, seed=0)
    args.update(kw)
    with pytest.raises(ValueError):
        generate(**args)


def test_seed_streams_are_independent_and_stable():
    a, b = seed_streams(1), seed_streams(1)
    assert tuple(a) == STREAMS
    draws = {k: a[k].random() for k in STREAMS}
    assert draws == {k: b[k].random() for k in STREAMS}
    assert len(set(draws.values())) == len(STREAMS)


# ---------------------------------------------------------------- scorers

@pytest.mark.parametrize("make", [
    lambda rng: LinearScorer(5, 4, rng),
    lambda rng: LinearScorer(5, 4, rng, cosine=True),
    lambda rng: HiddenLayerScorer(5, 4, 6, rng, "relu"),
    lambda rng: HiddenLayerScorer(5, 4, 6, rng, "linear"),
])
def test_scorer_backward_matches_finite_differences(make):
    rng = np.random.default_rng(0)
    scorer = make(rng)
    for v in scorer.params.values():
        v += rng.normal(scale=0.3, size=v.shape)
    X = rng.normal(size=(3, 5))
    G = rng.normal(size=(3, 4))
    F, cache = scorer.forward(X)
    grads = scorer.backward(cache, G)
    for name, p in scorer.params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + 1e-6
            up = np.sum(G * scorer.forward(X)[0])
            p[idx] = old - 1e-6
            down = np.sum(G * scorer.forward(X)[0])
            p[idx] = old
            num[idx] = (up - down) / 2e-6
        np.testing.assert_allclose(grads[name], num, rtol=1e-5, atol=1e-7)


def test_cosine_scores_bounded():
    rng = np.random.default_rng(0)
    scorer = LinearScorer(6, 5, rng, cosine=True)
    F, _ = scorer.forward(rng.normal(size=(20, 6)) * 50)
    assert np.all(np.abs(F) <= 1 + 1e-12)


# ---------------------------------------------------------------- training

def test_lr_zero_keeps_initial_weights():
    cfg = small(lr=0.0)
    data = make_dataset(cfg)
    res = train(cfg, data)
    assert all(np.all(v == 0) for v in res.scorer.params.values())
    hidden = small(lr=0.0, model="hidden", hidden_width=5)
    init = HiddenLayerScorer(hidden.dim, hidden.num_labels, 5, seed_streams(hidden.seed)["init"])
    res = train(hidden, data)
    for k, v in init.params.items():
        np.testing.assert_array_equal(res.scorer.params[k], v)


def test_separable_toy_reaches_zero_train_error():
    cfg = ExperimentConfig(profile="step", num_labels=3, imbalance_ratio=1, dim=4, n_train=60,
                           n_test_per_class=5, noise_scale=0.0, loss="softmax_ce", epochs=100,
                           batch_size=16, lr=0.1)
    data = make_dataset(cfg)
    res = train(cfg, data)
    F, _ = res.scorer.forward(data.X_train)
    assert np.all(F.argmax(axis=1) == data.y_train)


def test_training_is_deterministic():
    cfg = small(sampler="within_batch", weighting="relative")
    data = make_dataset(cfg)
    a, b = train(cfg, data), train(cfg, data)
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.scorer.params["W"], b.scorer.params["W"])
    assert evaluate(a.scorer, data).balanced_error == evaluate(b.scorer, data).balanced_error


def test_enumerated_importance_matches_full_softmax():
    cfg = small()
    gaps = trajectory_divergence(cfg, make_dataset(cfg), steps=10)
    assert len(gaps) == 10 and max(gaps) <= 1e-10


@pytest.mark.parametrize("kw", [
    dict(loss="softmax_ce"),
    dict(loss="decoupled:softplus"),
    dict(loss="margin_ce:logit_adjusted"),
    dict(loss="margin_ce:adaptive"),
    dict(loss="sampled_softmax", sampler="uniform", weighting="tail"),
    dict(loss="sampled_softmax", sampler="model", weighting="importance"),
    dict(loss="sampled_softmax", sampler="within_batch", weighting="constant", batch_mode="literal"),
    dict(loss="sampled_softmax", sampler="within_batch", weighting="relative", relative_base="proposal"),
    dict(loss="sampled_softmax", weighting="target_margin:logit_adjusted"),
    dict(loss="sampled_decoupled:hinge", sampler="uniform", weighting="importance"),
    dict(loss="sampled_decoupled:cosine_contrastive", sampler="within_batch", weighting="constant"),
    dict(loss="softmax_ce", model="hidden", hidden_width=12),
    dict(loss="softmax_ce", weight_decay=1e-3),
])
def test_every_objective_trains(kw):
    cfg = small(**kw)
    res = train(cfg, make_dataset(cfg))
    assert len(res.trace) == cfg.epochs and all(np.isfinite(res.trace))


def test_training_reduces_loss():
    cfg = small(epochs=15, loss="softmax_ce")
    res = train(cfg, make_dataset(cfg))
    assert res.trace[-1] < res.trace[0]


def test_divergence_detected():
    cfg = small(loss="sampled_decoupled:squared_hinge", lr=1e200)
    with pytest.warns(RuntimeWarning), pytest.raises(DivergenceError):
        train(cfg, make_dataset(cfg))


@pytest.mark.parametrize("kw", [
    dict(m=0), dict(model="cnn"), dict(sampler="custom"), dict(batch_mode="x"),
    dict(batch_mode="literal", batch_size=2, m=4), dict(lr=-1.0), dict(loss="nope"),
    dict(weighting="sometimes"), dict(relative_base="batch"),
    dict(loss="sampled_decoupled:cosine_contrastive", model="hidden"),
])
def test_invalid_configs(kw):
    with pytest.raises(ValueError):
        small(**kw)


def test_label_strings():
    assert small(sampler="uniform", weighting="tail").label == "uniform+tail"
    assert small(loss="margin_ce:logit_adjusted").label == "margin_ce:logit_adjusted"
    assert small(name="x").label == "x"


# ---------------------------------------------------------------- evaluation

def test_random_scorer_is_at_chance():
    rng = np.random.default_rng(0)
    L, per = 50, 40
    y = np.repeat(np.arange(L), per)
    F = rng.normal(size=(y.size, L))
    m = metrics_from_scores(F, y, L, slice_labels(np.full(L, 150)))
    p = 1 - 1 / L
    assert abs(m.balanced_error - p) <= 3 * np.sqrt(p * (1 - p) / y.size)


def test_perfect_scorer():
    L = 6
    y = np.repeat(np.arange(L), 3)
    F = np.eye(L)[y]
    m = metrics_from_scores(F, y, L, slice_labels(np.array([200, 200, 50, 50, 5, 5])), ks=(1, 5, L))
    assert m.balanced_error == 0.0 and m.recall[1] == 1.0 and m.recall[L] == 1.0
    for s in ("head", "torso", "tail"):
        assert m.slices[s]["balanced_error"] == 0.0


def test_recall_at_l_is_one():
    rng = np.random.default_rng(1)
    L = 7
    y = rng.integers(0, L, size=50)
    m = metrics_from_scores(rng.normal(size=(50, L)), y, L, slice_labels(np.full(L, 10)), ks=(1, L))
    assert m.recall[L] == 1.0


def test_balanced_error_is_mean_of_per_class():
    rng = np.random.default_rng(2)
    L = 5
    y = np.repeat(np.arange(L), 4)
    F = rng.normal(size=(y.size, L))
    m = metrics_from_scores(F, y, L, slice_labels(np.array([150, 150, 30, 5, 5])))
    assert m.balanced_error == pytest.approx(m.per_class_error.mean())
    assert np.all((m.per_class_error >= 0) & (m.per_class_error <= 1))
    assert m.slices["tail"]["balanced_error"] == pytest.approx(m.per_class_error[3:].mean())


def test_empty_slice_is_absent():
    y = np.array([0, 1])
    slices = LabelSlices(frozenset({0, 1}), frozenset(), frozenset())
    m = metrics_from_scores(np.eye(2), y, 2, slices)
    assert m.slices["torso"] is None and m.slices["tail"] is None
    rows = {r["slice"]: r for r in m.rows()}
    assert rows["tail"]["balanced_error"] is None


def test_ties_count_against_the_true_label():
    m = metrics_from_scores(np.zeros((2, 3)), np.array([0, 2]), 3, slice_labels(np.full(3, 150)), ks=(1,))
    assert m.recall[1] == 1.0  # no label scores strictly higher


# ---------------------------------------------------------------- sweeps

def test_sweep_orders_by_config_and_records_errors():
    base = small(epochs=1)
    configs = [with_overrides(base, weighting=w) for w in ("constant", "tail")]
    configs.append(with_overrides(base, loss="sampled_decoupled:squared_hinge", lr=1e200))
    with pytest.warns(RuntimeWarning):
        results = sweep(configs)
    assert [r["config_id"] for r in results] == [0, 1, 2]
    assert results[0]["error"] is None and results[2]["error"].startswith("DivergenceError")
    rows = metric_rows(results)
    assert rows[-1]["slice"] == "error"
    assert {r["weighting"] for r in rows} == {"constant", "tail"}


def test_sweep_matches_single_runs():
    base = small(epochs=1)
    configs = [with_overrides(base, sampler=s) for s in ("uniform", "within_batch")]
    results = sweep(configs)
    for cfg, res in zip(configs, results):
        solo = evaluate(train(cfg, make_dataset(cfg)).scorer, make_dataset(cfg),
                        slice_labels(make_dataset(cfg).train_counts()))
        assert res["metrics"].balanced_error == solo.balanced_error
