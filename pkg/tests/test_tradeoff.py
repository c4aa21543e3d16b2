import numpy as np

from negsampling.tradeoff import SCHEMES, Ordering, TradeoffResult, benchmark_config, run_tradeoff


def _result(head, tail):
    return TradeoffResult((0, 1, 2), {k: np.array(v) for k, v in head.items()},
                          {k: np.array(v) for k, v in tail.items()})


def test_ordering_uses_paired_spread():
    # both schemes swing together across seeds; the paired gap is constant
    head = {"within_batch+relative": [0.1, 0.5, 0.9], "within_batch+constant": [0.11, 0.51, 0.91]}
    tail = {"within_batch+constant": [0.5, 0.6, 0.7], "within_batch+relative": [0.6, 0.7, 0.8],
            "within_batch+tail": [0.1, 0.2, 0.3], "uniform+constant": [0.9, 0.9, 0.9]}
    res = _result(head, tail)
    orders = res.orderings()
    assert all(c.holds for comps in orders.values() for c in comps)
    gap = orders["relative_best_head_within_batch"][0]
    assert np.isclose(gap.mean_gap, 0.01) and gap.sd_gap < 1e-12


def test_ordering_fails_when_noise_dominates():
    o = Ordering("x", "a", "b", "tail", mean_gap=0.01, sd_gap=0.02, k=2.0)
    assert not o.holds
    assert "need > 2 sd" in str(o)


def test_tail_weighting_picks_best_tail_scheme():
    tail = {"uniform+tail": [0.3, 0.3, 0.31], "within_batch+tail": [0.5, 0.5, 0.5],
            "within_batch+constant": [0.6, 0.62, 0.6], "within_batch+relative": [0.9, 0.9, 0.9]}
    head = {k: [0.1, 0.1, 0.1] for k in ("within_batch+relative", "within_batch+constant", "within_batch+tail")}
    comps = _result(head, tail).orderings()["tail_weighting_best_on_tail"]
    assert {c.better for c in comps} == {"uniform+tail"}
    assert {c.worse for c in comps} == {"within_batch+constant", "within_batch+relative"}


def test_benchmark_config():
    cfg = benchmark_config()
    assert (cfg.num_labels, cfg.profile, cfg.imbalance_ratio, cfg.m) == (100, "step", 100, 32)
    assert benchmark_config(dim=8).dim == 8
    assert len(SCHEMES) == 8


def test_tiny_run_produces_all_schemes():
    res = run_tradeoff(seeds=(0, 1), num_labels=12, imbalance_ratio=10, n_train=400, n_test_per_class=4,
                       dim=4, epochs=1, m=4, slice_hi=20, slice_lo=5)
    assert set(res.head) == {f"{s}+{w}" for s, w in SCHEMES}
    assert all(v.shape == (2,) for v in res.tail.values())
    assert len(res.table()) == 8
