"""Head/tail trade-off of sampled schemes on the long-tail benchmark.

Every sampled (sampler, weighting) pair is trained on the same datasets,
one per seed, and evaluated on the head and tail slices.  Orderings are
judged on per-seed paired differences: scheme A beats scheme B when the
mean of ``err_B - err_A`` exceeds ``k`` standard deviations of those
differences (``k = 2`` by default).  Pairing removes the dataset-to-dataset
spread that all schemes share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harness import ExperimentConfig, sweep, with_overrides

SCHEMES = tuple((s, w) for s in ("uniform", "within_batch") for w in ("constant", "importance", "relative", "tail"))


def benchmark_config(**overrides) -> ExperimentConfig:
    """The long-tail benchmark: 100 labels, step profile with ratio 100, m = 32.

    Dimension, noise, step size and epochs are set so that head classes are
    learnable but not trivial and tail classes are not hopeless; at the
    plain defaults every scheme sits near chance on the tail.
    """
    base = dict(profile="step", num_labels=100, imbalance_ratio=100, n_train=20000, m=32,
                dim=16, noise_scale=0.3, lr=1.0, epochs=30, loss="sampled_softmax")
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass(frozen=True)
class Ordering:
    description: str
    better: str
    worse: str
    slice: str
    mean_gap: float
    sd_gap: float
    k: float

    @property
    def holds(self) -> bool:
        return self.mean_gap > self.k * self.sd_gap

    def __str__(self) -> str:
        return (f"{self.description}: {self.better} vs {self.worse} on {self.slice}, "
                f"gap {self.mean_gap:.4f} (sd {self.sd_gap:.4f}, need > {self.k:g} sd)")


@dataclass
class TradeoffResult:
    seeds: tuple[int, ...]
    head: dict[str, np.ndarray]
    tail: dict[str, np.ndarray]

    def table(self) -> list[dict]:
        return [{"scheme": k, "head_mean": float(self.head[k].mean()), "head_sd": float(self.head[k].std(ddof=1)),
                 "tail_mean": float(self.tail[k].mean()), "tail_sd": float(self.tail[k].std(ddof=1))}
                for k in self.head]

    def _gap(self, description, better, worse, slice_, k) -> Ordering:
        errs = self.head if slice_ == "head" else self.tail
        diff = errs[worse] - errs[better]
        sd = float(diff.std(ddof=1)) if diff.size > 1 else 0.0
        return Ordering(description, better, worse, slice_, float(diff.mean()), sd, k)

    def orderings(self, k: float = 2.0) -> dict[str, list[Ordering]]:
        """The three claimed orderings, each as a list of pairwise comparisons."""
        tails = [s for s in self.tail if s.endswith("+tail")]
        best_tail = min(tails, key=lambda s: self.tail[s].mean())
        within = [s for s in self.head if s.startswith("within_batch+")]
        return {
            "constant_beats_relative_on_tail": [
                self._gap("within-batch constant vs relative", "within_batch+constant",
                          "within_batch+relative", "tail", k)],
            "tail_weighting_best_on_tail": [
                self._gap("tail weighting lowest on tail", best_tail, other, "tail", k)
                for other in self.tail if other not in tails],
            "relative_best_head_within_batch": [
                self._gap("within-batch relative lowest on head", "within_batch+relative", other, "head", k)
                for other in within if other != "within_batch+relative"],
        }


def run_tradeoff(seeds=(0, 1, 2, 3, 4), n_jobs: int = 1, schemes=SCHEMES, **overrides) -> TradeoffResult:
    base = benchmark_config(**overrides)
    configs = [with_overrides(base, sampler=s, weighting=w, seed=seed) for seed in seeds for s, w in schemes]
    results = sweep(configs, n_jobs=n_jobs)
    head: dict[str, list[float]] = {}
    tail: dict[str, list[float]] = {}
    for cfg, res in zip(configs, results):
        if res["error"]:
            raise RuntimeError(f"{cfg.label} seed {cfg.seed} failed: {res['error']}")
        slices = res["metrics"].slices
        head.setdefault(cfg.label, []).append(slices["head"]["balanced_error"])
        tail.setdefault(cfg.label, []).append(slices["tail"]["balanced_error"])
    return TradeoffResult(tuple(seeds), {k: np.array(v) for k, v in head.items()},
                          {k: np.array(v) for k, v in tail.items()})
