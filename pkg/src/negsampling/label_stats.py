"""Label marginals, long-tail profiles and head/torso/tail slicing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_SUM_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabelDistribution:
    """A probability vector over ``L`` labels, optionally backed by counts."""

    probs: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty 1-d vector")
        if not np.all(np.isfinite(probs)):
            raise ValueError("probs contain non-finite entries")
        if np.any(probs < 0):
            raise ValueError("probs must be nonnegative")
        if abs(probs.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probs sum to {probs.sum()!r}, expected 1")
        object.__setattr__(self, "probs", _frozen(probs))
        if self.counts is not None:
            counts = np.asarray(self.counts)
            if counts.shape != probs.shape:
                raise ValueError("counts and probs differ in length")
            if np.any(counts < 0):
                raise ValueError("counts must be nonnegative")
            if np.max(np.abs(probs - counts / counts.sum())) > _SUM_TOL:
                raise ValueError("probs disagree with counts")
            counts = np.array(counts, dtype=np.int64, copy=True)
            counts.setflags(write=False)
            object.__setattr__(self, "counts", counts)

    @classmethod
    def from_weights(cls, weights) -> "LabelDistribution":
        """Normalise a nonnegative weight vector."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("weights must have positive finite total mass")
        p = w / total
        # renormalising twice tightens the sum to within a few ulps
        return cls(p / p.sum())

    @classmethod
    def from_counts(cls, counts) -> "LabelDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        total = counts.sum()
        if total <= 0:
            raise ValueError("counts must have a positive total")
        return cls(counts / total, counts)

    @classmethod
    def uniform(cls, num_labels: int) -> "LabelDistribution":
        return cls(np.full(num_labels, 1.0 / num_labels))

    @property
    def num_labels(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, idx):
        return self.probs[idx]

    def to_csv(self, path: str | Path) -> None:
        """Write a single ``prob`` column, one label per row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["prob"])
            for p in self.probs:
                writer.writerow([repr(float(p))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "LabelDistribution":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["prob"]:
                raise ValueError(f"expected a single 'prob' column, got {reader.fieldnames}")
            probs = [float(row["prob"]) for row in reader]
        return cls(np.array(probs))


@dataclass(frozen=True)
class ImbalanceProfile:
    kind: str  # "exp" or "step"
    num_labels: int
    imbalance_ratio: float

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in ("exp", "step"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.num_labels < 2:
            raise ValueError("a profile needs at least 2 labels")
        if not self.imbalance_ratio >= 1:
            raise ValueError("imbalance_ratio must be >= 1")


def make_profile(profile: ImbalanceProfile) -> LabelDistribution:
    """Label marginal for a long-tail profile.

    ``exp`` decays geometrically from the first to the last label so that
    ``probs[0] / probs[-1] == imbalance_ratio``.  ``step`` gives the first
    ``ceil(L/2)`` labels ``imbalance_ratio`` times the mass of the rest.
    """
    L, r = profile.num_labels, float(profile.imbalance_ratio)
    idx = np.arange(L, dtype=np.float64)
    if profile.kind == "exp":
        # exp/log form avoids overflow of r**k for large r
        weights = np.exp(-np.log(r) * idx / (L - 1))
    else:
        weights = np.ones(L)
        weights[: math.ceil(L / 2)] = r
    return LabelDistribution.from_weights(weights)


@dataclass(frozen=True)
class LabelSlices:
    head: frozenset
    torso: frozenset
    tail: frozenset
    hi: int = 100
    lo: int = 20

    def as_dict(self) -> dict[str, frozenset]:
        return {"head": self.head, "torso": self.torso, "tail": self.tail}


def slice_labels(counts, hi: int = 100, lo: int = 20) -> LabelSlices:
    """Partition labels by training count: head ``>= hi``, tail ``< lo``."""
    if lo > hi:
        raise ValueError("lo threshold exceeds hi threshold")
    counts = np.asarray(counts)
    head = frozenset(np.flatnonzero(counts >= hi).tolist())
    tail = frozenset(np.flatnonzero(counts < lo).tolist())
    torso = frozenset(np.flatnonzero((counts >= lo) & (counts < hi)).tolist())
    return LabelSlices(head, torso, tail, hi, lo)
