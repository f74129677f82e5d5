"""Evaluation metrics for instance segmentations against ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .consensus import foreground_nmi
from .errors import DimensionError


def ari(truth: np.ndarray, predicted: np.ndarray) -> float:
    """Adjusted Rand index over all pixels (background is a cluster)."""
    t = np.asarray(truth)
    p = np.asarray(predicted)
    if t.shape != p.shape:
        raise DimensionError("label maps must share a shape")
    return float(adjusted_rand_score(t.ravel(), p.ravel()))


def boundary_split_count(truth: np.ndarray, predicted: np.ndarray,
                         min_px: int = 3, min_frac: float = 0.05) -> int:
    """Number of excess fragments across truth instances.

    For each truth instance, predicted labels covering at least ``min_px``
    pixels and ``min_frac`` of the instance count as fragments; every
    fragment beyond the first is a split error.  Window-boundary artifacts
    show up as exactly this kind of fragmentation.
    """
    t = np.asarray(truth)
    p = np.asarray(predicted)
    splits = 0
    for k in np.unique(t):
        if k == 0:
            continue
        mask = t == k
        on = p[mask]
        on = on[on > 0]
        if on.size == 0:
            continue
        labels, counts = np.unique(on, return_counts=True)
        substantial = (counts >= min_px) & (counts >= min_frac * mask.sum())
        splits += max(0, int(substantial.sum()) - 1)
    return splits


@dataclass(frozen=True)
class SceneScore:
    true_k: int
    est_k: int
    ari: float
    nmi: float | None
    splits: int


@dataclass
class EvalReport:
    scenes: list[SceneScore] = field(default_factory=list)

    def add(self, truth: np.ndarray, predicted: np.ndarray, true_k: int,
            est_k: int | None = None) -> SceneScore:
        if est_k is None:
            labels = np.unique(predicted)
            est_k = int((labels > 0).sum())
        score = SceneScore(
            true_k=int(true_k),
            est_k=est_k,
            ari=ari(truth, predicted),
            nmi=foreground_nmi(predicted, truth),
            splits=boundary_split_count(truth, predicted),
        )
        self.scenes.append(score)
        return score

    @property
    def n(self) -> int:
        return len(self.scenes)

    def count_accuracy(self, tolerance: int = 1) -> float:
        """Fraction of scenes whose estimated count is within +-tolerance."""
        if not self.scenes:
            return 0.0
        hits = sum(abs(s.est_k - s.true_k) <= tolerance for s in self.scenes)
        return hits / self.n

    def mean_ari(self) -> float:
        return float(np.mean([s.ari for s in self.scenes])) if self.scenes else 0.0

    def total_splits(self) -> int:
        return sum(s.splits for s in self.scenes)

    def summary(self) -> dict:
        aris = np.array([s.ari for s in self.scenes], dtype=float)
        acc = self.count_accuracy()
        sem = float(aris.std(ddof=1) / math.sqrt(self.n)) if self.n > 1 else 0.0
        acc_se = math.sqrt(max(acc * (1 - acc), 1e-12) / self.n) if self.n else 0.0
        return {
            "n_scenes": self.n,
            "count_accuracy_pm1": acc,
            "count_accuracy_ci95": [max(0.0, acc - 1.96 * acc_se),
                                    min(1.0, acc + 1.96 * acc_se)],
            "mean_ari": self.mean_ari(),
            "mean_ari_ci95": [self.mean_ari() - 1.96 * sem, self.mean_ari() + 1.96 * sem],
            "total_boundary_splits": self.total_splits(),
        }

    def to_records(self) -> list[dict]:
        return [
            {"true_k": s.true_k, "est_k": s.est_k, "ari": s.ari,
             "nmi": s.nmi, "splits": s.splits}
            for s in self.scenes
        ]
