"""Zero-shot retrieval metrics over a query/gallery similarity matrix.

Queries index rows, gallery items columns; `truth` maps each query to its
single relevant gallery column. Ranks break similarity ties by the lower
gallery index (a stable descending sort), so every metric is exactly
reproducible and has a brute-force oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "ranks_of_truth",
    "topk_accuracy",
    "mean_average_precision",
    "similarity_score",
    "EvalReport",
    "nway_evaluate",
]


def _check_matrix(similarity: np.ndarray, truth) -> tuple[np.ndarray, np.ndarray]:
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] < 1 or sim.shape[1] < 1:
        raise ValueError(f"expected a (queries, gallery) matrix, got shape {sim.shape}")
    t = np.asarray(truth, dtype=np.int64)
    if t.shape != (sim.shape[0],):
        raise ValueError(f"truth shape {t.shape} does not match {sim.shape[0]} queries")
    if np.any(t < 0) or np.any(t >= sim.shape[1]):
        raise ValueError("truth indices outside the gallery")
    return sim, t


def ranks_of_truth(similarity: np.ndarray, truth) -> np.ndarray:
    """1-based rank of each query's true gallery item.

    rank = 1 + |{j : s_j > s_true}| + |{j < true : s_j == s_true}|,
    i.e. ties are awarded to the lower gallery index.
    """
    sim, t = _check_matrix(similarity, truth)
    true_scores = sim[np.arange(sim.shape[0]), t]
    higher = (sim > true_scores[:, None]).sum(axis=1)
    cols = np.arange(sim.shape[1])
    tied_before = ((sim == true_scores[:, None]) & (cols[None, :] < t[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def topk_accuracy(similarity: np.ndarray, truth, k: int) -> float:
    """Fraction of queries whose truth ranks within the top k."""
    sim, _ = _check_matrix(similarity, truth)
    if not 1 <= k <= sim.shape[1]:
        raise ValueError(f"k must lie in [1, {sim.shape[1]}], got {k}")
    return float(np.mean(ranks_of_truth(similarity, truth) <= k))


def mean_average_precision(similarity: np.ndarray, truth) -> float:
    """Mean of 1/rank; with a single relevant item AP reduces to the
    reciprocal rank."""
    return float(np.mean(1.0 / ranks_of_truth(similarity, truth)))


def similarity_score(similarity: np.ndarray) -> float:
    """Mean diagonal similarity of a square pairing matrix."""
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"similarity score needs a square matrix, got {sim.shape}")
    return float(np.mean(np.diagonal(sim)))


@dataclass(frozen=True)
class EvalReport:
    gallery_size: int
    trials: int
    seed: int
    top1: float
    top5: float
    mean_ap: float
    similarity: float

    def __post_init__(self):
        for name in ("top1", "top5", "mean_ap"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


def nway_evaluate(
    similarity: np.ndarray, truth, n: int, trials: int, seed: int
) -> EvalReport:
    """Average retrieval metrics over seeded n-way galleries.

    Per trial, each query faces its true item plus n - 1 distractors
    sampled without replacement from the remaining gallery (PCG64 seeded
    by (seed, trial)). Top-5 uses k = min(5, n). The similarity score is
    the mean diagonal of the full matrix and does not depend on trials.
    """
    sim, t = _check_matrix(similarity, truth)
    n_gallery = sim.shape[1]
    if n > n_gallery:
        raise ConfigError(f"gallery size n={n} exceeds the test set size {n_gallery}")
    if n < 1:
        raise ConfigError(f"gallery size n must be >= 1, got {n}")
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    k5 = min(5, n)
    top1_sum = top5_sum = ap_sum = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((seed, trial)))
        hits1 = np.empty(sim.shape[0])
        hits5 = np.empty(sim.shape[0])
        aps = np.empty(sim.shape[0])
        for q in range(sim.shape[0]):
            others = rng.choice(n_gallery - 1, size=n - 1, replace=False)
            others = np.where(others >= t[q], others + 1, others)
            candidates = np.sort(np.concatenate(([t[q]], others)))
            scores = sim[q, candidates]
            true_pos = int(np.searchsorted(candidates, t[q]))
            true_score = scores[true_pos]
            rank = (
                1
                + int((scores > true_score).sum())
                + int(((scores == true_score) & (candidates < t[q])).sum())
            )
            hits1[q] = rank <= 1
            hits5[q] = rank <= k5
            aps[q] = 1.0 / rank
        top1_sum += hits1.mean()
        top5_sum += hits5.mean()
        ap_sum += aps.mean()
    return EvalReport(
        gallery_size=n,
        trials=trials,
        seed=seed,
        top1=top1_sum / trials,
        top5=top5_sum / trials,
        mean_ap=ap_sum / trials,
        similarity=similarity_score(sim) if sim.shape[0] == sim.shape[1] else float("nan"),
    )
