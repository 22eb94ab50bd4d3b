"""Retrieval, faulty-positive detection, and probe metrics over embeddings.

Retrieval follows the cross-split protocol: held-out queries against a
training gallery, a hit when any of the k nearest gallery items (cosine
similarity, ties broken by lower index) shares the query's class. Detection
quality is the rank-based AUC of correspondence scores against ground-truth
flags: the probability that a random clean instance outscores a random
faulty one, ties counting one half.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import (
    DegenerateLabels,
    InsufficientSamples,
    InvalidRange,
    ShapeMismatch,
)


@dataclass
class EvalReport:
    r_at_k: dict[int, float]
    faulty_auc: float
    per_class_r_at_1: dict[int, float] = field(default_factory=dict)
    histogram: list[tuple[float, float, int, int, int]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        out = {f"r_at_{k}": v for k, v in sorted(self.r_at_k.items())}
        out["faulty_auc"] = self.faulty_auc
        out["per_class_r_at_1"] = {str(c): v for c, v in sorted(self.per_class_r_at_1.items())}
        return out


def _unit_rows(feats: np.ndarray) -> np.ndarray:
    feats = np.asarray(feats, dtype=np.float64)
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.maximum(norms, 1e-12)


def _top_k_hits(query_feats, query_labels, gallery_feats, gallery_labels, k: int) -> np.ndarray:
    query_feats = np.asarray(query_feats)
    gallery_feats = np.asarray(gallery_feats)
    if query_feats.ndim != 2 or gallery_feats.ndim != 2 \
            or query_feats.shape[1] != gallery_feats.shape[1]:
        raise ShapeMismatch("query and gallery features must share the embedding dim")
    if k < 1:
        raise ShapeMismatch(f"k must be at least 1, got {k}")
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    sims = _unit_rows(query_feats) @ _unit_rows(gallery_feats).T
    # stable sort on -sims: equal similarities keep ascending gallery index
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return np.any(gallery_labels[order] == query_labels[:, None], axis=1)


def retrieval_r_at_k(query_feats, query_labels, gallery_feats, gallery_labels, k: int) -> float:
    """Fraction of queries with a same-class item among the k nearest."""
    hits = _top_k_hits(query_feats, query_labels, gallery_feats, gallery_labels, k)
    return float(hits.mean())


def per_class_r_at_1(query_feats, query_labels, gallery_feats, gallery_labels) -> dict[int, float]:
    hits = _top_k_hits(query_feats, query_labels, gallery_feats, gallery_labels, 1)
    labels = np.asarray(query_labels)
    return {int(c): float(hits[labels == c].mean()) for c in np.unique(labels)}


def faulty_detection_auc(scores, flags) -> float:
    """P(random clean score > random faulty score), ties counted 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    if scores.shape != flags.shape:
        raise ShapeMismatch("scores and flags must have identical length")
    n_faulty = int(flags.sum())
    n_clean = flags.size - n_faulty
    if n_faulty == 0 or n_clean == 0:
        raise DegenerateLabels("need at least one clean and one faulty instance")
    ranks = stats.rankdata(scores)  # average ranks on ties
    clean_rank_sum = float(ranks[~flags].sum())
    return (clean_rank_sum - n_clean * (n_clean + 1) / 2.0) / (n_clean * n_faulty)


def score_histogram(scores, num_bins: int, value_range: tuple[float, float]) -> np.ndarray:
    """Bin counts partitioning [lo, hi); the last bin also includes hi."""
    lo, hi = value_range
    if num_bins < 1 or not lo < hi:
        raise InvalidRange(f"bad histogram spec: {num_bins} bins over [{lo}, {hi})")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size and (scores.min() < lo or scores.max() > hi):
        raise InvalidRange("scores fall outside the histogram range")
    counts, _ = np.histogram(scores, bins=num_bins, range=(lo, hi))
    return counts


def few_shot_probe(train_feats, train_labels, n_per_class: int,
                   test_feats, test_labels, trials: int, seed) -> float:
    """Mean nearest-class-mean (cosine) accuracy over seeded shot draws."""
    train_feats = _unit_rows(train_feats)
    test_feats = _unit_rows(test_feats)
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    classes = np.unique(train_labels)
    if n_per_class < 1:
        raise InsufficientSamples("n_per_class must be at least 1")
    per_class_idx = [np.flatnonzero(train_labels == c) for c in classes]
    smallest = min(idx.size for idx in per_class_idx)
    if smallest < n_per_class:
        raise InsufficientSamples(
            f"smallest class has {smallest} samples, need {n_per_class}")
    rng = np.random.default_rng(seed)
    accs = []
    for _ in range(trials):
        means = np.stack([
            train_feats[rng.choice(idx, size=n_per_class, replace=False)].mean(axis=0)
            for idx in per_class_idx
        ])
        means = _unit_rows(means)
        pred = classes[np.argmax(test_feats @ means.T, axis=1)]
        accs.append(float(np.mean(pred == test_labels)))
    return float(np.mean(accs))
