"""Softening-score estimation and target mixing for the soft contrastive loss.

A candidate set for instance i is {i} union K sampled negatives, with the
bank rows of both modalities gathered at those indices (self first by
convention). Four self-supervised strategies estimate a distribution S over
the negatives saying which of them look similar to i:

  bootstrap  S_v from dot(vbar_i, abar_j)   (the model's own cross posterior)
  swapped    S_v from dot(abar_i, vbar_j)   (the opposite modality's posterior)
  neighbor   S_v from dot(vbar_i, vbar_j)   (within-modal similarity)
  ccp        swapped plus correspondence terms dot(vbar_j, abar_j)/tau_t,
             so mass avoids negatives that are poor correspondences themselves

plus a label oracle (uniform over same-class negatives). Scores are mixed
with the one-hot identity target as T = (1-lambda) * onehot + lambda * S.

By default S is normalized over the negatives only: the self term
dot(vbar_i, vbar_i) = 1 would otherwise dominate neighbor prediction at
peaky temperatures, and the self mass is already carried by the (1-lambda)
term. Set include_self=True to restore the inclusive normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import tempered_softmax
from .errors import InvalidTarget, OutOfRange
from .memory_bank import MemoryBank, NegativeSet, lookup

STRATEGIES = ("bootstrap", "swapped", "neighbor", "ccp", "oracle")


@dataclass
class CandidateSet:
    base: int
    negatives: np.ndarray  # (K,) indices
    rows_v: np.ndarray     # (K+1, d) bank rows, base first
    rows_a: np.ndarray     # (K+1, d)


@dataclass
class TargetDistribution:
    probs: np.ndarray  # (K+1,), self first, sums to 1
    strategy: str = ""
    lam: float = 0.0


def build_candidate_set(bank_v: MemoryBank, bank_a: MemoryBank, negs: NegativeSet) -> CandidateSet:
    indices = np.concatenate([[negs.base], negs.indices])
    return CandidateSet(
        base=negs.base,
        negatives=np.asarray(negs.indices),
        rows_v=lookup(bank_v, indices),
        rows_a=lookup(bank_a, indices),
    )


def _cross_dots(rows_v: np.ndarray, rows_a: np.ndarray, include_self: bool):
    """The four (B, J) dot-product families every strategy draws on."""
    sl = slice(None) if include_self else slice(1, None)
    vbar_i = rows_v[:, 0]
    abar_i = rows_a[:, 0]
    v_to_a = np.einsum("bd,bjd->bj", vbar_i, rows_a[:, sl])  # dot(vbar_i, abar_j)
    a_to_v = np.einsum("bd,bjd->bj", abar_i, rows_v[:, sl])  # dot(abar_i, vbar_j)
    v_to_v = np.einsum("bd,bjd->bj", vbar_i, rows_v[:, sl])  # dot(vbar_i, vbar_j)
    a_to_a = np.einsum("bd,bjd->bj", abar_i, rows_a[:, sl])  # dot(abar_i, abar_j)
    return v_to_a, a_to_v, v_to_v, a_to_a


def softening_scores(strategy: str, rows_v: np.ndarray, rows_a: np.ndarray,
                     tau_s: float, tau_t: float = 0.07,
                     base_labels: np.ndarray | None = None,
                     negative_labels: np.ndarray | None = None,
                     include_self: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Batched (S_v, S_a) for rows of shape (B, K+1, d), self first.

    Returns (B, K) arrays, or (B, K+1) when include_self is set. The oracle
    strategy ignores temperatures and needs labels; rows with no same-class
    negative come back as all-zero (the empty flag mix_targets understands).
    """
    if strategy == "oracle":
        if base_labels is None or negative_labels is None:
            raise InvalidTarget("oracle softening requires labels")
        same = (np.asarray(negative_labels) == np.asarray(base_labels)[:, None]).astype(np.float64)
        counts = same.sum(axis=1)
        s = same / np.maximum(counts, 1.0)[:, None]
        return s, s.copy()

    v_to_a, a_to_v, v_to_v, a_to_a = _cross_dots(rows_v, rows_a, include_self)
    if strategy == "bootstrap":
        return tempered_softmax(v_to_a, tau_s, axis=1), tempered_softmax(a_to_v, tau_s, axis=1)
    if strategy == "swapped":
        return tempered_softmax(a_to_v, tau_s, axis=1), tempered_softmax(v_to_a, tau_s, axis=1)
    if strategy == "neighbor":
        return tempered_softmax(v_to_v, tau_s, axis=1), tempered_softmax(a_to_a, tau_s, axis=1)
    if strategy == "ccp":
        if not (np.isfinite(tau_t) and tau_t > 0):
            raise OutOfRange(f"tau_t must be positive, got {tau_t}")
        sl = slice(None) if include_self else slice(1, None)
        corr_i = np.einsum("bd,bd->b", rows_v[:, 0], rows_a[:, 0])[:, None]
        corr_j = np.einsum("bjd,bjd->bj", rows_v[:, sl], rows_a[:, sl])
        logits_v = corr_i / tau_t + a_to_v / tau_s + corr_j / tau_t
        logits_a = corr_i / tau_t + v_to_a / tau_s + corr_j / tau_t
        return tempered_softmax(logits_v, 1.0, axis=1), tempered_softmax(logits_a, 1.0, axis=1)
    raise InvalidTarget(f"unknown softening strategy {strategy!r}")


def _pair(cands: CandidateSet, strategy: str, tau_s: float, tau_t: float = 0.07,
          labels: np.ndarray | None = None, include_self: bool = False):
    base_labels = negative_labels = None
    if labels is not None:
        labels = np.asarray(labels)
        base_labels = labels[[cands.base]]
        negative_labels = labels[cands.negatives][None, :]
    s_v, s_a = softening_scores(strategy, cands.rows_v[None], cands.rows_a[None],
                                tau_s, tau_t, base_labels, negative_labels, include_self)
    return s_v[0], s_a[0]


def bootstrap_scores(cands: CandidateSet, tau_s: float, include_self: bool = False):
    """Softening from each modality's own cross-modal posterior."""
    return _pair(cands, "bootstrap", tau_s, include_self=include_self)


def swapped_scores(cands: CandidateSet, tau_s: float, include_self: bool = False):
    """Softening from the opposite modality's posterior."""
    return _pair(cands, "swapped", tau_s, include_self=include_self)


def neighbor_scores(cands: CandidateSet, tau_s: float, include_self: bool = False):
    """Softening from within-modal similarities."""
    return _pair(cands, "neighbor", tau_s, include_self=include_self)


def ccp_scores(cands: CandidateSet, tau_s: float, tau_t: float, include_self: bool = False):
    """Cycle-consistent softening; the base correspondence term is constant in j
    and cancels in the softmax, the negatives' own correspondence does not."""
    return _pair(cands, "ccp", tau_s, tau_t, include_self=include_self)


def oracle_scores(cands: CandidateSet, labels: np.ndarray):
    """Uniform over same-class negatives; all-zero when none share the class."""
    return _pair(cands, "oracle", tau_s=1.0, labels=labels)


def mix_target_matrix(scores: np.ndarray, lam: float, includes_self: bool = False) -> np.ndarray:
    """Batched mixing: (B, K) or (B, K+1) scores -> (B, K+1) targets.

    All-zero score rows (the oracle's empty flag) fall back to the one-hot
    target.
    """
    if not (0.0 <= lam <= 1.0):
        raise OutOfRange(f"lambda must lie in [0, 1], got {lam}")
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(scores < 0.0):
        raise InvalidTarget("softening scores must be non-negative")
    sums = scores.sum(axis=1)
    empty = sums == 0.0
    if np.any(~empty & (np.abs(sums - 1.0) > 1e-6)):
        raise InvalidTarget("softening scores must sum to 1 (or be all-zero)")

    b = scores.shape[0]
    if includes_self:
        t = lam * scores
        t[:, 0] += 1.0 - lam
    else:
        t = np.concatenate([np.full((b, 1), 1.0 - lam), lam * scores], axis=1)
    t[empty] = 0.0
    t[empty, 0] = 1.0
    return t


def mix_targets(scores: np.ndarray, lam: float, strategy: str = "",
                includes_self: bool = False) -> TargetDistribution:
    """One-instance target: (1 - lambda) on self plus lambda times the scores."""
    probs = mix_target_matrix(np.asarray(scores)[None], lam, includes_self)[0]
    return TargetDistribution(probs=probs, strategy=strategy, lam=lam)
