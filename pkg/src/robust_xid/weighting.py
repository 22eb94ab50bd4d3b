"""Faulty-positive sample weights from cross-modal correspondence scores.

The correspondence score of instance i is the dot product between its two
bank rows. Weights follow the cumulative distribution of a transformed
normal fitted to those scores,

    w_i = t(CDF(score_i; mu + delta * sigma, kappa * sigma^2)),

with t(x) = x * (1 - w_min) + w_min the soft truncation that keeps every
weight at least w_min. delta shifts the midpoint in units of sigma, kappa
flattens or sharpens the transition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import gaussian_cdf, gaussian_icdf, sample_stats
from .errors import DegenerateScores, InvalidVariance, OutOfRange, ShapeMismatch
from .memory_bank import MemoryBank

DEGENERATE_STD = 1e-8


@dataclass(frozen=True)
class WeightParams:
    delta: float = -1.0
    kappa: float = 0.5
    w_min: float = 0.25

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise OutOfRange(f"kappa must be positive, got {self.kappa}")
        if not (0.0 <= self.w_min < 1.0):
            raise OutOfRange(f"w_min must lie in [0, 1), got {self.w_min}")


@dataclass
class WeightState:
    weights: np.ndarray      # (N,), each in [w_min, 1]
    scores: np.ndarray       # (N,) correspondence scores the weights came from
    score_mean: float
    score_std: float
    params: WeightParams


def truncate(x, w_min: float):
    """Affine map of [0, 1] onto [w_min, 1]."""
    if not (0.0 <= w_min < 1.0):
        raise OutOfRange(f"w_min must lie in [0, 1), got {w_min}")
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise OutOfRange("truncate expects probabilities in [0, 1]")
    out = arr * (1.0 - w_min) + w_min
    return float(out) if np.ndim(x) == 0 else out


def sample_weight(score, mean: float, std: float, params: WeightParams):
    """Weight for one score (or an array of them) given score statistics."""
    if not (np.isfinite(std) and std > 0):
        raise InvalidVariance(f"score std must be positive, got {std}")
    cdf = gaussian_cdf(score, mean + params.delta * std, params.kappa * std * std)
    return truncate(cdf, params.w_min)


def compute_weight_state(bank_v: MemoryBank, bank_a: MemoryBank, params: WeightParams) -> WeightState:
    """Per-instance weights from the rowwise dot of the two banks."""
    if bank_v.entries.shape != bank_a.entries.shape:
        raise ShapeMismatch(
            f"banks disagree in shape: {bank_v.entries.shape} vs {bank_a.entries.shape}")
    scores = np.einsum("nd,nd->n", bank_v.entries, bank_a.entries)
    mean, var = sample_stats(scores)
    std = float(np.sqrt(var))
    if std < DEGENERATE_STD:
        raise DegenerateScores(f"score std {std:.3e} below {DEGENERATE_STD}")
    weights = sample_weight(scores, mean, std, params)
    return WeightState(weights=weights, scores=scores, score_mean=mean, score_std=std, params=params)


def delta_for_noise_fraction(n: float) -> float:
    """Midpoint offset so a fraction n of normal scores falls below mu + delta*sigma."""
    if not (0.0 < n < 1.0):
        raise OutOfRange(f"noise fraction must lie in (0, 1), got {n}")
    return gaussian_icdf(n)


def oracle_weights(faulty_flags: np.ndarray) -> np.ndarray:
    """0 for flagged (altered) instances, 1 for the rest."""
    flags = np.asarray(faulty_flags, dtype=bool)
    return np.where(flags, 0.0, 1.0)
