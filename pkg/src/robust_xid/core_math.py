"""Scalar and vector numerical primitives shared by every other module.

All accumulation is in float64. The softmax subtracts the max logit before
exponentiating: at the peaky temperatures used for target softening (0.02)
raw exponentials overflow long before the distribution itself degenerates.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import (
    InvalidTemperature,
    InvalidVariance,
    OutOfRange,
    TooFewSamples,
    ZeroVector,
)

NORM_EPS = 1e-12


def l2_normalize(v: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Project a vector onto the unit sphere."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm <= eps:
        raise ZeroVector(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def normalize_rows(m: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Row-wise unit normalization of a 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= eps):
        raise ZeroVector("matrix contains a row with (near-)zero norm")
    return m / norms[:, None]


def tempered_softmax(logits: np.ndarray, tau: float, axis: int = -1) -> np.ndarray:
    """softmax(logits / tau), computed with max-subtraction for stability.

    The max is subtracted before dividing by tau so that even extreme
    logits stay finite on the way into exp.
    """
    if not np.isfinite(tau) or tau <= 0:
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    logits = np.asarray(logits, dtype=np.float64)
    shifted = (logits - np.max(logits, axis=axis, keepdims=True)) / tau
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def gaussian_cdf(x, mean: float = 0.0, var: float = 1.0):
    """CDF of N(mean, var) evaluated at x (scalar or array) via erf."""
    if not np.isfinite(var) or var <= 0:
        raise InvalidVariance(f"variance must be positive, got {var}")
    z = (np.asarray(x, dtype=np.float64) - mean) / np.sqrt(var)
    out = 0.5 * (1.0 + special.erf(z / np.sqrt(2.0)))
    return float(out) if np.ndim(x) == 0 else out


def gaussian_icdf(p: float) -> float:
    """Standard-normal quantile; inverse of gaussian_cdf(x, 0, 1)."""
    if not (0.0 < p < 1.0):
        raise OutOfRange(f"quantile argument must lie in (0, 1), got {p}")
    return float(special.ndtri(p))


def sample_stats(scores: np.ndarray) -> tuple[float, float]:
    """(mean, unbiased variance) of a 1-D sample with n >= 2."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 2:
        raise TooFewSamples(f"need at least 2 samples, got shape {scores.shape}")
    return float(np.mean(scores)), float(np.var(scores, ddof=1))
