"""Per-modality stores of target embeddings with EMA updates.

Each bank holds one unit-norm row per training instance. Rows are blended
with fresh encoder outputs (new = momentum * old + (1 - momentum) * feat)
and renormalized, so downstream dot products can always assume unit-sphere
targets. Negatives are drawn uniformly without replacement, never including
the base instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import l2_normalize, normalize_rows
from .errors import IndexOutOfRange, InvalidShape, TooManyNegatives, ZeroVector


@dataclass
class MemoryBank:
    entries: np.ndarray  # (N, d), rows unit-norm
    momentum: float = 0.5
    modality: str = ""

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class NegativeSet:
    base: int
    indices: np.ndarray  # (K,) distinct, none equal to base


def init_bank(n: int, dim: int, seed, momentum: float = 0.5, modality: str = "") -> MemoryBank:
    """Bank of independent random unit rows; deterministic given seed."""
    if n < 2 or dim < 2:
        raise InvalidShape(f"bank needs n >= 2 and dim >= 2, got ({n}, {dim})")
    rng = np.random.default_rng(seed)
    entries = normalize_rows(rng.standard_normal((n, dim)))
    return MemoryBank(entries=entries, momentum=momentum, modality=modality)


def _check_index(bank: MemoryBank, i: int) -> None:
    if not 0 <= i < bank.n:
        raise IndexOutOfRange(f"index {i} outside [0, {bank.n})")


def ema_update(bank: MemoryBank, i: int, feat: np.ndarray) -> np.ndarray:
    """Blend row i with a unit feature and renormalize; returns the new row."""
    _check_index(bank, i)
    blended = bank.momentum * bank.entries[i] + (1.0 - bank.momentum) * np.asarray(feat, dtype=np.float64)
    row = l2_normalize(blended)
    bank.entries[i] = row
    return row.copy()


def ema_update_batch(bank: MemoryBank, indices: np.ndarray, feats: np.ndarray) -> None:
    """Vectorized ema_update over distinct indices."""
    indices = np.asarray(indices)
    if indices.size == 0:
        return
    if indices.min() < 0 or indices.max() >= bank.n:
        raise IndexOutOfRange("batch index outside bank")
    blended = bank.momentum * bank.entries[indices] + (1.0 - bank.momentum) * feats
    try:
        bank.entries[indices] = normalize_rows(blended)
    except ZeroVector as exc:
        raise ZeroVector("EMA blend cancelled to zero for some batch row") from exc


def sample_negative_matrix(bank: MemoryBank, base_indices: np.ndarray, k: int,
                           rng: np.random.Generator) -> np.ndarray:
    """(B, K) matrix of negatives, one uniform K-subset of [0, N) \\ {base} per row.

    Each row assigns an i.i.d. uniform key to every candidate (the base gets
    +inf) and keeps the K smallest keys, which is exactly a uniform draw
    without replacement.
    """
    base_indices = np.asarray(base_indices)
    if not 1 <= k <= bank.n - 1:
        raise TooManyNegatives(f"asked for {k} negatives from a bank of {bank.n}")
    if base_indices.size and (base_indices.min() < 0 or base_indices.max() >= bank.n):
        raise IndexOutOfRange("base index outside bank")
    keys = rng.random((base_indices.size, bank.n))
    keys[np.arange(base_indices.size), base_indices] = np.inf
    return np.argpartition(keys, k - 1, axis=1)[:, :k]


def sample_negatives(bank: MemoryBank, i: int, k: int, rng: np.random.Generator) -> NegativeSet:
    """K distinct negatives for instance i, uniform without replacement."""
    _check_index(bank, i)
    indices = sample_negative_matrix(bank, np.array([i]), k, rng)[0]
    return NegativeSet(base=i, indices=indices)


def lookup(bank: MemoryBank, indices) -> np.ndarray:
    """Rows at the given indices, in order, as a copy."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= bank.n):
        raise IndexOutOfRange("lookup index outside bank")
    return bank.entries[indices].reshape(indices.size, bank.dim).copy()
