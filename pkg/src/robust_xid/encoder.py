"""Small per-modality encoders with explicit backprop and Adam updates.

Each encoder is a one-hidden-layer MLP with a projection head whose output
is L2-normalized onto the unit sphere. Backprop routes the ambient loss
gradient through the normalization Jacobian (I - u u^T) / ||z|| before the
ordinary chain rule through the linear layers; any radial component of the
upstream gradient is annihilated there.

Everything is float64 and deterministic given the init seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange, ShapeMismatch, StaleCache, ZeroVector

PARAM_KEYS = ("w1", "b1", "w2", "b2")


@dataclass
class ForwardCache:
    x: np.ndarray      # (B, in)
    z1: np.ndarray     # (B, hidden) pre-activation
    h: np.ndarray      # (B, hidden) rectified
    norms: np.ndarray  # (B,) pre-normalization norms
    u: np.ndarray      # (B, d) unit outputs
    single: bool       # forward saw a 1-D input
    version: int


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """Standard bias-corrected adaptive-moment update, in place."""
    if set(grads) != set(params):
        raise ShapeMismatch(f"gradient keys {sorted(grads)} != parameter keys {sorted(params)}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {k} has shape {g.shape}, expected {p.shape}")
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        p -= lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + state.eps)


def cosine_lr(epoch: int, total_epochs: int, lr_start: float, lr_end: float) -> float:
    """Half-cosine decay from lr_start at epoch 0 to lr_end at total_epochs."""
    if total_epochs <= 0 or not 0 <= epoch <= total_epochs:
        raise OutOfRange(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * epoch / total_epochs))


class MlpEncoder:
    """input -> hidden (ReLU) -> projection -> unit sphere."""

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int, seed):
        rng = np.random.default_rng(seed)
        b1 = 1.0 / math.sqrt(input_dim)
        b2 = 1.0 / math.sqrt(hidden_dim)
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.params: dict[str, np.ndarray] = {
            "w1": rng.uniform(-b1, b1, size=(hidden_dim, input_dim)),
            "b1": rng.uniform(-b1, b1, size=hidden_dim),
            "w2": rng.uniform(-b2, b2, size=(output_dim, hidden_dim)),
            "b2": rng.uniform(-b2, b2, size=output_dim),
        }
        self.version = 0  # bumped on every parameter update; caches go stale

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
        """Unit embedding(s) plus the cache backward needs."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.input_dim:
            raise ShapeMismatch(f"input has shape {x.shape}, expected (..., {self.input_dim})")
        z1 = x2 @ self.params["w1"].T + self.params["b1"]
        h = np.maximum(z1, 0.0)
        z = h @ self.params["w2"].T + self.params["b2"]
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms <= 1e-12):
            raise ZeroVector("projection output collapsed to zero norm")
        u = z / norms[:, None]
        cache = ForwardCache(x=x2, z1=z1, h=h, norms=norms, u=u, single=single,
                             version=self.version)
        return (u[0] if single else u), cache

    def backward(self, cache: ForwardCache, d_emb: np.ndarray,
                 return_input_grad: bool = False):
        """Parameter gradients for an upstream gradient on the unit output."""
        if cache.version != self.version:
            raise StaleCache("cache predates a parameter update")
        du = np.asarray(d_emb, dtype=np.float64)
        if cache.single:
            du = du[None, :]
        if du.shape != cache.u.shape:
            raise ShapeMismatch(f"upstream gradient shape {d_emb.shape} does not match output")
        # through u = z / ||z||: dz = (du - u (u . du)) / ||z||
        radial = np.einsum("bd,bd->b", cache.u, du)
        dz = (du - cache.u * radial[:, None]) / cache.norms[:, None]
        grads = {
            "w2": dz.T @ cache.h,
            "b2": dz.sum(axis=0),
        }
        dh = dz @ self.params["w2"]
        dz1 = dh * (cache.z1 > 0.0)
        grads["w1"] = dz1.T @ cache.x
        grads["b1"] = dz1.sum(axis=0)
        if return_input_grad:
            dx = dz1 @ self.params["w1"]
            return grads, (dx[0] if cache.single else dx)
        return grads

    def apply_adam(self, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
        adam_step(self.params, grads, state, lr)
        self.version += 1
