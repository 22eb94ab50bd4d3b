"""Contrastive losses over memory-bank targets and their analytic gradients.

For live embeddings v, a and bank target rows (self first), the posterior
over candidates is a tempered softmax of dot products. The base loss is the
symmetric cross-modal cross-entropy

    L = -log P(abar_self | v) - log P(vbar_self | a),

its soft variant replaces the one-hot target with an arbitrary distribution
T over candidates, and the batch objective is the weight-normalized sum
sum_i w_i L_i / sum_i w_i.

Gradients are taken with respect to the live embeddings only (targets are
EMA-updated, not backpropagated) and live in the ambient space; the
normalization Jacobian is the encoder's business. For one direction,

    dL/dv = sum_j (P_j - T_j) * abar_j / tau,

which for one-hot T splits into the familiar attraction toward the own
target, weighted by (1 - P_self), minus repulsion from each negative
weighted by its posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import tempered_softmax
from .errors import AllZeroWeights, InvalidTarget, InvalidTemperature

_TARGET_TOL = 1e-6


@dataclass
class ContrastInstance:
    v: np.ndarray       # (d,) live video embedding, unit norm
    a: np.ndarray       # (d,) live audio embedding, unit norm
    rows_v: np.ndarray  # (K+1, d) video bank targets, self first
    rows_a: np.ndarray  # (K+1, d) audio bank targets, self first
    tau: float = 0.07


@dataclass
class LossGrad:
    loss: float
    dv: np.ndarray
    da: np.ndarray


def _log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _check_target(t: np.ndarray, size: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (size,):
        raise InvalidTarget(f"target has shape {t.shape}, expected ({size},)")
    if np.any(t < 0.0) or abs(float(t.sum()) - 1.0) > _TARGET_TOL:
        raise InvalidTarget("target must be a probability distribution")
    return t


def xid_posterior(s: np.ndarray, target_rows: np.ndarray, tau: float) -> np.ndarray:
    """Tempered softmax of dot(s, row_k) over the candidate rows."""
    return tempered_softmax(np.asarray(target_rows) @ np.asarray(s), tau)


def xid_loss(inst: ContrastInstance) -> float:
    """Symmetric one-hot contrastive loss; zero only at perfectly confident posteriors."""
    lp_v = _log_softmax(inst.rows_a @ inst.v / inst.tau)
    lp_a = _log_softmax(inst.rows_v @ inst.a / inst.tau)
    return float(-lp_v[0] - lp_a[0])


def xid_grad(inst: ContrastInstance) -> LossGrad:
    """Loss plus ambient-space gradients for the one-hot objective."""
    p_v = xid_posterior(inst.v, inst.rows_a, inst.tau)
    p_a = xid_posterior(inst.a, inst.rows_v, inst.tau)
    dv = (inst.rows_a.T @ p_v - inst.rows_a[0]) / inst.tau
    da = (inst.rows_v.T @ p_a - inst.rows_v[0]) / inst.tau
    return LossGrad(loss=xid_loss(inst), dv=dv, da=da)


def soft_xid_loss(inst: ContrastInstance, t_v: np.ndarray, t_a: np.ndarray) -> float:
    """Cross-entropy between soft targets and the two cross-modal posteriors."""
    k1 = inst.rows_a.shape[0]
    t_v = _check_target(t_v, k1)
    t_a = _check_target(t_a, k1)
    lp_v = _log_softmax(inst.rows_a @ inst.v / inst.tau)
    lp_a = _log_softmax(inst.rows_v @ inst.a / inst.tau)
    return float(-t_v @ lp_v - t_a @ lp_a)


def soft_xid_grad(inst: ContrastInstance, t_v: np.ndarray, t_a: np.ndarray) -> LossGrad:
    """Soft loss plus gradients; reduces to xid_grad when the targets are one-hot."""
    k1 = inst.rows_a.shape[0]
    t_v = _check_target(t_v, k1)
    t_a = _check_target(t_a, k1)
    p_v = xid_posterior(inst.v, inst.rows_a, inst.tau)
    p_a = xid_posterior(inst.a, inst.rows_v, inst.tau)
    dv = inst.rows_a.T @ (p_v - t_v) / inst.tau
    da = inst.rows_v.T @ (p_a - t_a) / inst.tau
    return LossGrad(loss=soft_xid_loss(inst, t_v, t_a), dv=dv, da=da)


def robust_batch_loss(instances, weights, targets) -> tuple[float, list[LossGrad]]:
    """Weight-normalized batch objective.

    targets is a sequence of (t_v, t_a) pairs aligned with instances. The
    returned per-instance gradients are already scaled by w_i / sum(w), so
    they sum to the gradient of the batch loss.
    """
    weights = np.asarray(weights, dtype=np.float64)
    total = float(weights.sum())
    if total <= 0.0:
        raise AllZeroWeights("sum of sample weights must be positive")
    loss = 0.0
    grads: list[LossGrad] = []
    for inst, w, (t_v, t_a) in zip(instances, weights, targets):
        g = soft_xid_grad(inst, t_v, t_a)
        scale = w / total
        loss += scale * g.loss
        grads.append(LossGrad(loss=g.loss, dv=scale * g.dv, da=scale * g.da))
    return loss, grads


def batch_soft_xid(v: np.ndarray, a: np.ndarray, rows_v: np.ndarray, rows_a: np.ndarray,
                   t_v: np.ndarray, t_a: np.ndarray, tau: float,
                   weights: np.ndarray) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized robust_batch_loss over stacked arrays.

    Shapes: v, a (B, d); rows_* (B, K+1, d); t_* (B, K+1); weights (B,).
    Returns (loss, dv, da, per_instance_losses) with dv, da scaled by
    w_i / sum(w) like the list-based variant.
    """
    if not (np.isfinite(tau) and tau > 0):
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    weights = np.asarray(weights, dtype=np.float64)
    total = float(weights.sum())
    if total <= 0.0:
        raise AllZeroWeights("sum of sample weights must be positive")

    logits_v = np.matmul(rows_a, v[:, :, None])[:, :, 0] / tau
    logits_a = np.matmul(rows_v, a[:, :, None])[:, :, 0] / tau
    lp_v = _log_softmax(logits_v, axis=1)
    lp_a = _log_softmax(logits_a, axis=1)
    per_losses = -np.einsum("bk,bk->b", t_v, lp_v) - np.einsum("bk,bk->b", t_a, lp_a)

    scale = (weights / total)[:, None]
    p_v = np.exp(lp_v)
    p_a = np.exp(lp_a)
    dv = np.matmul(((p_v - t_v) * scale)[:, None, :], rows_a)[:, 0, :] / tau
    da = np.matmul(((p_a - t_a) * scale)[:, None, :], rows_v)[:, 0, :] / tau
    loss = float(np.dot(weights, per_losses) / total)
    return loss, dv, da, per_losses
