"""Contrastive losses and their analytic gradients against finite differences."""

import math

import numpy as np
import pytest

from robust_xid.core_math import l2_normalize, normalize_rows
from robust_xid.errors import AllZeroWeights, InvalidTarget
from robust_xid.losses import (
    ContrastInstance,
    batch_soft_xid,
    robust_batch_loss,
    soft_xid_grad,
    soft_xid_loss,
    xid_grad,
    xid_loss,
    xid_posterior,
)

FD_STEP = 1e-6


def random_instance(d: int, k: int, tau: float, seed: int) -> ContrastInstance:
    rng = np.random.default_rng(seed)
    return ContrastInstance(
        v=l2_normalize(rng.standard_normal(d)),
        a=l2_normalize(rng.standard_normal(d)),
        rows_v=normalize_rows(rng.standard_normal((k + 1, d))),
        rows_a=normalize_rows(rng.standard_normal((k + 1, d))),
        tau=tau,
    )


def random_targets(k: int, seed: int):
    rng = np.random.default_rng(seed)
    t_v = rng.random(k + 1)
    t_a = rng.random(k + 1)
    return t_v / t_v.sum(), t_a / t_a.sum()


def fd_gradients(loss_fn, inst: ContrastInstance):
    """Central finite differences of the loss in the ambient embedding space."""
    grads = []
    for attr in ("v", "a"):
        base = getattr(inst, attr)
        g = np.zeros_like(base)
        for i in range(base.size):
            for sign in (1.0, -1.0):
                shifted = base.copy()
                shifted[i] += sign * FD_STEP
                setattr(inst, attr, shifted)
                g[i] += sign * loss_fn(inst)
            setattr(inst, attr, base)
        grads.append(g / (2 * FD_STEP))
    return grads


def rel_err(got, want):
    return np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12)


class TestPosterior:
    def test_identical_targets_uniform(self):
        rows = np.tile(l2_normalize(np.array([1.0, 2.0, 2.0])), (5, 1))
        p = xid_posterior(np.array([0.0, 1.0, 0.0]), rows, 0.07)
        np.testing.assert_allclose(p, np.full(5, 0.2), atol=1e-12)

    def test_direct_value(self):
        d = 4
        rows = np.stack([np.eye(d)[0], np.eye(d)[1], np.eye(d)[2]])
        p = xid_posterior(np.eye(d)[0], rows, 1.0)
        e = math.exp(1.0)
        assert p[0] == pytest.approx(e / (e + 2), abs=1e-12)

    def test_high_temperature_uniform(self):
        inst = random_instance(8, 6, tau=1e9, seed=0)
        p = xid_posterior(inst.v, inst.rows_a, inst.tau)
        np.testing.assert_allclose(p, np.full(7, 1 / 7), atol=1e-6)

    def test_repulsion_coefficient_monotone_in_similarity(self):
        # vary one negative's dot with the query, holding every other dot fixed
        d = 6
        s = np.eye(d)[0]
        fixed = np.stack([
            0.9 * np.eye(d)[0] + math.sqrt(1 - 0.81) * np.eye(d)[1],
            0.1 * np.eye(d)[0] + math.sqrt(1 - 0.01) * np.eye(d)[2],
            np.eye(d)[3],
        ])
        last = -1.0
        for c in np.linspace(-0.95, 0.95, 39):
            moving = c * np.eye(d)[0] + math.sqrt(1 - c * c) * np.eye(d)[4]
            rows = np.vstack([fixed, moving[None]])
            p = xid_posterior(s, rows, 0.07)
            assert p[3] > last
            last = p[3]


class TestXidLoss:
    def test_aligned_pair_direct_value(self):
        d = 4
        v = np.eye(d)[0]
        a = np.eye(d)[1]
        rows_a = np.stack([v, np.eye(d)[2]])      # dot(v, abar_self) = 1, negative 0
        rows_v = np.stack([a, np.eye(d)[3]])
        inst = ContrastInstance(v=v, a=a, rows_v=rows_v, rows_a=rows_a, tau=1.0)
        e = math.exp(1.0)
        assert xid_loss(inst) == pytest.approx(-2 * math.log(e / (e + 1)), abs=1e-12)

    def test_modality_swap_symmetry(self):
        inst = random_instance(8, 5, tau=0.2, seed=1)
        swapped = ContrastInstance(v=inst.a, a=inst.v, rows_v=inst.rows_a,
                                   rows_a=inst.rows_v, tau=inst.tau)
        assert xid_loss(inst) == pytest.approx(xid_loss(swapped), abs=1e-12)

    def test_identical_candidates_uniform_floor(self):
        d, k = 6, 9
        row = l2_normalize(np.arange(1.0, d + 1.0))
        rows = np.tile(row, (k + 1, 1))
        inst = ContrastInstance(v=np.eye(d)[0], a=np.eye(d)[1],
                                rows_v=rows, rows_a=rows, tau=0.07)
        assert xid_loss(inst) == pytest.approx(2 * math.log(k + 1), abs=1e-9)

    def test_non_negative(self):
        for seed in range(10):
            assert xid_loss(random_instance(8, 4, 0.07, seed)) >= 0.0


class TestXidGrad:
    @pytest.mark.parametrize("tau", [0.07, 0.5])
    @pytest.mark.parametrize("k", [4, 8])
    def test_matches_finite_differences(self, tau, k):
        for seed in range(25):
            inst = random_instance(16, k, tau, seed)
            g = xid_grad(inst)
            fd_v, fd_a = fd_gradients(xid_loss, inst)
            assert rel_err(g.dv, fd_v) <= 1e-5
            assert rel_err(g.da, fd_a) <= 1e-5

    def test_converged_attraction_vanishes(self):
        d = 8
        v = np.eye(d)[0]
        rows_a = np.vstack([v[None], -np.tile(v, (4, 1))])  # self dot 1, negatives -1
        rows_v = rows_a.copy()
        inst = ContrastInstance(v=v, a=v.copy(), rows_v=rows_v, rows_a=rows_a, tau=0.05)
        g = xid_grad(inst)
        assert np.linalg.norm(g.dv) < 1e-10
        assert np.linalg.norm(g.da) < 1e-10

    def test_halving_tau_doubles_gradient_at_fixed_posteriors(self):
        # query orthogonal to all (distinct) targets: posterior stays uniform
        # for every tau, so the explicit formula scales as 1/tau
        d = 6
        v = np.eye(d)[0]
        rows_a = np.stack([np.eye(d)[1], np.eye(d)[2], np.eye(d)[3]])
        rows_v = np.stack([np.eye(d)[2], np.eye(d)[4], np.eye(d)[5]])
        a = np.eye(d)[0]
        one = xid_grad(ContrastInstance(v=v, a=a, rows_v=rows_v, rows_a=rows_a, tau=0.4))
        half = xid_grad(ContrastInstance(v=v, a=a, rows_v=rows_v, rows_a=rows_a, tau=0.2))
        np.testing.assert_allclose(half.dv, 2 * one.dv, rtol=1e-12)
        np.testing.assert_allclose(half.da, 2 * one.da, rtol=1e-12)

    def test_gradient_norm_shrinks_toward_attraction_point(self):
        # slerp the query toward its own target with negatives fixed
        rng = np.random.default_rng(9)
        d, k = 12, 8
        rows_a = normalize_rows(rng.standard_normal((k + 1, d)))
        rows_v = normalize_rows(rng.standard_normal((k + 1, d)))
        a = l2_normalize(rng.standard_normal(d))
        target = rows_a[0]
        start = l2_normalize(rng.standard_normal(d))
        omega = math.acos(np.clip(start @ target, -1, 1))
        norms = []
        for t in np.linspace(0.0, 0.995, 40):
            v = (math.sin((1 - t) * omega) * start + math.sin(t * omega) * target) / math.sin(omega)
            g = xid_grad(ContrastInstance(v=v, a=a, rows_v=rows_v, rows_a=rows_a, tau=0.07))
            norms.append(np.linalg.norm(g.dv))
        assert all(n1 >= n2 - 1e-9 for n1, n2 in zip(norms, norms[1:]))


class TestSoftXid:
    def test_lambda_zero_reduction(self):
        for seed in range(10):
            inst = random_instance(8, 6, 0.07, seed)
            onehot = np.zeros(7)
            onehot[0] = 1.0
            assert soft_xid_loss(inst, onehot, onehot.copy()) == pytest.approx(
                xid_loss(inst), abs=1e-12)

    def test_matching_targets_give_entropy(self):
        inst = random_instance(8, 5, 0.3, seed=3)
        p_v = xid_posterior(inst.v, inst.rows_a, inst.tau)
        p_a = xid_posterior(inst.a, inst.rows_v, inst.tau)
        entropy = -(p_v @ np.log(p_v)) - (p_a @ np.log(p_a))
        assert soft_xid_loss(inst, p_v, p_a) == pytest.approx(entropy, abs=1e-12)

    def test_uniform_targets_identical_candidates(self):
        d, k = 5, 7
        row = l2_normalize(np.ones(d))
        rows = np.tile(row, (k + 1, 1))
        inst = ContrastInstance(v=np.eye(d)[0], a=np.eye(d)[1],
                                rows_v=rows, rows_a=rows, tau=0.07)
        uniform = np.full(k + 1, 1 / (k + 1))
        assert soft_xid_loss(inst, uniform, uniform) == pytest.approx(
            2 * math.log(k + 1), abs=1e-9)

    def test_malformed_target(self):
        inst = random_instance(6, 4, 0.07, seed=0)
        bad = np.full(5, 0.3)
        with pytest.raises(InvalidTarget):
            soft_xid_loss(inst, bad, bad)

    @pytest.mark.parametrize("tau", [0.07, 0.5])
    def test_grad_matches_finite_differences(self, tau):
        for seed in range(25):
            inst = random_instance(16, 8, tau, seed)
            t_v, t_a = random_targets(8, seed + 1000)
            g = soft_xid_grad(inst, t_v, t_a)
            fd_v, fd_a = fd_gradients(lambda ins: soft_xid_loss(ins, t_v, t_a), inst)
            assert rel_err(g.dv, fd_v) <= 1e-5
            assert rel_err(g.da, fd_a) <= 1e-5

    def test_targets_equal_posteriors_zero_gradient(self):
        inst = random_instance(8, 5, 0.2, seed=4)
        p_v = xid_posterior(inst.v, inst.rows_a, inst.tau)
        p_a = xid_posterior(inst.a, inst.rows_v, inst.tau)
        g = soft_xid_grad(inst, p_v, p_a)
        assert np.linalg.norm(g.dv) < 1e-12
        assert np.linalg.norm(g.da) < 1e-12

    def test_one_hot_target_reduces_to_xid_grad(self):
        inst = random_instance(8, 5, 0.07, seed=5)
        onehot = np.zeros(6)
        onehot[0] = 1.0
        soft = soft_xid_grad(inst, onehot, onehot.copy())
        hard = xid_grad(inst)
        np.testing.assert_allclose(soft.dv, hard.dv, atol=1e-12)
        np.testing.assert_allclose(soft.da, hard.da, atol=1e-12)
        assert soft.loss == pytest.approx(hard.loss, abs=1e-12)


class TestRobustBatchLoss:
    def _batch(self, n, k=4, d=8, seed=0):
        instances = [random_instance(d, k, 0.07, seed + i) for i in range(n)]
        targets = [random_targets(k, seed + 100 + i) for i in range(n)]
        return instances, targets

    def test_unit_weights_mean(self):
        instances, targets = self._batch(5)
        loss, _ = robust_batch_loss(instances, np.ones(5), targets)
        per = [soft_xid_loss(i, tv, ta) for i, (tv, ta) in zip(instances, targets)]
        assert loss == pytest.approx(np.mean(per), abs=1e-12)

    def test_one_hot_weight_selects_instance(self):
        instances, targets = self._batch(4)
        w = np.array([0.0, 0.0, 1.0, 0.0])
        loss, grads = robust_batch_loss(instances, w, targets)
        assert loss == pytest.approx(soft_xid_loss(instances[2], *targets[2]), abs=1e-12)
        assert np.linalg.norm(grads[0].dv) == 0.0

    def test_weight_scaling_invariance(self):
        instances, targets = self._batch(6)
        w = np.array([0.5, 1.0, 2.0, 0.1, 3.0, 1.5])
        base_loss, base_grads = robust_batch_loss(instances, w, targets)
        scaled_loss, scaled_grads = robust_batch_loss(instances, 3.7 * w, targets)
        assert base_loss == pytest.approx(scaled_loss, abs=1e-12)
        for g1, g2 in zip(base_grads, scaled_grads):
            np.testing.assert_allclose(g1.dv, g2.dv, atol=1e-12)

    def test_reduction_to_mean_xid(self):
        instances, _ = self._batch(5, k=3)
        onehot = np.zeros(4)
        onehot[0] = 1.0
        targets = [(onehot, onehot.copy()) for _ in instances]
        loss, _ = robust_batch_loss(instances, np.ones(5), targets)
        assert loss == pytest.approx(np.mean([xid_loss(i) for i in instances]), abs=1e-12)

    def test_all_zero_weights(self):
        instances, targets = self._batch(3)
        with pytest.raises(AllZeroWeights):
            robust_batch_loss(instances, np.zeros(3), targets)

    def test_batched_kernel_matches_listwise(self):
        instances, targets = self._batch(6, k=5, d=10, seed=77)
        w = np.linspace(0.2, 1.0, 6)
        loss, grads = robust_batch_loss(instances, w, targets)
        v = np.stack([i.v for i in instances])
        a = np.stack([i.a for i in instances])
        rows_v = np.stack([i.rows_v for i in instances])
        rows_a = np.stack([i.rows_a for i in instances])
        t_v = np.stack([t[0] for t in targets])
        t_a = np.stack([t[1] for t in targets])
        b_loss, b_dv, b_da, b_per = batch_soft_xid(v, a, rows_v, rows_a, t_v, t_a, 0.07, w)
        assert b_loss == pytest.approx(loss, abs=1e-12)
        for i, g in enumerate(grads):
            np.testing.assert_allclose(b_dv[i], g.dv, atol=1e-12)
            np.testing.assert_allclose(b_da[i], g.da, atol=1e-12)
            assert b_per[i] == pytest.approx(g.loss, abs=1e-12)
