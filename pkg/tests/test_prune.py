import math

import numpy as np
import pytest

from oracles import gated_net, loss_oracle
from rramft.data import gaussian_clusters
from rramft.prune import (GatedLayer, GatedNetwork, Grads, MomentumState, PruneConfig, backward,
                          cross_entropy, forward_masked, hard_prune, mask_of, softplus,
                          step_gates, step_weights, total_loss, train_prune)


def fd_grad(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b)))


def test_mask_examples():
    assert mask_of([-0.2, 0.5, 0.0]).tolist() == [0, 1, 0]
    assert mask_of([1, 2]).tolist() == [1, 1]
    assert mask_of([-1, -2]).tolist() == [0, 0]


def test_forward_hand_example():
    layer = GatedLayer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(forward_masked(GatedNetwork([layer]), [[1.0, 1.0]]), [[4.0, 0.0]])


def test_masked_column_gives_bias_and_manual_zeroing_matches():
    rng = np.random.default_rng(0)
    net = gated_net(rng, [5, 6, 3], closed=0.0)
    net.layers[0].gates[2] = -1.0
    x = rng.normal(size=(4, 5))
    hidden = x @ net.layers[0].effective_weight() + net.layers[0].b
    np.testing.assert_array_equal(hidden[:, 2], np.full(4, net.layers[0].b[2]))
    manual = net.copy()
    manual.layers[0].W[:, 2] = 0.0
    manual.layers[0].gates[:] = 1.0
    np.testing.assert_array_equal(forward_masked(manual, x), forward_masked(net, x))


def test_all_open_masks_are_plain_forward():
    rng = np.random.default_rng(1)
    net = gated_net(rng, [4, 7, 3], closed=0.0)
    net.layers[0].gates[:] = 1.0
    net.layers[1].gates[:] = 1.0
    x = rng.normal(size=(3, 4))
    h = np.maximum(x @ net.layers[0].W + net.layers[0].b, 0)
    np.testing.assert_allclose(forward_masked(net, x), h @ net.layers[1].W + net.layers[1].b,
                               rtol=0, atol=1e-12)


def test_total_loss_examples():
    rng = np.random.default_rng(2)
    layer = GatedLayer(rng.normal(size=(3, 10)), rng.normal(size=10), np.ones(10))
    net = GatedNetwork([layer])
    x, y = rng.normal(size=(5, 3)), rng.integers(0, 10, size=5)
    task = cross_entropy(forward_masked(net, x), y)
    assert total_loss(net, x, y, 0.0) == task
    assert total_loss(net, x, y, 0.1) == pytest.approx(task + 1.0)
    layer.gates[:] = -1.0
    closed = total_loss(net, x, y, 0.1)
    assert math.isfinite(closed)
    assert closed == pytest.approx(cross_entropy(np.tile(layer.b, (5, 1)), y))


def test_total_loss_matches_oracle_and_grows_with_mu():
    rng = np.random.default_rng(3)
    net = gated_net(rng, [6, 8, 5, 4])
    x, y = rng.normal(size=(7, 6)), rng.integers(0, 4, size=7)
    losses = [total_loss(net, x, y, mu) for mu in (0.0, 0.01, 0.1, 1.0)]
    assert losses == sorted(losses)
    for mu in (0.0, 0.3):
        assert total_loss(net, x, y, mu) == pytest.approx(loss_oracle(net, x, y, mu), rel=1e-12)


@pytest.mark.parametrize("axis", ["column", "row"])
def test_weight_grads_finite_differences(axis):
    rng = np.random.default_rng(4)
    for _ in range(3):
        net = gated_net(rng, [5, 7, 6, 3], axis=axis)
        x, y = rng.normal(size=(6, 5)), rng.integers(0, 3, size=6)
        g = backward(net, x, y, 0.05)
        for k, layer in enumerate(net.layers):
            f = lambda: total_loss(net, x, y, 0.05)
            assert rel_err(fd_grad(f, layer.W), g.W[k]) < 1e-5
            assert rel_err(fd_grad(f, layer.b), g.b[k]) < 1e-5


def test_mu_zero_all_open_is_standard_backprop():
    rng = np.random.default_rng(5)
    net = gated_net(rng, [4, 6, 3], closed=0.0)
    for layer in net.layers:
        layer.gates[:] = 1.0
    x, y = rng.normal(size=(5, 4)), rng.integers(0, 3, size=5)
    g = backward(net, x, y, 0.0)
    W0, b0, W1, b1 = net.layers[0].W, net.layers[0].b, net.layers[1].W, net.layers[1].b
    z0 = x @ W0 + b0
    h = np.maximum(z0, 0)
    z1 = h @ W1 + b1
    p = np.exp(z1 - z1.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    d1 = p.copy()
    d1[np.arange(5), y] -= 1
    d1 /= 5
    d0 = (d1 @ W1.T) * (z0 > 0)
    np.testing.assert_allclose(g.W[1], h.T @ d1, atol=1e-14)
    np.testing.assert_allclose(g.W[0], x.T @ d0, atol=1e-14)


def test_gate_grad_contraction_oracle():
    rng = np.random.default_rng(6)
    mu = 0.02
    net = gated_net(rng, [4, 5, 3], prune_output=False)
    x, y = rng.normal(size=(1, 4)), rng.integers(0, 3, size=1)
    g = backward(net, x, y, mu)
    for k, layer in enumerate(net.layers):
        # dL/dH by finite differences on an ungated copy whose weights are H
        probe = net.copy()
        for pl in probe.layers:
            pl.W = pl.effective_weight()
            pl.gates = np.ones_like(pl.gates)
        dH = fd_grad(lambda: total_loss(probe, x, y, 0.0), probe.layers[k].W)
        dM = np.array([sum(dH[i, j] * layer.W[i, j] for i in range(layer.W.shape[0]))
                       for j in range(layer.W.shape[1])])
        if layer.prunable:
            dM = dM + mu
        np.testing.assert_allclose(g.mask[k], dM, atol=1e-7)
        np.testing.assert_array_equal(g.gates[k], g.mask[k] * softplus(layer.gates))


def test_softplus_ste_scalar():
    assert 0.5 * softplus(0.0) == pytest.approx(0.346574, abs=1e-6)


def test_step_examples():
    layer = GatedLayer(np.array([[1.0]]), np.array([0.0]), np.array([0.1]))
    net = GatedNetwork([layer])
    grads = Grads([np.array([[2.0]])], [np.array([0.0])], [np.array([1.0])])
    step_weights(net, grads, 0.1, MomentumState.zeros(net))
    assert layer.W[0, 0] == pytest.approx(0.8)
    step_gates(net, grads.gates, 0.05)
    assert layer.gates[0] == pytest.approx(0.05)
    step_gates(net, grads.gates, 0.05)
    step_gates(net, grads.gates, 0.05)
    assert mask_of(layer.gates)[0] == 0.0


def test_zero_grads_or_lr_leave_net_unchanged():
    rng = np.random.default_rng(7)
    net = gated_net(rng, [3, 4, 2])
    before = net.copy()
    x, y = rng.normal(size=(4, 3)), rng.integers(0, 2, size=4)
    g = backward(net, x, y, 0.1)
    step_weights(net, g, 0.0)
    step_gates(net, g.gates, 0.0)
    zero = Grads([np.zeros_like(l.W) for l in net.layers], [np.zeros_like(l.b) for l in net.layers],
                 [np.zeros_like(l.gates) for l in net.layers])
    step_weights(net, zero, 0.5)
    step_gates(net, zero.gates, 0.5)
    for a, b in zip(net.layers, before.layers):
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.b, b.b)
        np.testing.assert_array_equal(a.gates, b.gates)


def test_hard_prune_examples():
    layer = GatedLayer(np.ones((2, 3)), np.zeros(3), np.array([0.0, 1.0, 1.0]))
    out = GatedLayer(np.ones((3, 2)), np.zeros(2), np.ones(2), prunable=False)
    _, index, sparsity = hard_prune(GatedNetwork([layer, out]))
    assert index[0] == [0] and sparsity[0] == pytest.approx(1 / 3)
    assert index[1] == [] and sparsity[1] == 0.0


@pytest.mark.parametrize("axis", ["column", "row"])
def test_hard_prune_equivalence(axis):
    rng = np.random.default_rng(8)
    net = gated_net(rng, [6, 9, 7, 4], axis=axis, closed=0.4)
    sub, _, _ = hard_prune(net)
    x = rng.normal(size=(30, 6))
    np.testing.assert_allclose(sub.forward(x), forward_masked(net, x), atol=1e-12)
    if axis == "column":
        assert sub.weights[0].shape[1] == 9 - len(net.layers[0].pruned_index())


def small_task():
    return gaussian_clusters(dim=16, clusters_per_class=2, n_train=600, n_test=300,
                             outlier_features=0, seed=1)


def test_mu_zero_keeps_everything_open():
    cfg = PruneConfig(mu=0.0, epochs_joint=3, epochs_finetune=1, hidden=(16, 16))
    net, report = train_prune(cfg, small_task())
    assert all(s == 0.0 for s in report.sparsity)


def test_training_is_deterministic_and_consistent():
    cfg = PruneConfig(mu=0.5, epochs_joint=10, epochs_finetune=2, hidden=(16, 16), seed=3,
                      stop_sparsity=0.0)
    data = small_task()
    a_net, a = train_prune(cfg, data)
    b_net, b = train_prune(cfg, data)
    assert a.to_csv() == b.to_csv() and a.loss_trace == b.loss_trace
    for layer, idx, s in zip(a_net.layers, a.pruned, a.sparsity):
        assert layer.pruned_index() == idx
        assert 0.0 <= s <= 1.0
    assert a.prunable == [True, True, False]
    assert 0.0 < a.sparsity[0] < 1.0


def test_stop_sparsity_freezes_early():
    cfg = PruneConfig(mu=0.5, epochs_joint=30, epochs_finetune=1, hidden=(16, 16),
                      stop_sparsity=0.25)
    _, report = train_prune(cfg, small_task())
    assert min(report.sparsity[:2]) >= 0.25
    assert max(report.sparsity[:2]) < 1.0


def test_bad_config():
    with pytest.raises(ValueError):
        PruneConfig(mu=-1)
    with pytest.raises(ValueError):
        PruneConfig(gate_lr=0)
    with pytest.raises(ValueError):
        PruneConfig(epochs_joint=-1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    data = small_task()
    data.train_x[5, 3] = np.inf
    cfg = PruneConfig(epochs_joint=1, epochs_finetune=0, hidden=(16, 16))
    with pytest.raises(FloatingPointError, match="non-finite"):
        train_prune(cfg, data)
