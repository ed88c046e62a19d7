"""Differentiable row/column pruning with binary gates.

Every prunable layer owns one gate parameter per row or column. The mask is
the step function of the gate (open iff the gate is positive) and multiplies
the corresponding structure of the weight matrix. Gates receive the gradient
of the total loss with respect to the mask times ``softplus(gate)``.

Weights are stored ``in_dim x out_dim`` so a layer computes ``x @ H(W) + b``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

AXES = ("row", "column")


def mask_of(gates) -> np.ndarray:
    return (np.asarray(gates, dtype=np.float64) > 0).astype(np.float64)


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class GatedLayer:
    W: np.ndarray
    b: np.ndarray
    gates: np.ndarray
    axis: str = "column"
    prunable: bool = True

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.gates = np.asarray(self.gates, dtype=np.float64)
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"bias shape {self.b.shape} does not match weights {self.W.shape}")
        n = self.W.shape[1] if self.axis == "column" else self.W.shape[0]
        if self.gates.shape != (n,):
            raise ValueError(f"{self.axis} gates need length {n}, got {self.gates.shape}")

    @property
    def mask(self) -> np.ndarray:
        return mask_of(self.gates)

    def mask_matrix(self) -> np.ndarray:
        """Mask broadcast to the weight shape."""
        m = self.mask
        return m[None, :] if self.axis == "column" else m[:, None]

    def effective_weight(self) -> np.ndarray:
        return self.W * self.mask_matrix()

    def pruned_index(self) -> list[int]:
        return np.nonzero(self.mask == 0)[0].tolist()

    def sparsity(self) -> float:
        return len(self.pruned_index()) / len(self.gates)

    def copy(self) -> GatedLayer:
        return GatedLayer(self.W.copy(), self.b.copy(), self.gates.copy(), self.axis, self.prunable)


@dataclass
class GatedNetwork:
    """Feed-forward classifier: ReLU on hidden layers, identity on the last."""

    layers: list

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError(f"layer widths do not chain: {a.W.shape} -> {b.W.shape}")

    @classmethod
    def init(cls, sizes, rng, axis="column", gate_init=1.0, prune_output=False,
             outliers=0, outlier_gain=10.0) -> GatedNetwork:
        """He-initialised layers. ``outliers`` entries per layer are scaled by
        ``outlier_gain``, giving the few large weights typical of big trained
        models."""
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            last = k == len(sizes) - 2
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            if outliers:
                pick = rng.choice(W.size, size=min(outliers, W.size), replace=False)
                W.flat[pick] *= outlier_gain
            n = fan_out if axis == "column" else fan_in
            layers.append(GatedLayer(W, np.zeros(fan_out), np.full(n, float(gate_init)),
                                     axis, prunable=prune_output or not last))
        return cls(layers)

    def copy(self) -> GatedNetwork:
        return GatedNetwork([layer.copy() for layer in self.layers])

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].W.shape[0]] + [layer.W.shape[1] for layer in self.layers]

    def open_gates(self) -> float:
        return float(sum(layer.mask.sum() for layer in self.layers if layer.prunable))


def _forward(net: GatedNetwork, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.layers[0].W.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} != network input {net.layers[0].W.shape[0]}")
    acts, pres = [x], []
    h = x
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        z = h @ layer.effective_weight() + layer.b
        pres.append(z)
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pres


def forward_masked(net: GatedNetwork, x) -> np.ndarray:
    return _forward(net, x)[1][-1]


def predict(net: GatedNetwork, x) -> np.ndarray:
    return np.argmax(forward_masked(net, x), axis=-1)


def accuracy(logits, y) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(y)))


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, y) -> float:
    logits = np.atleast_2d(logits)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return float(-np.mean(_log_softmax(logits)[np.arange(len(y)), y]))


def total_loss(net: GatedNetwork, x, y, mu: float) -> float:
    """Mean cross-entropy plus ``mu`` times the number of open gates."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("empty batch")
    return cross_entropy(forward_masked(net, x), y) + mu * net.open_gates()


@dataclass
class Grads:
    W: list
    b: list
    gates: list
    mask: list = field(default_factory=list)   # dL_t/dM per layer


def backward(net: GatedNetwork, x, y, mu: float) -> Grads:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if len(x) == 0:
        raise ValueError("empty batch")
    acts, pres = _forward(net, x)
    batch = len(x)
    probs = np.exp(_log_softmax(pres[-1]))
    dz = probs
    dz[np.arange(batch), y] -= 1.0
    dz /= batch

    dW, db, dg, dm = [], [], [], []
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dH = acts[k].T @ dz
        M = layer.mask_matrix()
        dW.append(dH * M)
        db.append(dz.sum(axis=0))
        contrib = dH * layer.W
        dLdM = contrib.sum(axis=0) if layer.axis == "column" else contrib.sum(axis=1)
        if layer.prunable:
            dLdM = dLdM + mu
        dm.append(dLdM)
        dg.append(dLdM * softplus(layer.gates))
        if k:
            dz = (dz @ layer.effective_weight().T) * (pres[k - 1] > 0)
    return Grads(dW[::-1], db[::-1], dg[::-1], dm[::-1])


@dataclass
class MomentumState:
    vW: list
    vb: list

    @classmethod
    def zeros(cls, net: GatedNetwork) -> MomentumState:
        return cls([np.zeros_like(l.W) for l in net.layers], [np.zeros_like(l.b) for l in net.layers])


def step_weights(net: GatedNetwork, grads: Grads, lr: float, state: MomentumState | None = None,
                 momentum: float = 0.9) -> MomentumState:
    """Heavy-ball SGD on weights and biases; closed structures are left untouched."""
    if state is None:
        state = MomentumState.zeros(net)
    for k, layer in enumerate(net.layers):
        state.vW[k] = momentum * state.vW[k] + grads.W[k]
        state.vb[k] = momentum * state.vb[k] + grads.b[k]
        layer.W -= lr * state.vW[k] * layer.mask_matrix()
        layer.b -= lr * state.vb[k]
    return state


def step_gates(net: GatedNetwork, gate_grads, lr: float) -> None:
    for layer, g in zip(net.layers, gate_grads):
        if layer.prunable:
            layer.gates -= lr * g


@dataclass(frozen=True)
class PruneConfig:
    mu: float = 2.5e-2
    gate_lr: float = 0.02
    weight_lr: float = 0.02
    momentum: float = 0.9
    epochs_joint: int = 60
    epochs_finetune: int = 15
    batch_size: int = 64
    seed: int = 0
    hidden: tuple = (128, 128)
    axis: str = "column"
    gate_init: float = 1.0
    prune_output: bool = False
    outliers: int = 8            # large initial weights per layer
    outlier_gain: float = 10.0
    stop_sparsity: float = 0.35  # end the joint phase once every prunable layer gets here; 0 disables
    min_sparsity: float = 0.30
    max_drop: float = 1.0   # accuracy points

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.gate_lr <= 0 or self.weight_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.outliers < 0:
            raise ValueError("outliers must be non-negative")
        if not 0.0 <= self.stop_sparsity <= 1.0:
            raise ValueError("stop_sparsity must lie in [0, 1]")
        if self.epochs_joint < 0 or self.epochs_finetune < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")


@dataclass
class PruneReport:
    sparsity: list            # per layer, fraction of closed gates
    pruned: list              # per layer, sorted closed indices
    prunable: list
    baseline_acc: float
    pruned_acc: float
    loss_trace: list

    @property
    def drop_points(self) -> float:
        return 100.0 * (self.baseline_acc - self.pruned_acc)

    def min_prunable_sparsity(self) -> float:
        vals = [s for s, p in zip(self.sparsity, self.prunable) if p]
        return min(vals) if vals else 0.0

    def meets(self, cfg: PruneConfig) -> bool:
        return self.min_prunable_sparsity() >= cfg.min_sparsity and self.drop_points <= cfg.max_drop

    def to_csv(self) -> str:
        lines = ["layer,prunable,sparsity,pruned_count,baseline_acc,pruned_acc"]
        for k, (s, idx, p) in enumerate(zip(self.sparsity, self.pruned, self.prunable)):
            lines.append(f"{k},{int(p)},{s:.6f},{len(idx)},{self.baseline_acc:.6f},{self.pruned_acc:.6f}")
        return "\n".join(lines) + "\n"


def _reached(net: GatedNetwork, target: float) -> bool:
    rates = [layer.sparsity() for layer in net.layers if layer.prunable]
    return target > 0 and bool(rates) and min(rates) >= target


def _fit(net, data, cfg: PruneConfig, rng, epochs_joint, epochs_finetune, gates_on: bool):
    Xtr, ytr = data.train_x, data.train_y
    state = MomentumState.zeros(net)
    trace = []
    n = len(Xtr)
    joint_left = epochs_joint
    epoch = 0
    finetune_left = epochs_finetune
    while joint_left or finetune_left:
        joint = joint_left > 0
        if joint:
            joint_left -= 1
        else:
            finetune_left -= 1
        order = rng.permutation(n)
        losses = []
        mu = cfg.mu if (joint and gates_on) else 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = Xtr[idx], ytr[idx]
            loss = total_loss(net, xb, yb, mu)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss {loss} at epoch {epoch}, batch offset {start}; "
                    f"try a smaller weight_lr (now {cfg.weight_lr})")
            losses.append(loss)
            g = backward(net, xb, yb, mu)
            step_weights(net, g, cfg.weight_lr, state, cfg.momentum)
            if joint and gates_on:
                step_gates(net, g.gates, cfg.gate_lr)
                if _reached(net, cfg.stop_sparsity):
                    log.info("target sparsity reached in epoch %d; freezing masks", epoch)
                    joint_left = 0
                    joint = False
                    mu = 0.0
                    gates_on = False
        trace.append(float(np.mean(losses)))
        log.debug("epoch %d joint=%s loss=%.6f", epoch, joint, trace[-1])
        epoch += 1
    return trace


def train_baseline(cfg: PruneConfig, data) -> GatedNetwork:
    """Same seed, same schedule, gates never updated."""
    rng = np.random.default_rng(cfg.seed)
    net = GatedNetwork.init([data.dim, *cfg.hidden, data.classes], rng, cfg.axis,
                            cfg.gate_init, cfg.prune_output, cfg.outliers, cfg.outlier_gain)
    _fit(net, data, cfg, rng, cfg.epochs_joint, cfg.epochs_finetune, gates_on=False)
    return net


def train_prune(cfg: PruneConfig, data) -> tuple[GatedNetwork, PruneReport]:
    """Joint weight/gate training, then fine-tuning with frozen masks."""
    baseline = train_baseline(cfg, data)
    base_acc = accuracy(forward_masked(baseline, data.test_x), data.test_y)

    rng = np.random.default_rng(cfg.seed)
    net = GatedNetwork.init([data.dim, *cfg.hidden, data.classes], rng, cfg.axis,
                            cfg.gate_init, cfg.prune_output, cfg.outliers, cfg.outlier_gain)
    trace = _fit(net, data, cfg, rng, cfg.epochs_joint, cfg.epochs_finetune, gates_on=True)
    acc = accuracy(forward_masked(net, data.test_x), data.test_y)
    report = PruneReport(
        sparsity=[layer.sparsity() for layer in net.layers],
        pruned=[layer.pruned_index() for layer in net.layers],
        prunable=[layer.prunable for layer in net.layers],
        baseline_acc=base_acc,
        pruned_acc=acc,
        loss_trace=trace,
    )
    log.info("pruning done: sparsity=%s acc %.4f -> %.4f", report.sparsity, base_acc, acc)
    return net, report


@dataclass
class SubNetwork:
    """Compact network with pruned structures physically removed."""

    weights: list
    biases: list
    kept: list      # per layer, surviving output columns

    def forward(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = z if k == last else np.maximum(z, 0.0)
        return h


def hard_prune(net: GatedNetwork) -> tuple[SubNetwork, list, list]:
    """Remove closed structures.

    A closed column outputs a constant (its bias through the activation); that
    constant is folded into the next layer's bias so the compact network
    computes the same function. Output-layer columns and pruned rows are zeroed
    rather than removed, since removing them would change the interface.
    """
    weights, biases, kept = [], [], []
    in_keep = np.arange(net.layers[0].W.shape[0])
    carry = None       # constant activations of removed units of the previous layer
    last = len(net.layers) - 1
    for k, layer in enumerate(net.layers):
        H = layer.effective_weight()
        cols = H.shape[1]
        if layer.axis == "column" and k != last:
            out_keep = np.nonzero(layer.mask > 0)[0]
        else:
            out_keep = np.arange(cols)
        b = layer.b.copy()
        if carry is not None:
            removed, values = carry
            if len(removed):
                b = b + values @ H[removed, :]
        weights.append(H[np.ix_(in_keep, out_keep)])
        biases.append(b[out_keep])
        kept.append(out_keep.tolist())
        removed = np.setdiff1d(np.arange(cols), out_keep)
        act = layer.b[removed] if k == last else np.maximum(layer.b[removed], 0.0)
        carry = (removed, act)
        in_keep = out_keep
    pruned = [layer.pruned_index() for layer in net.layers]
    sparsity = [layer.sparsity() for layer in net.layers]
    return SubNetwork(weights, biases, kept), pruned, sparsity
