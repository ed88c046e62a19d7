"""Monte Carlo stuck-at-fault evaluation of a quantized network on crossbars."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, SweepSection
from .embed import build_embedded_layer
from .ftol import FtConfig, FtNetworkLayer, build_ft_layer, identity, infer_network_ft, relu
from .prune import GatedNetwork
from .quant import QuantConfig, quantize, reconstruct
from .xbar import FaultModel

log = logging.getLogger(__name__)

CSV_HEADER = "rate,method,acc_mean,acc_var,trials,seed"


@dataclass(frozen=True)
class QuantizedNetwork:
    layers: list        # QuantizedLayer, in_dim x out_dim
    biases: list
    pruned: list        # per layer, pruned output columns

    @classmethod
    def from_gated(cls, net: GatedNetwork, bits: int) -> QuantizedNetwork:
        cfg = QuantConfig(bits)
        layers, biases, pruned = [], [], []
        for layer in net.layers:
            layers.append(quantize(layer.effective_weight(), cfg))
            biases.append(layer.b.copy())
            pruned.append(tuple(layer.pruned_index()) if layer.axis == "column" else ())
        return cls(layers, biases, pruned)

    def activations(self):
        return [relu] * (len(self.layers) - 1) + [identity]

    def dense_forward(self, x) -> np.ndarray:
        """Fault-free reference: the dequantized weights in a plain forward pass."""
        h = np.asarray(x, dtype=np.float64)
        for ql, b, act in zip(self.layers, self.biases, self.activations()):
            h = act(h @ reconstruct(ql) + b)
        return h


def method_config(method: str, cfg: RunConfig, rate: float, seed: int) -> FtConfig:
    fault = FaultModel(rate, cfg.fault.sa1_share, seed)
    if method == "no_voting":
        return FtConfig(1, cfg.ft.baseline_flip, fault)
    if method in ("voting", "voting_embedded"):
        return FtConfig(cfg.ft.candidates, cfg.ft.flip, fault)
    raise ValueError(f"unknown method {method!r}")


def build_network(qnet: QuantizedNetwork, method: str, ftcfg: FtConfig, trial: int) -> list:
    """Fault-injected crossbar network for one trial.

    Layer k of trial t draws its faults from streams prefixed ``(t, k)``. With
    ``voting_embedded`` every layer that has pruned columns hosts its MSB
    copies there; layers without pruned columns keep separate copies.
    """
    out = []
    for k, (ql, b, act, pruned) in enumerate(zip(qnet.layers, qnet.biases,
                                                 qnet.activations(), qnet.pruned)):
        prefix = (trial, k)
        if method == "voting_embedded" and pruned:
            layer = build_embedded_layer(ql, ftcfg, pruned, prefix)
        else:
            layer = build_ft_layer(ql, ftcfg, prefix, pruned)
        out.append(FtNetworkLayer(layer, b, act))
    return out


def trial_accuracy(qnet: QuantizedNetwork, data, method: str, ftcfg: FtConfig, trial: int) -> float:
    logits = infer_network_ft(build_network(qnet, method, ftcfg, trial), data.test_x)
    return float(np.mean(np.argmax(logits, axis=-1) == data.test_y))


def mean_var(values) -> tuple[float, float]:
    """Sample mean and unbiased variance (0 for a single sample)."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    var = float(v.var(ddof=1)) if len(v) > 1 else 0.0
    return mean, var


def monte_carlo(qnet: QuantizedNetwork, data, rate: float, method: str, trials: int, seed: int,
                cfg: RunConfig | None = None, order=None) -> tuple[float, float]:
    """Mean and variance of test accuracy (in percent) over ``trials`` fault draws.

    ``order`` permutes the evaluation order of trials; results are reduced in
    trial-index order so it cannot change the outcome.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    cfg = cfg or RunConfig()
    ftcfg = method_config(method, cfg, rate, seed)
    accs = [None] * trials
    for t in (order if order is not None else range(trials)):
        accs[t] = 100.0 * trial_accuracy(qnet, data, method, ftcfg, t)
    return mean_var(accs)


@dataclass(frozen=True)
class SweepRow:
    rate: float
    method: str
    acc_mean: float
    acc_var: float
    trials: int
    seed: int

    def csv(self) -> str:
        return (f"{self.rate:.6f},{self.method},{self.acc_mean:.6f},{self.acc_var:.6f},"
                f"{self.trials},{self.seed}")


def rows_to_csv(rows) -> str:
    return CSV_HEADER + "\n" + "".join(r.csv() + "\n" for r in rows)


def run_sweep(qnet: QuantizedNetwork, data, cfg: RunConfig, progress=None) -> list[SweepRow]:
    sw = cfg.sweep
    rows = []
    for rate in sw.rates:
        for method in sw.methods:
            mean, var = monte_carlo(qnet, data, rate, method, sw.trials, cfg.seed, cfg)
            rows.append(SweepRow(rate, method, mean, var, sw.trials, cfg.seed))
            log.info("rate=%g method=%s acc=%.3f var=%.3f", rate, method, mean, var)
            if progress:
                progress(rows[-1])
    return rows


def tolerated_rate(rows, method: str, clean_acc: float, max_drop: float) -> float:
    """Largest grid rate up to which the mean accuracy stays within ``max_drop``
    points of ``clean_acc`` (0 if even the smallest rate fails)."""
    best = 0.0
    for r in sorted((r for r in rows if r.method == method), key=lambda r: r.rate):
        if clean_acc - r.acc_mean >= max_drop:
            break
        best = r.rate
    return best


def sweep_summary(rows, clean_acc: float, sw: SweepSection) -> dict[str, float]:
    out = {"clean_acc": clean_acc}
    methods = [m for m in sw.methods if any(r.method == m for r in rows)]
    for m in methods:
        out[f"tolerated_rate_{m}"] = tolerated_rate(rows, m, clean_acc, sw.tolerance_drop)
    if "no_voting" in methods and "voting" in methods:
        base = out["tolerated_rate_no_voting"]
        out["tolerance_ratio"] = out["tolerated_rate_voting"] / base if base > 0 else math.inf
    return out


def summary_to_csv(summary: dict) -> str:
    lines = ["metric,value"]
    for k, v in summary.items():
        lines.append(f"{k},{'inf' if math.isinf(v) else format(v, '.6f')}")
    return "\n".join(lines) + "\n"


def clean_accuracy(qnet: QuantizedNetwork, data) -> float:
    logits = qnet.dense_forward(data.test_x)
    return 100.0 * float(np.mean(np.argmax(logits, axis=-1) == data.test_y))
