"""Equal-distance n-bit weight quantization and bit-plane decomposition.

A weight matrix is split into a sign matrix and ``n`` binary magnitude planes
ordered MSB first, so that::

    W_q = sign * q * (planes[0] * 2**(n-1) + planes[1] * 2**(n-2) + ... + planes[n-1])

The step is ``q = max|W| / (2**n - 1)``, which makes the MSB bit of an entry
equal to one exactly when its magnitude is (to within half a step) above half
of the layer maximum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 8

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 2:
            raise ValueError(f"bits must be an integer >= 2, got {self.bits!r}")

    @property
    def max_level(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True)
class QuantizedLayer:
    q: float
    sign: np.ndarray    # int8, values in {-1, +1}
    planes: np.ndarray  # uint8, shape (n, *dims), MSB first

    @property
    def bits(self) -> int:
        return self.planes.shape[0]

    @property
    def shape(self) -> tuple:
        return self.sign.shape

    @property
    def powers(self) -> list[int]:
        """Exponent of each plane, MSB first: n-1, ..., 0."""
        return list(range(self.bits - 1, -1, -1))

    def levels(self) -> np.ndarray:
        """Integer magnitudes m reassembled from the planes."""
        m = np.zeros(self.shape, dtype=np.int64)
        for plane in self.planes:
            m = (m << 1) | plane
        return m


@dataclass(frozen=True)
class WeightStats:
    max_abs: float
    large_count: int
    total_count: int

    @property
    def large_fraction(self) -> float:
        return self.large_count / self.total_count if self.total_count else 0.0


def _as_matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.size == 0:
        raise ValueError("cannot quantize an empty weight matrix")
    return W


def _round_half_away(a: np.ndarray) -> np.ndarray:
    # a >= 0 here; floor(a + 0.5) misrounds just below .5, so compare the fraction
    base = np.floor(a)
    return base + ((a - base) >= 0.5)


def quantize(W, cfg: QuantConfig | int = 8) -> QuantizedLayer:
    if not isinstance(cfg, QuantConfig):
        cfg = QuantConfig(int(cfg))
    W = _as_matrix(W)
    n = cfg.bits
    sign = np.where(W >= 0, 1, -1).astype(np.int8)
    max_abs = float(np.max(np.abs(W)))
    if max_abs == 0.0:
        planes = np.zeros((n,) + W.shape, dtype=np.uint8)
        return QuantizedLayer(0.0, sign, planes)

    q = max_abs / cfg.max_level
    m = _round_half_away(np.abs(W) / q)
    m = np.clip(m, 0, cfg.max_level).astype(np.int64)
    planes = np.stack([(m >> p) & 1 for p in range(n - 1, -1, -1)]).astype(np.uint8)
    return QuantizedLayer(q, sign, planes)


def reconstruct(layer: QuantizedLayer) -> np.ndarray:
    return layer.sign * (layer.q * layer.levels().astype(np.float64))


def quant_error(W, cfg: QuantConfig | int = 8) -> float:
    """Largest absolute deviation introduced by quantization (<= q/2)."""
    W = _as_matrix(W)
    return float(np.max(np.abs(W - reconstruct(quantize(W, cfg)))))


def distribution_stats(W) -> WeightStats:
    """Count of entries whose magnitude exceeds half the layer maximum."""
    A = np.abs(_as_matrix(W))
    max_abs = float(A.max())
    large = int(np.count_nonzero(A > max_abs / 2))
    return WeightStats(max_abs, large, int(A.size))
