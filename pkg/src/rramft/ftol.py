"""MSB duplication and median voting over candidate partial sums."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quant import QuantizedLayer
from .xbar import (
    CrossbarLayer,
    CrossbarPlane,
    FaultModel,
    FLIP_POLICIES,
    inject_saf,
    map_layer,
    plane_partial,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FtConfig:
    candidates: int = 3
    flip: str = "msb_only"
    fault: FaultModel = field(default_factory=FaultModel)

    def __post_init__(self):
        if self.candidates < 1 or self.candidates % 2 == 0:
            raise ConfigError(f"number of candidates must be odd and >= 1, got {self.candidates}")
        if self.flip not in FLIP_POLICIES:
            raise ConfigError(f"unknown flip policy {self.flip!r}")


@dataclass(frozen=True)
class FtLayer:
    """A crossbar layer plus T-1 extra physical copies of its MSB plane.

    ``pruned`` lists output columns that carry no weights; their logical
    output is forced to zero.
    """

    base: CrossbarLayer
    duplicates: list = field(default_factory=list)   # CrossbarPlane, MSB_2..MSB_T
    pruned: tuple = ()

    @property
    def candidates(self) -> int:
        return 1 + len(self.duplicates)

    @property
    def msb_planes(self) -> list[CrossbarPlane]:
        return [self.base.planes[0], *self.duplicates]

    @property
    def shape(self) -> tuple:
        return self.base.shape

    def forward(self, x):
        return infer_layer_ft(self, x)


def msb_stream(prefix, plane: int, copy: int, sign: int) -> tuple:
    return tuple(prefix) + (plane, copy, sign)


def duplicate_msb(layer: CrossbarLayer, cfg: FtConfig, prefix=(), pruned=()) -> FtLayer:
    """Copy the MSB plane T-1 times and give every physical array its own faults.

    ``layer`` holds the stored (possibly flipped) cells; any faults already on
    it are replaced. Array (plane p, copy k, sign s) draws from stream
    ``prefix + (p, k, s)``: copy 0 is the original, so the original arrays see
    the same faults whatever T is.
    """
    if cfg.candidates % 2 == 0:
        raise ConfigError("number of candidates must be odd")
    model = cfg.fault

    def faulted(plane, p, k):
        return plane.with_faults(
            inject_saf(plane.shape, model, msb_stream(prefix, p, k, 0)),
            inject_saf(plane.shape, model, msb_stream(prefix, p, k, 1)),
        )

    base = CrossbarLayer(layer.q, [faulted(pl, p, 0) for p, pl in enumerate(layer.planes)])
    msb = layer.planes[0]
    dups = [faulted(msb, 0, k) for k in range(1, cfg.candidates)]
    return FtLayer(base, dups, tuple(sorted(int(j) for j in pruned)))


def build_ft_layer(qlayer: QuantizedLayer, cfg: FtConfig, prefix=(), pruned=()) -> FtLayer:
    return duplicate_msb(map_layer(qlayer, cfg.flip), cfg, prefix, pruned)


def vote_median(candidates) -> np.ndarray:
    """Elementwise median of an odd number of candidate outputs."""
    if len(candidates) == 0:
        raise ValueError("median vote over an empty candidate list")
    if len(candidates) % 2 == 0:
        raise ValueError("median vote needs an odd number of candidates")
    stacked = np.stack([np.asarray(c, dtype=np.float64) for c in candidates])
    if len(candidates) == 1:
        return stacked[0]
    return np.sort(stacked, axis=0)[len(candidates) // 2]


def msb_candidates(ft: FtLayer, x) -> list[np.ndarray]:
    """Per-copy MSB partial sums, each scaled by 2**(n-1)."""
    scale = float(1 << ft.base.planes[0].power)
    return [scale * plane_partial(plane, x) for plane in ft.msb_planes]


def combine(ft: FtLayer, voted_msb: np.ndarray, x) -> np.ndarray:
    acc = voted_msb
    for plane in ft.base.planes[1:]:
        acc = acc + float(1 << plane.power) * plane_partial(plane, x)
    out = ft.base.q * acc
    if ft.pruned:
        out[..., list(ft.pruned)] = 0.0
    return out


def infer_layer_ft(ft: FtLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != ft.shape[0]:
        raise ValueError(f"input length {x.shape[-1]} != layer rows {ft.shape[0]}")
    return combine(ft, vote_median(msb_candidates(ft, x)), x)


def relu(z):
    return np.maximum(z, 0.0)


def identity(z):
    return z


@dataclass(frozen=True)
class FtNetworkLayer:
    layer: object          # FtLayer, EmbeddedLayer: anything with shape and forward(x)
    bias: np.ndarray
    activation: object = relu


def infer_network_ft(layers, x) -> np.ndarray:
    """Chain fault-tolerant layers: ``act(layer.forward(h) + bias)``."""
    h = np.asarray(x, dtype=np.float64)
    for spec in layers:
        if h.shape[-1] != spec.layer.shape[0]:
            raise ValueError(f"activation width {h.shape[-1]} != layer rows {spec.layer.shape[0]}")
        h = spec.activation(spec.layer.forward(h) + spec.bias)
    return h
