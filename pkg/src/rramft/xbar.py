"""Bit-plane crossbar arrays with stuck-at faults.

Orientation: inputs drive wordlines (rows), outputs are read on bitlines
(columns), so an array with cells ``B`` computes ``y[j] = sum_i x[i] * B[i, j]``.
Each bit plane of a quantized layer is stored as a positive and a negative
array. A flipped plane stores ``1 - bit`` in both arrays and the readout is
corrected to ``sum(x) - raw``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .quant import QuantizedLayer

FLIP_POLICIES = ("none", "msb_only", "all")

# SA0 : SA1 occurrence ratio 1.75 : 9.04
DEFAULT_SA1_SHARE = 9.04 / (9.04 + 1.75)


@dataclass(frozen=True)
class FaultModel:
    rate: float = 0.0
    sa1_share: float = DEFAULT_SA1_SHARE
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"fault rate must lie in [0, 1], got {self.rate}")
        if not 0.0 <= self.sa1_share <= 1.0:
            raise ValueError(f"sa1_share must lie in [0, 1], got {self.sa1_share}")


@dataclass(frozen=True)
class FaultMap:
    """Stuck cells of one physical array, sorted in row-major order."""

    shape: tuple
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    @classmethod
    def empty(cls, shape) -> FaultMap:
        return cls(tuple(shape))

    @classmethod
    def from_cells(cls, shape, cells) -> FaultMap:
        """Build from an iterable of ``(row, col, stuck_value)``."""
        seen = {}
        for r, c, v in cells:
            if not (0 <= r < shape[0] and 0 <= c < shape[1]):
                raise IndexError(f"fault ({r}, {c}) outside array of shape {shape}")
            if v not in (0, 1):
                raise ValueError(f"stuck value must be 0 or 1, got {v}")
            if (r, c) in seen:
                raise ValueError(f"duplicate fault at ({r}, {c})")
            seen[(r, c)] = v
        keys = sorted(seen)
        rows = np.array([k[0] for k in keys], dtype=np.int64)
        cols = np.array([k[1] for k in keys], dtype=np.int64)
        vals = np.array([seen[k] for k in keys], dtype=np.uint8)
        return cls(tuple(shape), rows, cols, vals)

    def __len__(self):
        return len(self.rows)

    def cells(self) -> list[tuple[int, int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def count(self, value: int) -> int:
        return int(np.count_nonzero(self.values == value))

    def apply(self, stored: np.ndarray) -> np.ndarray:
        """Effective cell values seen by a read of ``stored``."""
        if stored.shape != self.shape:
            raise ValueError(f"fault map shape {self.shape} != array shape {stored.shape}")
        if len(self.rows) == 0:
            return stored
        eff = stored.copy()
        eff[self.rows, self.cols] = self.values
        return eff


def fault_rng(seed: int, stream_id) -> np.random.Generator:
    """Independent generator for one physical array.

    ``stream_id`` is a tuple of non-negative ints; distinct ids spawn
    statistically independent streams from the same seed.
    """
    if isinstance(stream_id, int):
        stream_id = (stream_id,)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.PCG64(ss))


def inject_saf(shape, model: FaultModel, stream_id) -> FaultMap:
    """Sample the stuck cells of one array.

    Two uniforms are drawn per cell in row-major order regardless of the rate,
    so for a fixed (seed, stream_id) the faulty set grows monotonically with
    ``model.rate`` and each cell keeps its stuck value across rates.
    """
    shape = tuple(shape)
    if model.rate == 0.0:
        return FaultMap.empty(shape)
    rng = fault_rng(model.seed, stream_id)
    occur = rng.random(shape)
    kind = rng.random(shape)
    rows, cols = np.nonzero(occur < model.rate)
    values = (kind[rows, cols] < model.sa1_share).astype(np.uint8)
    return FaultMap(shape, rows.astype(np.int64), cols.astype(np.int64), values)


@dataclass(frozen=True)
class CrossbarPlane:
    pos: np.ndarray     # stored cells, uint8 (in_dim x out_dim)
    neg: np.ndarray
    flipped: bool
    power: int
    pos_faults: FaultMap = None
    neg_faults: FaultMap = None

    def __post_init__(self):
        if self.pos.shape != self.neg.shape or self.pos.ndim != 2:
            raise ValueError("pos/neg arrays must be 2-D with equal shapes")
        if self.pos_faults is None:
            object.__setattr__(self, "pos_faults", FaultMap.empty(self.pos.shape))
        if self.neg_faults is None:
            object.__setattr__(self, "neg_faults", FaultMap.empty(self.neg.shape))

    @property
    def shape(self) -> tuple:
        return self.pos.shape

    def logical_bits(self) -> tuple[np.ndarray, np.ndarray]:
        """Sign-split bits the plane encodes, ignoring faults."""
        if self.flipped:
            return 1 - self.pos, 1 - self.neg
        return self.pos, self.neg

    def effective(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pos_faults.apply(self.pos), self.neg_faults.apply(self.neg)

    def with_faults(self, pos_faults: FaultMap, neg_faults: FaultMap) -> CrossbarPlane:
        return replace(self, pos_faults=pos_faults, neg_faults=neg_faults)


@dataclass(frozen=True)
class CrossbarLayer:
    q: float
    planes: list    # CrossbarPlane, MSB first

    def __post_init__(self):
        powers = [p.power for p in self.planes]
        if powers != list(range(len(powers) - 1, -1, -1)):
            raise ValueError(f"plane powers must be n-1..0, got {powers}")

    @property
    def bits(self) -> int:
        return len(self.planes)

    @property
    def shape(self) -> tuple:
        return self.planes[0].shape


def _flips(policy: str, bits: int) -> list[bool]:
    if policy not in FLIP_POLICIES:
        raise ValueError(f"unknown flip policy {policy!r}; expected one of {FLIP_POLICIES}")
    if policy == "none":
        return [False] * bits
    if policy == "all":
        return [True] * bits
    return [True] + [False] * (bits - 1)


def map_layer(layer: QuantizedLayer, flip_policy: str = "msb_only") -> CrossbarLayer:
    if layer.sign.ndim != 2:
        raise ValueError("crossbar mapping needs a 2-D (in_dim x out_dim) layer")
    positive = (layer.sign > 0).astype(np.uint8)
    negative = 1 - positive
    planes = []
    for plane, power, flip in zip(layer.planes, layer.powers, _flips(flip_policy, layer.bits)):
        pos = plane * positive
        neg = plane * negative
        if flip:
            pos, neg = 1 - pos, 1 - neg
        planes.append(CrossbarPlane(pos.astype(np.uint8), neg.astype(np.uint8), flip, power))
    return CrossbarLayer(layer.q, planes)


def effective_cell(array: np.ndarray, faults: FaultMap, i: int, j: int) -> int:
    rows, cols = array.shape
    if not (0 <= i < rows and 0 <= j < cols):
        raise IndexError(f"cell ({i}, {j}) outside array of shape {array.shape}")
    hit = np.nonzero((faults.rows == i) & (faults.cols == j))[0]
    if len(hit):
        return int(faults.values[hit[0]])
    return int(array[i, j])


def _check_input(x, in_dim) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != in_dim:
        raise ValueError(f"input length {x.shape[-1]} != crossbar rows {in_dim}")
    return x


def raw_outputs(plane: CrossbarPlane, x) -> tuple[np.ndarray, np.ndarray]:
    """Uncorrected bitline sums of the positive and negative arrays."""
    x = _check_input(x, plane.shape[0])
    pos, neg = plane.effective()
    return x @ pos, x @ neg


def read_cells(cells: np.ndarray, flipped: bool, x: np.ndarray) -> np.ndarray:
    """Corrected readout of one array: ``x @ cells``, or ``sum(x) - x @ cells`` if flipped.

    The flipped correction is evaluated as ``x @ (1 - cells)``; it is the same
    quantity and keeps fault-free flipped and unflipped readouts bit-identical.
    """
    if flipped:
        return x @ (1.0 - cells)
    return x @ cells.astype(np.float64)


def plane_partial(plane: CrossbarPlane, x) -> np.ndarray:
    """Signed partial sum of one bit plane (positive minus negative array).

    ``x`` may be a single vector or a batch with inputs on the last axis.
    """
    x = _check_input(x, plane.shape[0])
    pos, neg = plane.effective()
    return read_cells(pos, plane.flipped, x) - read_cells(neg, plane.flipped, x)


def layer_matvec(layer: CrossbarLayer, x) -> np.ndarray:
    x = _check_input(x, layer.shape[0])
    acc = None
    for plane in layer.planes:
        part = float(1 << plane.power) * plane_partial(plane, x)
        acc = part if acc is None else acc + part
    return layer.q * acc


def inject_layer(layer: CrossbarLayer, model: FaultModel, prefix=()) -> CrossbarLayer:
    """Fault every array of ``layer``; plane p, sign s uses stream ``prefix + (p, 0, s)``."""
    prefix = tuple(prefix)
    planes = []
    for p, plane in enumerate(layer.planes):
        pf = inject_saf(plane.shape, model, prefix + (p, 0, 0))
        nf = inject_saf(plane.shape, model, prefix + (p, 0, 1))
        planes.append(plane.with_faults(pf, nf))
    return CrossbarLayer(layer.q, planes)
