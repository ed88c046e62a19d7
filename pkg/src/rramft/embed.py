"""Storing duplicate MSB columns inside columns freed by structured pruning.

Columns of the extra MSB copies that carry weights are collected in order
(copy ascending, then column ascending) and written into the pruned columns of
the layer's own planes (MSB_1 first, then LSB_{n-1} ... LSB_1; ascending column
within a plane). The positive and negative arrays share one placement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ftol import FtConfig, FtLayer, combine, vote_median
from .xbar import (
    CrossbarLayer,
    CrossbarPlane,
    FaultMap,
    FaultModel,
    inject_layer,
    map_layer,
    read_cells,
)


@dataclass(frozen=True)
class CapacityReport:
    free_slots: int
    needed: int

    @property
    def feasible(self) -> bool:
        return self.needed <= self.free_slots

    @property
    def deficit(self) -> int:
        return max(0, self.needed - self.free_slots)


class CapacityError(ValueError):
    def __init__(self, report: CapacityReport, where: str = ""):
        self.report = report
        prefix = f"{where}: " if where else ""
        super().__init__(
            f"{prefix}embedding needs {report.needed} column slots but only "
            f"{report.free_slots} are free (deficit {report.deficit})"
        )


def pruned_count(sparsity: float, cols: int) -> int:
    # half-up rounding; Python's round() is half-to-even
    return int(math.floor(sparsity * cols + 0.5))


def capacity_for(n_planes: int, candidates: int, cols: int, n_pruned: int) -> CapacityReport:
    return CapacityReport(n_planes * n_pruned, (candidates - 1) * (cols - n_pruned))


def capacity_check(n_planes: int, candidates: int, sparsity: float, cols: int) -> CapacityReport:
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {sparsity}")
    if cols < 1:
        raise ValueError("need at least one column")
    return capacity_for(n_planes, candidates, cols, pruned_count(sparsity, cols))


def min_sparsity(n_planes: int, candidates: int) -> float:
    """Smallest column sparsity at which the duplicates fit: (T-1)/(n+T-1)."""
    return (candidates - 1) / (n_planes + candidates - 1)


@dataclass(frozen=True)
class PlacementMap:
    n_planes: int
    candidates: int
    cols: int
    index: tuple                                  # pruned columns, ascending
    assignments: list = field(default_factory=list)  # (k, j, p, j_host)

    def sources(self) -> list[tuple[int, int]]:
        return [(k, j) for k, j, _, _ in self.assignments]

    def slots(self) -> list[tuple[int, int]]:
        return [(p, h) for _, _, p, h in self.assignments]

    def validate(self) -> None:
        pruned = set(self.index)
        slots = self.slots()
        if len(set(slots)) != len(slots):
            raise ValueError("host slot used twice")
        for p, h in slots:
            if h not in pruned or not 0 <= p < self.n_planes:
                raise ValueError(f"host slot ({p}, {h}) is not a pruned column")
        expected = [(k, j) for k in range(2, self.candidates + 1)
                    for j in range(self.cols) if j not in pruned]
        if self.sources() != expected:
            raise ValueError("placement sources do not cover the unpruned duplicate columns")

    def dumps(self) -> str:
        lines = [f"# placement {self.n_planes} {self.candidates} {self.cols}",
                 "# index " + " ".join(str(j) for j in self.index)]
        lines += [f"{k} {j} {p} {h}" for k, j, p, h in self.assignments]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> PlacementMap:
        lines = text.splitlines()
        head = lines[0].split()
        if head[:2] != ["#", "placement"] or len(head) != 5:
            raise ValueError(f"bad placement header: {lines[0]!r}")
        n, T, C = (int(v) for v in head[2:])
        idx = lines[1].split()
        if idx[:2] != ["#", "index"]:
            raise ValueError(f"bad placement index line: {lines[1]!r}")
        index = tuple(int(v) for v in idx[2:])
        rows = [tuple(int(v) for v in ln.split()) for ln in lines[2:] if ln.strip()]
        pm = cls(n, T, C, index, rows)
        pm.validate()
        return pm

    @classmethod
    def load(cls, path) -> PlacementMap:
        return cls.loads(Path(path).read_text())


def plan_embedding(n_planes: int, candidates: int, cols: int, index) -> PlacementMap:
    index = tuple(sorted({int(j) for j in index}))
    if any(not 0 <= j < cols for j in index):
        raise ValueError("pruned index outside the column range")
    report = capacity_for(n_planes, candidates, cols, len(index))
    if not report.feasible:
        raise CapacityError(report)
    pruned = set(index)
    sources = [(k, j) for k in range(2, candidates + 1) for j in range(cols) if j not in pruned]
    slots = [(p, h) for p in range(n_planes) for h in index]
    assignments = [(k, j, p, h) for (k, j), (p, h) in zip(sources, slots)]
    return PlacementMap(n_planes, candidates, cols, index, assignments)


def distribute(host_arrays, duplicate_arrays, pmap: PlacementMap) -> list[np.ndarray]:
    """Write duplicate columns into copies of the host arrays.

    ``host_arrays`` holds one array per host plane; ``duplicate_arrays`` one per
    extra copy (k = 2..T). Returns the new host arrays.
    """
    out = [np.array(a, copy=True) for a in host_arrays]
    for k, j, p, h in pmap.assignments:
        out[p][:, h] = duplicate_arrays[k - 2][:, j]
    return out


def gather_embedded(host_arrays, pmap: PlacementMap, fill: int = 0) -> list[np.ndarray]:
    """Rebuild the extra copies from host slots; pruned columns are set to ``fill``."""
    if len(host_arrays) != pmap.n_planes:
        raise ValueError(f"expected {pmap.n_planes} host arrays, got {len(host_arrays)}")
    rows = host_arrays[0].shape[0]
    if any(a.shape != (rows, pmap.cols) for a in host_arrays):
        raise ValueError("host array shape does not match the placement map")
    dups = [np.full((rows, pmap.cols), fill, dtype=host_arrays[0].dtype)
            for _ in range(pmap.candidates - 1)]
    for k, j, p, h in pmap.assignments:
        dups[k - 2][:, j] = host_arrays[p][:, h]
    return dups


@dataclass(frozen=True)
class EmbeddedLayer:
    """Host planes whose pruned columns carry the extra MSB copies."""

    host: CrossbarLayer
    pmap: PlacementMap
    dup_flipped: bool

    @property
    def shape(self) -> tuple:
        return self.host.shape

    @property
    def candidates(self) -> int:
        return self.pmap.candidates

    def forward(self, x):
        return infer_layer_embedded(self, x)


def embed_layer(layer: CrossbarLayer, candidates: int, index) -> EmbeddedLayer:
    """Place T-1 copies of ``layer``'s MSB plane into its pruned columns.

    ``layer`` must be fault free and have all-zero logical bits in every
    pruned column of every plane.
    """
    rows, cols = layer.shape
    pmap = plan_embedding(layer.bits, candidates, cols, index)
    idx = list(pmap.index)
    for plane in layer.planes:
        pos, neg = plane.logical_bits()
        if idx and (pos[:, idx].any() or neg[:, idx].any()):
            raise ValueError("pruned columns of the host planes are not all zero")
    msb = layer.planes[0]
    dups = [msb] * (candidates - 1)
    new_pos = distribute([pl.pos for pl in layer.planes], [d.pos for d in dups], pmap)
    new_neg = distribute([pl.neg for pl in layer.planes], [d.neg for d in dups], pmap)
    planes = [CrossbarPlane(pp, nn, pl.flipped, pl.power)
              for pl, pp, nn in zip(layer.planes, new_pos, new_neg)]
    return EmbeddedLayer(CrossbarLayer(layer.q, planes), pmap, msb.flipped)


def inject_embedded(emb: EmbeddedLayer, model: FaultModel, prefix=()) -> EmbeddedLayer:
    """Fault the host arrays; the embedded copies inherit whatever their slots get."""
    return EmbeddedLayer(inject_layer(emb.host, model, prefix), emb.pmap, emb.dup_flipped)


def build_embedded_layer(qlayer, cfg: FtConfig, index, prefix=()) -> EmbeddedLayer:
    emb = embed_layer(map_layer(qlayer, cfg.flip), cfg.candidates, index)
    return inject_embedded(emb, cfg.fault, prefix)


def _as_ft(emb: EmbeddedLayer) -> FtLayer:
    return FtLayer(emb.host, [], emb.pmap.index)


def infer_layer_embedded(emb: EmbeddedLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != emb.shape[0]:
        raise ValueError(f"input length {x.shape[-1]} != layer rows {emb.shape[0]}")
    effective = [pl.effective() for pl in emb.host.planes]
    dup_pos = gather_embedded([e[0] for e in effective], emb.pmap)
    dup_neg = gather_embedded([e[1] for e in effective], emb.pmap)
    msb = emb.host.planes[0]
    scale = float(1 << msb.power)
    pos0, neg0 = effective[0]
    cands = [scale * (read_cells(pos0, msb.flipped, x) - read_cells(neg0, msb.flipped, x))]
    for pos, neg in zip(dup_pos, dup_neg):
        cands.append(scale * (read_cells(pos, emb.dup_flipped, x) - read_cells(neg, emb.dup_flipped, x)))
    return combine(_as_ft(emb), vote_median(cands), x)


def _translate(host_faults: list[FaultMap], pmap: PlacementMap, rows: int) -> list[FaultMap]:
    per_copy = [[] for _ in range(pmap.candidates - 1)]
    slot_to_src = {(p, h): (k, j) for k, j, p, h in pmap.assignments}
    for p, fm in enumerate(host_faults):
        for i, h, v in fm.cells():
            src = slot_to_src.get((p, h))
            if src is not None:
                per_copy[src[0] - 2].append((i, src[1], v))
    return [FaultMap.from_cells((rows, pmap.cols), cells) for cells in per_copy]


def translate_to_ft(emb: EmbeddedLayer) -> FtLayer:
    """Equivalent non-embedded layer whose extra copies carry the host faults
    found at their embedding slots."""
    rows, _ = emb.shape
    planes = emb.host.planes
    dup_pos = gather_embedded([pl.pos for pl in planes], emb.pmap)
    dup_neg = gather_embedded([pl.neg for pl in planes], emb.pmap)
    pf = _translate([pl.pos_faults for pl in planes], emb.pmap, rows)
    nf = _translate([pl.neg_faults for pl in planes], emb.pmap, rows)
    msb = planes[0]
    dups = [CrossbarPlane(p, n, emb.dup_flipped, msb.power, a, b)
            for p, n, a, b in zip(dup_pos, dup_neg, pf, nf)]
    return FtLayer(emb.host, dups, emb.pmap.index)


def physical_columns(layer) -> int:
    """Bitline columns used per sign array."""
    if isinstance(layer, EmbeddedLayer):
        return layer.host.bits * layer.host.shape[1]
    if isinstance(layer, FtLayer):
        return (layer.base.bits + len(layer.duplicates)) * layer.shape[1]
    return layer.bits * layer.shape[1]
