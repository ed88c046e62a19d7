"""Zero-space fault tolerance for ReRAM crossbar inference.

Structured pruning frees whole crossbar columns; quantized weights are split
into bit planes; the most significant plane is duplicated (stored bit-flipped)
into the freed columns and read out through median voting, so stuck-at faults
in that plane are outvoted at no extra area.
"""
from .quant import QuantConfig, QuantizedLayer, distribution_stats, quantize, reconstruct
from .xbar import FaultMap, FaultModel, inject_saf, layer_matvec, map_layer
from .ftol import FtConfig, FtLayer, build_ft_layer, duplicate_msb, infer_layer_ft, vote_median
from .embed import (CapacityError, CapacityReport, PlacementMap, capacity_check, embed_layer,
                    infer_layer_embedded, plan_embedding)
from .prune import GatedNetwork, PruneConfig, PruneReport, hard_prune, train_prune
from .sweep import QuantizedNetwork, SweepRow, monte_carlo, run_sweep

__version__ = "0.1.0"
