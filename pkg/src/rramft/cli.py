"""Command line entry point: ``rramft <subcommand> ...``.

Every subcommand reads an optional ``--config`` file (flat ``key = value``)
and an optional ``--seed``; the seed falls back to ``RRAMFT_SEED`` and then 0.
Exit status is 0 on success, 2 on bad input (including an embedding that does
not fit) and 1 on anything else.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys
from pathlib import Path

from . import formats
from .config import METHODS, ConfigError, RunConfig, load_config
from .data import gaussian_clusters
from .embed import CapacityError, capacity_check, embed_layer, min_sparsity, physical_columns
from .ftol import FtConfig
from .prune import hard_prune, train_prune
from .quant import QuantConfig, distribution_stats, quantize
from .sweep import (QuantizedNetwork, SweepRow, clean_accuracy, monte_carlo, rows_to_csv,
                    run_sweep, summary_to_csv, sweep_summary)
from .xbar import FLIP_POLICIES, FaultModel, map_layer

log = logging.getLogger("rramft")


class UsageError(Exception):
    pass


def _cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _qnet(model_dir, bits: int) -> QuantizedNetwork:
    return QuantizedNetwork.from_gated(formats.load_model(model_dir), bits)


# subcommands ----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _cfg(args)
    d = cfg.data
    data = gaussian_clusters(d.dim, d.classes, d.clusters_per_class, d.train, d.test,
                             d.separation, d.noise, d.outlier_features, d.outlier_scale,
                             seed=cfg.seed)
    formats.save_dataset(args.out, data)
    print(f"dataset {args.out}: {len(data.train_y)} train, {len(data.test_y)} test, "
          f"dim {data.dim}, classes {data.classes}")
    return 0


def cmd_prune(args) -> int:
    cfg = _cfg(args)
    data = formats.load_dataset(args.data)
    net, report = train_prune(cfg.prune_config(), data)
    formats.save_model(args.out, net)
    (Path(args.out) / "report.csv").write_text(report.to_csv())
    for k, layer in enumerate(net.layers):
        print(f"layer {k}: sparsity {layer.sparsity():.4f} "
              f"({len(layer.pruned_index())}/{layer.gates.size} pruned)")
    print(f"baseline acc {100 * report.baseline_acc:.2f}  pruned acc "
          f"{100 * report.pruned_acc:.2f}  drop {report.drop_points:.2f} points")
    if not report.meets(cfg.prune_config()):
        log.warning("pruning target not met (min sparsity %.2f, max drop %.2f)",
                    cfg.prune.min_sparsity, cfg.prune.max_drop)
    return 0


def cmd_quantize(args) -> int:
    cfg = _cfg(args)
    bits = args.bits or cfg.quant.bits
    net = formats.load_model(args.model)
    layers = [quantize(layer.effective_weight(), QuantConfig(bits)) for layer in net.layers]
    formats.save_quantized(args.out, layers)
    for k in range(len(layers)):
        src = Path(args.model) / f"layer{k}_pruned.txt"
        if src.exists():
            shutil.copyfile(src, Path(args.out) / f"layer{k}_pruned.txt")
    for k, ql in enumerate(layers):
        print(f"layer {k}: {ql.shape[0]}x{ql.shape[1]} bits {ql.bits} q {ql.q:.6g}")
    return 0


def _index_overrides(items) -> dict[int, list[int]]:
    out = {}
    for item in items or ():
        k, sep, path = item.partition("=")
        if not sep or not k.isdigit():
            raise UsageError(f"--index expects LAYER=FILE, got {item!r}")
        out[int(k)] = formats.load_index(path)
    return out


def cmd_map(args) -> int:
    cfg = _cfg(args)
    T = args.candidates or cfg.ft.candidates
    flip = args.flip or cfg.ft.flip
    FtConfig(T, flip)  # validates
    layers = formats.load_quantized(args.quant)
    overrides = _index_overrides(args.index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"layers": len(layers), "candidates": T, "flip": flip,
                "embed": str(args.embed).lower()}
    for k, ql in enumerate(layers):
        if k in overrides:
            index = overrides[k]
        else:
            f = Path(args.quant) / f"layer{k}_pruned.txt"
            index = formats.load_index(f) if f.exists() else []
        xl = map_layer(ql, flip)
        rows, cols = ql.shape
        manifest[f"layer.{k}.rows"] = rows
        manifest[f"layer.{k}.cols"] = cols
        manifest[f"layer.{k}.bits"] = ql.bits
        manifest[f"layer.{k}.flipped"] = ",".join(str(int(pl.flipped)) for pl in xl.planes)
        for p, plane in enumerate(xl.planes):
            formats.save_tensor(out / f"layer{k}_plane{p}_pos.txt", plane.pos)
            formats.save_tensor(out / f"layer{k}_plane{p}_neg.txt", plane.neg)
        if args.embed and T > 1 and index:
            emb = embed_layer(xl, T, index)   # raises CapacityError
            emb.pmap.save(out / f"layer{k}_placement.txt")
            manifest[f"layer.{k}.pruned"] = len(index)
            manifest[f"layer.{k}.physical_cols"] = physical_columns(emb)
            print(f"layer {k}: {rows}x{cols}, {len(index)} pruned, "
                  f"{len(emb.pmap.assignments)} MSB copies embedded")
        else:
            extra = (T - 1) * cols
            manifest[f"layer.{k}.physical_cols"] = cols * ql.bits + extra
            print(f"layer {k}: {rows}x{cols}, {T - 1} separate MSB copies ({extra} extra columns)")
            if args.embed and T > 1:
                log.warning("layer %d has no pruned columns; keeping separate copies", k)
    (out / "crossbar.cfg").write_text(formats.dumps_kv(manifest))
    return 0


def cmd_capacity(args) -> int:
    r = capacity_check(args.bits, args.candidates, args.sparsity, args.cols)
    print(f"free_slots {r.free_slots} needed {r.needed} "
          f"{'feasible' if r.feasible else f'infeasible deficit {r.deficit}'}")
    print(f"boundary sparsity {min_sparsity(args.bits, args.candidates):.6f}")
    return 0 if r.feasible else 2


def cmd_stats(args) -> int:
    print("name max_abs large_count total")
    for path in args.paths:
        p = Path(path)
        if p.is_dir():
            net = formats.load_model(p)
            mats = [(f"{p.name}/layer{k}", layer.effective_weight())
                    for k, layer in enumerate(net.layers)]
        else:
            mats = [(p.name, formats.load_tensor(p))]
        for name, W in mats:
            s = distribution_stats(W)
            print(f"{name} {s.max_abs:.6g} {s.large_count} {s.total_count}")
    return 0


def _sweep_cfg(args, cfg: RunConfig) -> RunConfig:
    sw = cfg.sweep
    changes = {}
    if getattr(args, "trials", None):
        changes["trials"] = args.trials
    if getattr(args, "methods", None):
        changes["methods"] = tuple(args.methods.split(","))
    if getattr(args, "rates", None):
        changes["rates"] = tuple(float(r) for r in args.rates.split(","))
    return dataclasses.replace(cfg, sweep=dataclasses.replace(sw, **changes)) if changes else cfg


def cmd_simulate(args) -> int:
    cfg = _sweep_cfg(args, _cfg(args))
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; choose from {METHODS}")
    FaultModel(args.rate)   # validates the rate
    data = formats.load_dataset(args.data)
    qnet = _qnet(args.model, cfg.quant.bits)
    mean, var = monte_carlo(qnet, data, args.rate, args.method, cfg.sweep.trials, cfg.seed, cfg)
    row = SweepRow(args.rate, args.method, mean, var, cfg.sweep.trials, cfg.seed)
    _write(args.out, rows_to_csv([row]))
    return 0


def cmd_sweep(args) -> int:
    cfg = _sweep_cfg(args, _cfg(args))
    data = formats.load_dataset(args.data)
    qnet = _qnet(args.model, cfg.quant.bits)
    rows = run_sweep(qnet, data, cfg)
    _write(args.out, rows_to_csv(rows))
    if args.summary:
        _write(args.summary, summary_to_csv(sweep_summary(rows, clean_accuracy(qnet, data),
                                                          cfg.sweep)))
    return 0


def cmd_subnet(args) -> int:
    net = formats.load_model(args.model)
    sub, index, sparsity = hard_prune(net)
    for k, (idx, s) in enumerate(zip(index, sparsity)):
        print(f"layer {k}: kept {sub.weights[k].shape[1]} sparsity {s:.4f} pruned {len(idx)}")
    return 0


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="overrides the config and RRAMFT_SEED")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="rramft", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="write the synthetic cluster dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("prune", parents=[common], help="train with gates, save the pruned model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("quantize", parents=[common], help="model to sign and bit-plane files")
    p.add_argument("--model", required=True)
    p.add_argument("--bits", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("map", parents=[common], help="crossbar arrays and optional MSB embedding plan")
    p.add_argument("--quant", required=True, help="directory written by quantize")
    p.add_argument("--out", required=True)
    p.add_argument("--embed", action="store_true", help="place MSB copies in pruned columns")
    p.add_argument("--candidates", type=int)
    p.add_argument("--flip", choices=FLIP_POLICIES)
    p.add_argument("--index", action="append", metavar="LAYER=FILE",
                   help="pruned column index file for a layer (repeatable)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("capacity", parents=[common], help="embedding capacity for one layer shape")
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--candidates", type=int, default=3)
    p.add_argument("--sparsity", type=float, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("stats", parents=[common], help="max |w| and count of large weights")
    p.add_argument("paths", nargs="+", help="tensor files or model directories")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("subnet", parents=[common], help="summarize the hard-pruned sub-network")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_subnet)

    for name, func, helptext in (("simulate", cmd_simulate, "Monte Carlo at one failure rate"),
                                 ("sweep", cmd_sweep, "Monte Carlo over the rate grid")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--trials", type=int)
        p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
        if name == "simulate":
            p.add_argument("--rate", type=float, required=True)
            p.add_argument("--method", default="voting")
        else:
            p.add_argument("--methods", help="comma separated")
            p.add_argument("--rates", help="comma separated")
            p.add_argument("--summary", help="CSV of clean accuracy and tolerated rates")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, UsageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
