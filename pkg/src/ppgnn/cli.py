"""``ppgnn`` command line: gen-synth, preprocess, train, plan, bench-loader.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import re
import sys

from .errors import ConfigError, DataError

log = logging.getLogger("ppgnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

_UNITS = {"": 1, "B": 1, "K": 1e3, "KB": 1e3, "M": 1e6, "MB": 1e6, "G": 1e9, "GB": 1e9,
          "T": 1e12, "TB": 1e12, "KIB": 2**10, "MIB": 2**20, "GIB": 2**30, "TIB": 2**40}


def parse_bytes(text: str) -> int:
    """Parse ``"4G"``, ``"380GB"``, ``"1.6TB"`` or a plain integer into bytes."""
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*([A-Za-z]*)\s*", str(text))
    if not m or m.group(2).upper() not in _UNITS:
        raise argparse.ArgumentTypeError(f"not a byte size: {text!r}")
    return int(round(float(m.group(1)) * _UNITS[m.group(2).upper()]))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _print_json(obj):
    print(json.dumps(obj, indent=2, default=str))


def cmd_gen_synth(args):
    from .dataset import SynthSpec, gen_synth

    spec = SynthSpec(n=args.n, classes=args.classes, features=args.features, p=args.p, q=args.q,
                     signal=args.signal, noise=args.noise, seed=args.seed)
    ds = gen_synth(spec, args.out)
    _print_json({"dataset": str(ds.path), **ds.meta})


def cmd_preprocess(args):
    from .dataset import preprocess

    summary = preprocess(args.dataset, args.hops, args.norm, not args.no_self_loops, args.chunk_rows)
    _print_json(summary)


def _load_train_config(args):
    from .config import load_config

    cfg = load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("dataset", "log", "seed", "checkpoint")
                 if getattr(args, k, None) is not None}
    cfg = dataclasses.replace(cfg, **overrides)
    if cfg.dataset is None:
        raise ConfigError("no dataset given (config key `dataset` or --dataset)")
    return cfg.validate()


def cmd_train(args):
    from .dataset import load_prepared
    from .models import save_checkpoint
    from .trainer import train_run

    cfg = _load_train_config(args)
    data = load_prepared(cfg.dataset, in_memory=cfg.tier != "storage")
    try:
        result = train_run(cfg, data)
    finally:
        data.close()
    if cfg.checkpoint:
        save_checkpoint(result.model, cfg.checkpoint)
    _print_json({"config": cfg.to_dict(), **result.summary()})


def cmd_plan(args):
    from .config import load_config, save_config
    from .dataset import load_prepared
    from .planner import HardwareBudget, MemoryProbe, detect_bulk_bytes, estimate_footprint, plan, probe_peak_memory
    from .trainer import TrainConfig

    cfg = load_config(args.config) if args.config else TrainConfig()
    dataset = args.dataset or cfg.dataset
    if dataset is None:
        raise ConfigError("no dataset given (config key `dataset` or --dataset)")
    bulk = args.bulk_bytes
    if bulk is None:
        bulk = detect_bulk_bytes()
        if bulk is None:
            raise ConfigError("could not detect bulk memory size; pass --bulk-bytes")
    budget = HardwareBudget(args.fast_bytes, bulk, str(dataset))

    data = load_prepared(dataset, in_memory=False)
    try:
        hops = min(cfg.hops, data.num_hops)
        cfg = dataclasses.replace(cfg, hops=hops)
        footprint = estimate_footprint(data.n_train, data.feature_dim, hops)
        probe = MemoryProbe(0) if args.no_probe else probe_peak_memory(cfg, data)
    finally:
        data.close()
    chosen = plan(budget, footprint, probe, args.method)
    _print_json({
        **chosen.to_dict(),
        "footprint_bytes": footprint.total_bytes,
        "probe_peak_bytes": probe.peak_bytes,
        "fast_tier_bytes": budget.fast_tier_bytes,
        "bulk_tier_bytes": budget.bulk_tier_bytes,
    })
    if args.write:
        if not args.config:
            raise ConfigError("--write needs --config")
        updated = dataclasses.replace(cfg, tier=chosen.tier.value, method=chosen.method.value,
                                      dataset=str(dataset))
        save_config(updated.validate(), args.config)


def cmd_bench_loader(args):
    from .bench import run_bench

    res = run_bench(batches=args.batches, batch_size=args.batch_size, features=args.features,
                    hops=args.hops, tier=args.tier, method=args.method, chunk_rows=args.chunk_rows,
                    inject_assemble_us=args.inject_assemble_us,
                    inject_transfer_us=args.inject_transfer_us,
                    inject_compute_us=args.inject_compute_us, seed=args.seed,
                    repeats=args.repeats)
    if args.json:
        _print_json(res)
        return
    print(f"tier={res['tier']} method={res['method']} batches={res['batches']} "
          f"(median of {res['repeats']} epochs)")
    for name in ("serial", "prefetch"):
        ph = res[name]
        print(f"{name:>9}: wall {1e3 * ph['wall_s']:9.2f} ms | assemble {1e3 * ph['assemble_s']:8.2f} ms"
              f" | transfer {1e3 * ph['transfer_s']:8.2f} ms | compute {1e3 * ph['compute_s']:8.2f} ms"
              f" | wait {1e3 * ph['wait_s']:8.2f} ms")
    print(f"  speedup: {res['speedup']:.3f}x (prefetch/serial = {res['ratio']:.3f})")
    print(f"  identical batch sequences: {res['sequences_equal']}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppgnn", description="Pre-propagation GNN training toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synth", help="generate a synthetic SBM dataset")
    g.add_argument("out")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--features", type=int, default=32)
    g.add_argument("--p", type=float, default=0.02)
    g.add_argument("--q", type=float, default=0.002)
    g.add_argument("--signal", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synth)

    pp = sub.add_parser("preprocess", help="pre-propagate features and write hop files")
    pp.add_argument("dataset")
    pp.add_argument("--hops", type=int, default=3)
    pp.add_argument("--norm", choices=["symmetric", "row"], default="symmetric")
    pp.add_argument("--no-self-loops", action="store_true")
    pp.add_argument("--chunk-rows", type=int, default=256)
    pp.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("config")
    t.add_argument("--dataset")
    t.add_argument("--log")
    t.add_argument("--seed", type=int)
    t.add_argument("--checkpoint")
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", help="choose data placement and shuffling method")
    pl.add_argument("--config")
    pl.add_argument("--dataset")
    pl.add_argument("--fast-bytes", type=parse_bytes, required=True)
    pl.add_argument("--bulk-bytes", type=parse_bytes, default=None,
                    help="bulk-tier budget (default: detected physical memory)")
    pl.add_argument("--method", choices=["RR", "CR"], default=None, help="method override")
    pl.add_argument("--no-probe", action="store_true", help="skip the peak-memory probe run")
    pl.add_argument("--write", action="store_true", help="write tier/method back into --config")
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("bench-loader", help="serial vs prefetch loader benchmark")
    b.add_argument("--batches", type=int, default=200)
    b.add_argument("--batch-size", type=int, default=64)
    b.add_argument("--features", type=int, default=32)
    b.add_argument("--hops", type=int, default=3)
    b.add_argument("--tier", choices=["resident", "staged", "storage"], default="staged")
    b.add_argument("--method", choices=["RR", "CR"], default=None)
    b.add_argument("--chunk-rows", type=int, default=None)
    b.add_argument("--inject-assemble-us", type=float, default=1000.0)
    b.add_argument("--inject-transfer-us", type=float, default=0.0)
    b.add_argument("--inject-compute-us", type=float, default=1000.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=3, help="epochs per loader; median is reported")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench_loader)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"ppgnn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"ppgnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled error", exc_info=True)
        print(f"ppgnn: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
