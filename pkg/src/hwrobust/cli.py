"""Command-line entry point: ``hwrobust {train,attack,xbar-map,sram-search,report}``."""
import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ENV_THREADS, ExperimentConfig
from .errors import HwRobustError

log = logging.getLogger("hwrobust")


def _limit_threads():
    n = os.environ.get(ENV_THREADS)
    if n:
        from threadpoolctl import threadpool_limits
        threadpool_limits(int(n))


def _load_config(args):
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    cfg.apply_env()
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args):
    from .attacks import evaluate
    from .data import load_dataset
    from .nn.checkpoint import load_checkpoint
    from .run import dataset_spec, run
    cfg = _load_config(args)
    cfg.model.pop("checkpoint", None)
    run(cfg, stop_after="model")
    model, _ = load_checkpoint(os.path.join(cfg.output_dir, "checkpoint"))
    _, test = load_dataset(dataset_spec(cfg))
    print(f"clean accuracy {evaluate(model, test):.2f}%  checkpoint: {os.path.join(cfg.output_dir, 'checkpoint')}")
    return 0


def cmd_attack(args):
    from .run import run
    cfg = _load_config(args)
    manifest, rows = run(cfg)
    for r in rows:
        print(f"{r.model_id:>20} {r.attack} {r.mode} eps={r.epsilon:>7}  CA {r.clean_acc:6.2f}  "
              f"AA {r.adv_acc:6.2f}  AL {r.adv_loss:6.2f}")
    print(f"reports in {cfg.output_dir}")
    return 0


def cmd_sram_search(args):
    from .run import run
    cfg = _load_config(args)
    hw = cfg.hardware
    if hw.get("mode") != "sram" or not isinstance(hw.get("sram"), dict) or "search" not in hw["sram"]:
        hw.update({"mode": "sram", "sram": {"search": {"vdd": args.vdd, "epsilon": args.epsilon}}})
    run(cfg, stop_after=None if args.attacks else "hardware")
    with open(os.path.join(cfg.output_dir, "search_outcome.json")) as f:
        summary = json.load(f)
    print(json.dumps({k: summary[k] for k in ("selected_layers", "configs", "validation", "test")}, indent=2))
    return 0


def cmd_xbar_map(args):
    from .nn.checkpoint import load_checkpoint
    from .xbar.mapping import XbarConfig, dump_mapped, map_model, nonideality
    model, _ = load_checkpoint(args.checkpoint)
    xc = XbarConfig.from_file(args.xbar) if args.xbar else XbarConfig()
    if args.size:
        xc = XbarConfig(**{**xc.to_dict(), "size": args.size})
    hw = map_model(model, xc)
    manifest = dump_mapped(hw, args.out)
    for k in hw.weighted_layers():
        kern = hw.layers[k].kernel
        dev = np.mean([nonideality(t.g_nonideal, t.g_varied) for pair in kern.tiles.values() for t in pair])
        print(f"layer {k}: {kern.shape[0]}x{kern.shape[1]} on {kern.grid[0]}x{kern.grid[1]} tile pairs, "
              f"mean |G'-G|/|G| = {dev:.4f}")
    print(f"{sum(len(layer['tiles']) for layer in manifest['layers'])} tiles written to {args.out}")
    return 0


def cmd_report(args):
    from .report import emit_report, read_csv, read_json
    rows = read_json(args.input) if args.input.endswith(".json") else read_csv(args.input)
    paths = emit_report(rows, args.out, figures=not args.no_figures)
    for p in paths:
        print(p)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hwrobust", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the baseline software model and save a checkpoint")
    t.add_argument("--config")
    t.add_argument("--out")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="run the configured attack grid over SW/SH/HH modes")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_attack)

    x = sub.add_parser("xbar-map", help="map a checkpoint onto crossbars and dump effective conductances")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--xbar", help="crossbar config JSON")
    x.add_argument("--size", type=int)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_xbar_map)

    s = sub.add_parser("sram-search", help="select layers and 8T/6T ratios for bit-error injection")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--vdd", type=float, default=0.68)
    s.add_argument("--epsilon", type=float, default=0.1)
    s.add_argument("--attacks", action="store_true", help="also run the attack grid with the selected config")
    s.set_defaults(func=cmd_sram_search)

    r = sub.add_parser("report", help="re-emit CSV/plot data/figures from a report file")
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _limit_threads()
        return args.func(args)
    except HwRobustError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ArithmeticError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 4
    except (ValueError, KeyError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
