"""Command-line entry point: ``turbomingru <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, read_checkpoint
from .config import resolve_config
from .runs import BENCH_COLUMNS, bench_scan, echo_config, eval_run, sweep_hidden, train_run, write_csv
from .scan import THREADS_ENV, default_threads
from .tensor import ConfigurationError, ContractError, DimensionError, NonFiniteError

log = logging.getLogger("turbomingru")

_CONTRACT_ERRORS = (ValueError, KeyError, ContractError, DimensionError, ConfigurationError,
                    CheckpointError, NonFiniteError, OSError)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with flat config keys")
    p.add_argument("--seed", type=int, help="master seed (u64)")
    p.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")
    p.add_argument("--preset", choices=("desk", "paper"), default="paper")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turbomingru",
                                     description="minGRU/Mamba turbo autoencoder toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train encoder and decoder")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--samples", type=int, dest="samples_per_epoch")
    p.add_argument("--no-resume", action="store_true", help="start fresh even if a checkpoint exists")
    p.add_argument("--max-epochs", type=int, help="stop after this many epochs in this invocation")

    p = sub.add_parser("eval", help="BER/BLER curve for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--grid", type=_floats, help="comma-separated Eb/N0 values in dB")
    p.add_argument("--n", type=int, dest="eval_n", help="base block count N per point")
    p.add_argument("--no-schedule", action="store_true", help="use N blocks at every point")

    p = sub.add_parser("sweep-hidden", help="train one system per encoder feature size")
    _common(p)
    p.add_argument("--features", type=_ints, default=[2, 4, 8])
    p.add_argument("--epochs", type=int)
    p.add_argument("--samples", type=int, dest="samples_per_epoch")

    p = sub.add_parser("bench-scan", help="time sequential vs parallel minGRU")
    _common(p)
    p.add_argument("--lengths", type=_ints, default=[512, 2048, 16384])
    p.add_argument("--d-h", type=int, default=8)
    p.add_argument("--threads", type=int, help=f"defaults to ${THREADS_ENV} or 1")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("inspect-checkpoint", help="print header and tensor inventory")
    p.add_argument("path", type=Path)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _resolve(args, **extra):
    overrides = {k: getattr(args, k, None) for k in ("seed", "epochs", "samples_per_epoch", "eval_n")}
    overrides.update(extra)
    return resolve_config(args.preset, args.config, **overrides)


def cmd_train(args) -> int:
    cfg = _resolve(args)
    state = train_run(cfg, args.out, resume=not args.no_resume, max_epochs=args.max_epochs)
    print(f"trained {state.epoch}/{cfg.epochs} epochs -> {args.out / 'model.ntmg'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, eval_grid=args.grid)
    points = eval_run(args.checkpoint, cfg.eval_grid, cfg.eval_n, cfg.seed, args.out,
                      batch_size=cfg.eval_batch, schedule=not args.no_schedule, cfg=cfg)
    for p in points:
        print(f"{p.ebn0_db:5.2f} dB  blocks={p.blocks:7d}  BER={p.ber:.3e}  BLER={p.bler:.3e}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    result = sweep_hidden(cfg, args.features, args.out)
    for f, hist in result.items():
        last = [m for m in hist if m.phase == "encoder"][-1]
        print(f"F={f}: final encoder loss {last.mean_loss:.4f}, train BER {last.train_ber:.4f}")
    return 0


def cmd_bench(args) -> int:
    cfg = _resolve(args)
    threads = default_threads() if args.threads is None else args.threads
    rows = bench_scan(args.lengths, args.d_h, threads, args.batch, args.repeats, cfg.seed)
    echo_config(args.out, cfg, lengths=args.lengths, d_h=args.d_h, threads=threads)
    write_csv(args.out / "bench_scan.csv", BENCH_COLUMNS, rows)
    for r in rows:
        print(f"T={r['T']:6d}  seq {r['sequential_seconds']:.4f}s  par {r['parallel_seconds']:.4f}s  "
              f"speedup {r['speedup']:.1f}x  max|diff| {r['max_abs_diff']:.2e}")
    return 0


def cmd_inspect(args) -> int:
    header, arrays = read_checkpoint(args.path)
    print(f"format v{header.version}  k={header.k}  F_enc={header.enc_features}  "
          f"F_dec={header.dec_features}  L={header.dec_layers}  I={header.iterations}  "
          f"interleaver_seed={header.seed}")
    total = 0
    for name, arr in arrays.items():
        if name != "interleaver.perm":
            total += arr.size
        if args.verbose:
            print(f"  {name:48s} {tuple(arr.shape)}")
    print(f"{len(arrays)} tensors, {total} parameters")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep-hidden": cmd_sweep,
            "bench-scan": cmd_bench, "inspect-checkpoint": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _CONTRACT_ERRORS as exc:
        print(f"turbomingru {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
