"""Experiment drivers behind the CLI: train, eval, hidden-size sweep, scan benchmark."""
from __future__ import annotations

import ast
import csv
import functools
import hashlib
import io
import json
import logging
import subprocess
import time
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import __version__
from .channel import RngStream
from .checkpoint import (
    CheckpointError,
    atomic_write_bytes,
    atomic_write_text,
    encode_checkpoint,
    header_for,
    load_model,
    read_checkpoint,
    save_json,
    save_model,
)
from .codec import DecoderModel, EncoderModel, Interleaver
from .config import RunConfig
from .evaluation import CSV_COLUMNS, EvalPoint, evaluate_grid
from .layers import MinGRUParams, mingru_parallel, mingru_sequential
from .plotting import write_ber_svg
from .tensor import Tensor, no_grad
from .training import PhaseMetrics, TrainingState, train_epoch

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "phase", "mean_loss", "train_ber", "wall_seconds")
_NUMERIC_SOURCES = ("tensor.py", "scan.py", "layers.py", "codec.py", "channel.py", "training.py")


def _strip_docstrings(tree: ast.AST) -> ast.AST:
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if (isinstance(body, list) and body and isinstance(body[0], ast.Expr)
                and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str)):
            node.body = body[1:] or [ast.Pass()]
    return tree


@functools.lru_cache(maxsize=None)
def numerics_digest() -> str:
    """Hash of the code that determines training numerics.

    Comments, docstrings and formatting do not count, so cached runs
    survive cosmetic edits.  Computed once per process, i.e. for the code
    actually running.
    """
    h = hashlib.sha256()
    here = Path(__file__).parent
    for name in _NUMERIC_SOURCES:
        tree = _strip_docstrings(ast.parse((here / name).read_text()))
        h.update(ast.dump(tree, annotate_fields=False).encode())
    return h.hexdigest()[:16]


def build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def build_models(cfg: RunConfig) -> tuple[EncoderModel, DecoderModel]:
    interleaver = Interleaver.random(cfg.k, cfg.interleaver_seed)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    enc = EncoderModel.init(interleaver, cfg.enc_features, cfg.enc_blocks, rng)
    dec = DecoderModel.init(interleaver, cfg.iterations, cfg.dec_features, cfg.dec_layers,
                            cfg.dec_hidden, cfg.dec_kernel, rng)
    return enc, dec


def write_csv(path, columns: Iterable[str], rows: Iterable[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _fmt(row[c]) for c in writer.fieldnames})
    atomic_write_text(path, buf.getvalue())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def echo_config(out: Path, cfg: RunConfig, **extra) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_json(out / "config.json", {"config": cfg.to_dict(), "config_digest": cfg.digest(),
                                    "build": build_id(), **extra})


# ---------------------------------------------------------------------------
# training runs
# ---------------------------------------------------------------------------
class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    model = property(lambda self: self.root / "model.ntmg")
    optimizer = property(lambda self: self.root / "optimizer.ntmg")
    state = property(lambda self: self.root / "state.json")
    metrics = property(lambda self: self.root / "metrics.csv")

    def exists(self) -> bool:
        return self.state.is_file() and self.model.is_file()


def _optimizer_arrays(state: TrainingState) -> "OrderedDict[str, np.ndarray]":
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for side, opt in (("enc", state.enc_opt), ("dec", state.dec_opt)):
        for name in opt.m:
            arrays[f"{side}.m.{name}"] = opt.m[name]
            arrays[f"{side}.v.{name}"] = opt.v[name]
    return arrays


def save_training_state(run: RunDir, state: TrainingState, cfg: RunConfig) -> None:
    save_model(run.model, state.enc, state.dec)
    atomic_write_bytes(run.optimizer, encode_checkpoint(header_for(state.enc, state.dec),
                                                         _optimizer_arrays(state)))
    write_csv(run.metrics, METRIC_COLUMNS, (vars(m) for m in state.history))
    save_json(run.state, {
        "epoch": state.epoch,
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "code_digest": numerics_digest(),
        "enc_opt_step": state.enc_opt.step,
        "dec_opt_step": state.dec_opt.step,
        "history": [vars(m) for m in state.history],
    })


def load_training_state(run: RunDir, cfg: RunConfig) -> TrainingState:
    meta = json.loads(run.state.read_text())
    if meta.get("config_digest") != cfg.digest():
        raise CheckpointError(f"{run.root}: checkpoint was written with a different configuration")
    enc, dec = load_model(run.model)
    state = TrainingState.create(enc, dec, cfg.train_config())
    _, arrays = read_checkpoint(run.optimizer)
    for side, opt in (("enc", state.enc_opt), ("dec", state.dec_opt)):
        for name in opt.m:
            try:
                opt.m[name] = arrays[f"{side}.m.{name}"].copy()
                opt.v[name] = arrays[f"{side}.v.{name}"].copy()
            except KeyError:
                raise CheckpointError(f"optimizer state missing for {side}.{name}") from None
    state.enc_opt.step = int(meta["enc_opt_step"])
    state.dec_opt.step = int(meta["dec_opt_step"])
    state.epoch = int(meta["epoch"])
    state.history = [PhaseMetrics(**row) for row in meta["history"]]
    return state


def train_run(cfg: RunConfig, out, resume: bool = True, max_epochs: int | None = None,
              on_epoch: Callable[[list[PhaseMetrics]], None] | None = None) -> TrainingState:
    """Train into ``out``; continues from a matching checkpoint when present.

    ``max_epochs`` caps how many epochs this call runs (the run can be
    resumed later), without changing the configured total.
    """
    run = RunDir(out)
    run.root.mkdir(parents=True, exist_ok=True)
    if resume and run.exists():
        state = load_training_state(run, cfg)
        log.info("resuming %s at epoch %d", run.root, state.epoch)
    else:
        enc, dec = build_models(cfg)
        state = TrainingState.create(enc, dec, cfg.train_config())
    echo_config(run.root, cfg, code_digest=numerics_digest())
    rng = RngStream(cfg.seed)
    done = 0
    while state.epoch < cfg.epochs and (max_epochs is None or done < max_epochs):
        rows = train_epoch(state, rng)
        done += 1
        if state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs:
            save_training_state(run, state, cfg)
        if on_epoch is not None:
            on_epoch(rows)
    if not run.exists():
        save_training_state(run, state, cfg)
    return state


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------
def eval_run(checkpoint, grid, n: int, seed: int, out, batch_size: int = 500,
             threads: int | None = None, schedule: bool = True, cfg: RunConfig | None = None) -> list[EvalPoint]:
    enc, dec = load_model(checkpoint)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        echo_config(out, cfg, checkpoint=str(checkpoint))
    points = evaluate_grid(enc, dec, grid, n, seed, batch_size=batch_size, threads=threads,
                           schedule=schedule,
                           progress=lambda p: log.info("Eb/N0 %.2f dB: BER %.3e BLER %.3e (%d blocks)",
                                                       p.ebn0_db, p.ber, p.bler, p.blocks))
    write_csv(out / "results.csv", CSV_COLUMNS, (p.as_row() for p in points))
    write_ber_svg(out / "results.svg", points)
    return points


# ---------------------------------------------------------------------------
# hidden-size sweep
# ---------------------------------------------------------------------------
def sweep_hidden(cfg: RunConfig, features: list[int], out) -> dict[int, list[PhaseMetrics]]:
    """Train one system per encoder feature size and log its trajectory."""
    if not features:
        raise ValueError("sweep-hidden needs at least one feature size")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(out, cfg, features=list(features))
    result = {}
    summary = []
    for f in features:
        sub = cfg.updated(enc_features=int(f))
        state = train_run(sub, out / f"F{f}", resume=True)
        write_csv(out / f"trajectory_F{f}.csv", METRIC_COLUMNS, (vars(m) for m in state.history))
        result[f] = state.history
        enc_rows = [m for m in state.history if m.phase == "encoder"]
        summary.append({"features": f, "epochs": len(enc_rows),
                        "final_loss": enc_rows[-1].mean_loss, "final_train_ber": enc_rows[-1].train_ber,
                        "mean_epoch_seconds": sum(m.wall_seconds for m in state.history) / len(enc_rows)})
    write_csv(out / "sweep_summary.csv",
              ("features", "epochs", "final_loss", "final_train_ber", "mean_epoch_seconds"), summary)
    return result


# ---------------------------------------------------------------------------
# scan benchmark
# ---------------------------------------------------------------------------
BENCH_COLUMNS = ("T", "d_h", "batch", "threads", "sequential_seconds", "parallel_seconds", "speedup",
                 "max_abs_diff")


def bench_scan(lengths: list[int], d_h: int = 8, threads: int = 1, batch: int = 4, repeats: int = 3,
               seed: int = 0) -> list[dict]:
    """Wall-clock of sequential vs scan-based minGRU forward passes."""
    rng = np.random.default_rng(seed)
    p = MinGRUParams.init(d_h, d_h, rng)
    rows = []
    for t in lengths:
        x = Tensor(rng.standard_normal((batch, t, d_h)).astype(np.float32))
        with no_grad():
            seq_times, par_times = [], []
            for _ in range(repeats):
                t0 = time.perf_counter()
                hs = mingru_sequential(x, p)
                seq_times.append(time.perf_counter() - t0)
                t0 = time.perf_counter()
                hp = mingru_parallel(x, p, threads=threads)
                par_times.append(time.perf_counter() - t0)
        seq, par = min(seq_times), min(par_times)
        rows.append({"T": t, "d_h": d_h, "batch": batch, "threads": threads,
                     "sequential_seconds": seq, "parallel_seconds": par, "speedup": seq / par,
                     "max_abs_diff": float(np.max(np.abs(hs.data - hp.data)))})
    return rows
