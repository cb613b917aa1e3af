"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

The desk-scale end-to-end criteria (6 and 7) reuse a finished training run
in ``$TURBOMINGRU_ACCEPTANCE_DIR`` (default ``.acceptance/desk`` in the
repository) when its configuration and numerics digests match the current
code; otherwise the run is trained or resumed there first, which takes
many hours on a single core.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import as_float64, check_gradients, rel_error
from turbomingru.channel import ChannelSpec, RngStream, awgn_transmit, ebn0_to_sigma, uncoded_bpsk_ber
from turbomingru.checkpoint import load_model, model_arrays, save_model
from turbomingru.codec import CNNBlockParams, DecoderModel, EncoderModel, Interleaver, deinterleave, encode, interleave
from turbomingru.config import resolve_config
from turbomingru.evaluation import EvalPoint, confidence_interval, count_errors, evaluate_grid, monotone_within_ci
from turbomingru.layers import (
    GRUParams,
    MambaBlockParams,
    MinGRUParams,
    gru_forward,
    gru_param_count,
    mamba_block_forward,
    mingru_parallel,
    mingru_param_count,
    mingru_sequential,
)
from turbomingru.runs import RunDir, bench_scan, numerics_digest, train_run, write_csv
from turbomingru.tensor import Tensor, activation, conv1d_same, linear_forward
from turbomingru.training import TrainConfig, bce_loss

REPO = Path(__file__).resolve().parents[1]
DESK_DIR = Path(os.environ.get("TURBOMINGRU_ACCEPTANCE_DIR", REPO / ".acceptance" / "desk"))


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line (visible without -s), then assert."""
    def _report(n, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} | {detail}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return _report


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# 1 -------------------------------------------------------------------------
def test_c1_scan_equivalence(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_out, worst_grad = 0.0, 0.0
    for _ in range(100):
        p = MinGRUParams.init(8, 8, rng)
        x = Tensor(rng.standard_normal((4, 2048, 8)).astype(np.float32))
        w = Tensor(rng.standard_normal((4, 2048, 8)).astype(np.float32))
        outs, grads = [], []
        for fn in (mingru_parallel, mingru_sequential):
            for _, t in p.named_parameters():
                t.zero_grad()
            h = fn(x, p)
            (h * w).sum().backward()
            outs.append(h.data)
            grads.append({n: t.grad.astype(np.float64) for n, t in p.named_parameters()})
        worst_out = max(worst_out, float(np.max(np.abs(outs[0] - outs[1]))))
        worst_grad = max(worst_grad, max(rel_error(grads[0][n], grads[1][n]) for n in grads[0]))
    elapsed = time.perf_counter() - t0
    ok = worst_out <= 1e-4 and worst_grad <= 1e-3 and elapsed < 60
    report(1, "minGRU parallel == sequential", ok,
           f"max|dh|={worst_out:.2e} (<=1e-4), grad rel={worst_grad:.2e} (<=1e-3), {elapsed:.1f}s (<60s)")


# 2 -------------------------------------------------------------------------
def test_c2_gradient_suite(report):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    errors = {}

    def run(name, build, tensors):
        errs = check_gradients(build, tensors, rng, rtol=np.inf)
        errors[name] = max(errs.values())

    x, w, b = t64(rng.standard_normal((2, 4, 3))), t64(rng.standard_normal((3, 5))), t64(rng.standard_normal(5))
    run("linear", lambda: linear_forward(x, w, b), {"x": x, "w": w, "b": b})

    xc, kc, bc = t64(rng.standard_normal((2, 7, 3))), t64(rng.standard_normal((5, 3, 4))), t64(rng.standard_normal(4))
    run("conv1d", lambda: conv1d_same(xc, kc, bc), {"x": xc, "kernel": kc, "bias": bc})

    for kind in ("sigmoid", "tanh", "silu", "elu"):
        xa = t64(rng.uniform(0.1, 2.0, (3, 5)) * rng.choice([-1, 1], (3, 5)))
        run(kind, lambda xa=xa, kind=kind: activation(xa, kind), {"x": xa})

    gp = as_float64(GRUParams.init(3, 4, rng))
    xg = t64(rng.standard_normal((2, 5, 3)))
    run("gru", lambda: gru_forward(xg, gp), {"x": xg, **dict(gp.named_parameters())})

    mp = as_float64(MinGRUParams.init(3, 4, rng))
    xm = t64(rng.standard_normal((2, 6, 3)))
    run("mingru_parallel", lambda: mingru_parallel(xm, mp), {"x": xm, **dict(mp.named_parameters())})
    run("mingru_sequential", lambda: mingru_sequential(xm, mp), {"x": xm, **dict(mp.named_parameters())})

    bp = as_float64(MambaBlockParams.init(3, rng))
    xb = t64(rng.standard_normal((2, 6, 1)))
    run("mamba_block", lambda: mamba_block_forward(xb, bp), {"x": xb, **dict(bp.named_parameters())})

    cp = as_float64(CNNBlockParams.init(7, 5, layers=5, hidden=6, kernel_size=5, rng=rng))
    xd = t64(rng.standard_normal((2, 8, 7)))
    run("decoder_block", lambda: cp(xd), {"x": xd, **dict(cp.named_parameters())})

    pb = t64(rng.uniform(0.05, 0.95, (3, 6)))
    ub = rng.integers(0, 2, (3, 6))
    run("bce", lambda: bce_loss(pb, ub), {"p": pb})

    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = all(e <= 1e-3 for e in errors.values()) and elapsed < 300
    report(2, "finite-difference gradient suite", ok,
           f"{len(errors)} ops, worst {worst}={errors[worst]:.2e} (<=1e-3), {elapsed:.1f}s (<300s)")


# 3 -------------------------------------------------------------------------
def test_c3_channel_statistics(report):
    y = awgn_transmit(Tensor(np.zeros(10**6)), 1.0, RngStream(303)).data
    mean, var = float(y.mean()), float(y.var())
    sigma = ebn0_to_sigma(ChannelSpec(0.5, 0.0))
    ok = abs(mean) <= 5e-3 and abs(var - 1) <= 0.01 and abs(sigma - 1) <= 1e-12
    report(3, "AWGN statistics and Eb/N0 mapping", ok,
           f"|mean|={abs(mean):.2e} (<=5e-3), var={var:.4f} (1+-1%), sigma(R=1/2,0dB)-1={sigma - 1:.1e}")


# 4 -------------------------------------------------------------------------
def test_c4_codec_invariants(report, tmp_path):
    rng = np.random.default_rng(404)
    k = 64
    x = Tensor(rng.standard_normal((3, k, 2)))
    round_trip = all(
        np.array_equal(deinterleave(interleave(x, pi), pi).data, x.data)
        for pi in (Interleaver.random(k, int(s)) for s in rng.integers(0, 2**32, 1000))
    )
    pi = Interleaver.random(k, 0)
    enc = EncoderModel.init(pi, rng=rng)
    cw = encode(rng.integers(0, 2, (500, k)), enc).data.astype(np.float64)
    mean, std = abs(cw.mean()), cw.std()
    n = cw.shape[1] * cw.shape[2]

    dec = DecoderModel.init(pi, rng=rng)
    save_model(tmp_path / "m.ntmg", enc, dec)
    enc2, dec2 = load_model(tmp_path / "m.ntmg")
    exact = all(a.tobytes() == b.tobytes()
                for a, b in zip(model_arrays(enc, dec).values(), model_arrays(enc2, dec2).values()))
    ok = round_trip and mean <= 1e-6 and abs(std - 1) <= 1e-5 and n == 2 * k and exact
    report(4, "codec invariants", ok,
           f"1000 interleaver round trips={round_trip}, |mean|={mean:.1e}, |std-1|={abs(std - 1):.1e}, "
           f"n={n}=2k, checkpoint bit-exact={exact}")


# 5 -------------------------------------------------------------------------
def test_c5_estimator_oracle(report):
    details, ok = [], True
    k, blocks = 64, 5000
    for p in (0.01, 0.1):
        def flip(u, gen, p=p):
            return u ^ (gen.random(u.shape) < p).astype(u.dtype)
        bits, _ = count_errors(flip, k, blocks, RngStream(505))
        trials = k * blocks
        lo, hi = confidence_interval(bits, trials)
        dev = abs(bits / trials - p) / ((hi - lo) / 2)
        ok &= dev <= 3
        details.append(f"p={p}: BER={bits / trials:.5f} ({dev:.2f} half-widths)")

    wrong = iter([np.array([[0, 0, 1, 0], [0, 0, 0, 0]], dtype=np.int8)])
    bits, blks = count_errors(lambda u, gen: u ^ next(wrong), 4, 2, RngStream(0))
    pt = EvalPoint.from_counts(0.0, 4, 2, bits, blks, 0)
    ok &= pt.ber == 0.125 and pt.bler == 0.5
    details.append(f"hand example BER={pt.ber} BLER={pt.bler}")
    report(5, "BER/BLER estimator oracle", ok, ", ".join(details))


# 6 and 7: desk-scale run -----------------------------------------------------
def _desk_config():
    return resolve_config("desk")


def _run_matches(cfg) -> bool:
    run = RunDir(DESK_DIR)
    if not run.exists():
        return False
    meta = json.loads(run.state.read_text())
    return (meta.get("config_digest") == cfg.digest() and meta.get("code_digest") == numerics_digest()
            and meta.get("epoch") == cfg.epochs)


@pytest.fixture(scope="module")
def desk_run():
    cfg = _desk_config()
    if not _run_matches(cfg):
        run = RunDir(DESK_DIR)
        stale = run.exists() and json.loads(run.state.read_text()).get("code_digest") != numerics_digest()
        train_run(cfg, DESK_DIR, resume=not stale)
    state = json.loads(RunDir(DESK_DIR).state.read_text())
    return cfg, state


@pytest.mark.slow
def test_c6_desk_end_to_end(report, desk_run):
    cfg, _ = desk_run
    enc, dec = load_model(RunDir(DESK_DIR).model)
    points = evaluate_grid(enc, dec, cfg.eval_grid, cfg.eval_n, cfg.seed, batch_size=cfg.eval_batch)
    write_csv(DESK_DIR / "acceptance_eval.csv", list(points[0].as_row()), [p.as_row() for p in points])
    baseline = uncoded_bpsk_ber(3.0)
    at3 = next(p for p in points if p.ebn0_db == 3.0)
    monotone = monotone_within_ci(points, "ber")
    curve = ", ".join(f"{p.ebn0_db:g}dB:{p.ber:.3e}" for p in points)
    ok = at3.ber < baseline and monotone
    report(6, "desk-scale BER beats uncoded BPSK at 3 dB, monotone", ok,
           f"BER(3dB)={at3.ber:.4e} vs Q-baseline {baseline:.4e}; monotone within CI={monotone}; {curve}")


def _median3(values):
    v = np.asarray(values, dtype=float)
    return np.median(np.lib.stride_tricks.sliding_window_view(v, 3), axis=1)


@pytest.mark.slow
def test_c7_training_dynamics(report, desk_run):
    _, state = desk_run
    hist = state["history"]
    epochs = sorted({r["epoch"] for r in hist})[:10]
    # per-epoch loss over every training sample of both phases
    loss = []
    for e in epochs:
        rows = [r for r in hist if r["epoch"] == e]
        loss.append(sum(r["mean_loss"] * r["samples"] for r in rows) / sum(r["samples"] for r in rows))
    smooth = _median3(loss)
    non_increasing = bool(np.all(np.diff(smooth) <= 0))
    ratio_default = TrainConfig().sample_ratio
    enc_s = [r["samples"] for r in hist if r["phase"] == "encoder"]
    dec_s = [r["samples"] for r in hist if r["phase"] == "decoder"]
    ratio_run = {d / e for d, e in zip(dec_s, enc_s)}
    ok = len(epochs) == 10 and non_increasing and ratio_default == 20.0 and ratio_run == {20.0}
    report(7, "training loss trend and decoder/encoder sample ratio", ok,
           f"median-3 loss {np.round(smooth, 4).tolist()} non-increasing={non_increasing}; "
           f"ratio at defaults={ratio_default}, in desk run={sorted(ratio_run)}")


# 8 -------------------------------------------------------------------------
def test_c8_parameter_counts(report):
    rng = np.random.default_rng(808)
    cases = [(1, 1), (1, 4), (4, 4), (8, 8), (5, 3), (64, 128)]
    ok = all(
        MinGRUParams.init(dx, dh, rng).num_parameters() == mingru_param_count(dx, dh) == 2 * dh * (dx + 1)
        and GRUParams.init(dx, dh, rng).num_parameters() == gru_param_count(dx, dh)
        == 3 * (dh * dx + dh * dh + dh)
        for dx, dh in cases)
    report(8, "minGRU / GRU parameter counts", ok,
           f"{len(cases)} shapes; e.g. d_x=d_h=8: minGRU {mingru_param_count(8, 8)}, GRU {gru_param_count(8, 8)}")


# 9 -------------------------------------------------------------------------
def test_c9_scan_benchmark(report):
    threads = max(4, os.cpu_count() or 1)
    row = bench_scan([16384], d_h=8, threads=threads, batch=4, repeats=3, seed=909)[0]
    ok = row["speedup"] >= 2.0 and row["max_abs_diff"] <= 1e-4
    report(9, "parallel scan speedup at T=16384", ok,
           f"{row['speedup']:.1f}x with {threads} threads on {os.cpu_count()} core(s) "
           f"(seq {row['sequential_seconds']:.3f}s, par {row['parallel_seconds']:.3f}s), "
           f"max|diff|={row['max_abs_diff']:.1e}")
