"""Alternating encoder/decoder training with BCE loss and AdamW."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import ChannelSpec, RngStream, awgn_transmit, ebn0_to_sigma
from .codec import DecoderModel, EncoderModel, decode, encode, hard_decision
from .tensor import ContractError, NonFiniteError, ParameterStore, Tensor, record

log = logging.getLogger(__name__)

PHASE_ENCODER = "encoder"
PHASE_DECODER = "decoder"


@dataclass
class TrainConfig:
    k: int = 64
    epochs: int = 500
    samples_per_epoch: int = 50000
    enc_batch: int = 128
    dec_batch: int = 512
    dec_train_ratio: int = 5
    lr: float = 2e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # per-batch Eb/N0 ~ U[low, high]; a fixed value overrides the range
    train_ebn0_low: float = 1.0
    train_ebn0_high: float = 4.0
    train_ebn0_fixed: float | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("k", "epochs", "samples_per_epoch", "enc_batch", "dec_batch", "dec_train_ratio"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.enc_batches_per_epoch == 0:
            raise ValueError("samples_per_epoch smaller than one encoder batch")
        if self.train_ebn0_fixed is None and self.train_ebn0_high < self.train_ebn0_low:
            raise ValueError("train_ebn0_high < train_ebn0_low")

    @property
    def enc_batches_per_epoch(self) -> int:
        return self.samples_per_epoch // self.enc_batch

    @property
    def dec_batches_per_epoch(self) -> int:
        # five decoder steps per encoder step, counted over the whole epoch
        return self.dec_train_ratio * self.enc_batches_per_epoch

    @property
    def sample_ratio(self) -> float:
        return (self.dec_batches_per_epoch * self.dec_batch) / (self.enc_batches_per_epoch * self.enc_batch)

    def to_dict(self) -> dict:
        return asdict(self)


def bce_loss(p_hat: Tensor, u) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped to [1e-12, 1 - 1e-12]."""
    target = u.data if isinstance(u, Tensor) else np.asarray(u)
    if target.shape != p_hat.shape:
        raise ValueError(f"bce_loss: prediction shape {p_hat.shape} != target shape {target.shape}")
    p = np.clip(p_hat.data.astype(np.float64), 1e-12, 1.0 - 1e-12)
    t = target.astype(np.float64)
    n = p.size
    loss = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    inside = (p_hat.data >= 1e-12) & (p_hat.data <= 1.0 - 1e-12)

    def backward(g):
        grad = (p - t) / (p * (1.0 - p)) / n * inside
        return ((g * grad).astype(p_hat.dtype),)

    return record(np.asarray(loss, dtype=p_hat.dtype), (p_hat,), backward)


@dataclass
class OptimizerState:
    """AdamW moment buffers keyed by parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ParameterStore) -> "OptimizerState":
        return cls({n: np.zeros_like(t.data) for n, t in params.items()},
                   {n: np.zeros_like(t.data) for n, t in params.items()})


def adamw_step(params: ParameterStore, state: OptimizerState, cfg: TrainConfig) -> None:
    """One in-place AdamW update with bias correction and decoupled decay."""
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adamw_step: parameter {name!r} has no gradient")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        if m.shape != p.shape:
            raise ContractError(f"adamw_step: state for {name!r} has shape {m.shape}, param {p.shape}")
        p.data *= 1.0 - cfg.lr * cfg.weight_decay
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p.data -= (cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)).astype(p.dtype)


@dataclass
class PhaseMetrics:
    epoch: int
    phase: str
    mean_loss: float
    train_ber: float
    wall_seconds: float
    batches: int
    samples: int


def draw_train_ebn0(cfg: TrainConfig, gen: np.random.Generator) -> float:
    if cfg.train_ebn0_fixed is not None:
        return float(cfg.train_ebn0_fixed)
    return float(gen.uniform(cfg.train_ebn0_low, cfg.train_ebn0_high))


def _batch_step(enc, dec, batch: int, cfg: TrainConfig, stream: RngStream, rate: float):
    gen = stream.generator()
    u = gen.integers(0, 2, size=(batch, cfg.k)).astype(np.float32)
    ebn0 = draw_train_ebn0(cfg, gen)
    x = encode(u, enc)
    y = awgn_transmit(x, ebn0_to_sigma(ChannelSpec(rate, ebn0)), gen)
    p = decode(y, dec)
    loss = bce_loss(p, u)
    if not np.isfinite(loss.data):
        raise NonFiniteError(f"non-finite training loss (Eb/N0={ebn0:.2f} dB)")
    loss.backward()
    errors = int(np.count_nonzero(hard_decision(p) != u))
    return float(loss.data), errors


def train_phase(phase: str, enc: EncoderModel, dec: DecoderModel, enc_params: ParameterStore,
                dec_params: ParameterStore, opt: OptimizerState, cfg: TrainConfig, epoch: int,
                rng: RngStream) -> PhaseMetrics:
    """Run one phase; only the named side is trainable, the other is frozen."""
    if phase == PHASE_ENCODER:
        active, frozen, batches, batch = enc_params, dec_params, cfg.enc_batches_per_epoch, cfg.enc_batch
    elif phase == PHASE_DECODER:
        active, frozen, batches, batch = dec_params, enc_params, cfg.dec_batches_per_epoch, cfg.dec_batch
    else:
        raise ValueError(f"unknown phase {phase!r}")
    rate = 0.5
    frozen.set_trainable(False)
    active.set_trainable(True)
    t0 = time.perf_counter()
    losses, errors = [], 0
    phase_id = 0 if phase == PHASE_ENCODER else 1
    try:
        for i in range(batches):
            active.zero_grad()
            loss, err = _batch_step(enc, dec, batch, cfg, rng.child(epoch, phase_id, i), rate)
            adamw_step(active, opt, cfg)
            losses.append(loss)
            errors += err
            if log.isEnabledFor(logging.DEBUG) and (i + 1) % 10 == 0:
                log.debug("epoch %d %s batch %d/%d loss %.4f", epoch, phase, i + 1, batches, loss)
    finally:
        frozen.set_trainable(True)
    wall = time.perf_counter() - t0
    samples = batches * batch
    return PhaseMetrics(epoch, phase, float(np.mean(losses)), errors / (samples * cfg.k), wall,
                        batches, samples)


@dataclass
class TrainingState:
    """Everything needed to continue training exactly where it stopped."""

    enc: EncoderModel
    dec: DecoderModel
    cfg: TrainConfig
    enc_params: ParameterStore
    dec_params: ParameterStore
    enc_opt: OptimizerState
    dec_opt: OptimizerState
    epoch: int = 0
    history: list[PhaseMetrics] = field(default_factory=list)

    @classmethod
    def create(cls, enc: EncoderModel, dec: DecoderModel, cfg: TrainConfig) -> "TrainingState":
        enc_params = ParameterStore(enc.named_parameters())
        dec_params = ParameterStore(dec.named_parameters())
        return cls(enc, dec, cfg, enc_params, dec_params,
                   OptimizerState.for_params(enc_params), OptimizerState.for_params(dec_params))


def train_epoch(state: TrainingState, rng: RngStream | None = None) -> list[PhaseMetrics]:
    """Encoder phase then decoder phase; returns one metrics row per phase."""
    cfg = state.cfg
    rng = RngStream(cfg.seed) if rng is None else rng
    epoch = state.epoch + 1
    rows = [
        train_phase(PHASE_ENCODER, state.enc, state.dec, state.enc_params, state.dec_params,
                    state.enc_opt, cfg, epoch, rng),
        train_phase(PHASE_DECODER, state.enc, state.dec, state.enc_params, state.dec_params,
                    state.dec_opt, cfg, epoch, rng),
    ]
    state.epoch = epoch
    state.history.extend(rows)
    for r in rows:
        log.info("epoch %d %-7s loss %.5f ber %.5f (%.1fs)", r.epoch, r.phase, r.mean_loss,
                 r.train_ber, r.wall_seconds)
    return rows
