"""Rate-1/2 turbo autoencoder: interleaver, encoder and iterative decoder."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import MambaBlockParams, ParamGroup, mamba_block_forward, uniform_init
from .tensor import (
    ConfigurationError,
    ContractError,
    DimensionError,
    ParameterStore,
    Tensor,
    clamp,
    concat,
    conv1d_same,
    elu,
    linear_forward,
    sigmoid,
    sqrt,
    take,
)


class DegenerateInputError(ValueError):
    """Raised when normalisation meets a constant signal."""


@dataclass(frozen=True)
class Interleaver:
    """Fixed permutation of ``range(k)`` drawn from a recorded seed."""

    perm: np.ndarray
    seed: int = 0
    inverse: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.int64)
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(len(perm))):
            raise ValueError("interleaver permutation must be a bijection of 0..k-1")
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "inverse", inverse)

    @classmethod
    def random(cls, k: int, seed: int) -> "Interleaver":
        rng = np.random.default_rng(seed)
        return cls(rng.permutation(k), seed=seed)

    @classmethod
    def identity(cls, k: int) -> "Interleaver":
        return cls(np.arange(k))

    @property
    def k(self) -> int:
        return len(self.perm)

    def __eq__(self, other):
        return isinstance(other, Interleaver) and np.array_equal(self.perm, other.perm)

    def __hash__(self):
        return hash(self.perm.tobytes())


def _check_length(x: Tensor, pi: Interleaver) -> None:
    if x.ndim < 2 or x.shape[1] != pi.k:
        raise DimensionError(f"sequence length {x.shape[1] if x.ndim > 1 else None} != interleaver length {pi.k}")


def interleave(x: Tensor, pi: Interleaver) -> Tensor:
    """``out[b, i] = x[b, perm[i]]`` along the time axis."""
    _check_length(x, pi)
    return take(x, pi.perm, axis=1)


def deinterleave(x: Tensor, pi: Interleaver) -> Tensor:
    _check_length(x, pi)
    return take(x, pi.inverse, axis=1)


def power_normalize(x: Tensor) -> Tensor:
    """Standardise over every element of the batch (population std)."""
    centred = x - x.mean()
    var = (centred * centred).mean()
    # a constant input leaves only rounding noise in the variance
    scale = float(np.max(np.abs(x.data))) if x.data.size else 0.0
    if float(var.data) <= (16 * np.finfo(x.dtype).eps * scale) ** 2:
        raise DegenerateInputError("power_normalize: input is constant (std = 0)")
    return centred / sqrt(var)


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------
@dataclass
class EncoderModel(ParamGroup):
    branch1: list[MambaBlockParams]
    branch2: list[MambaBlockParams]
    interleaver: Interleaver
    mode: str = "parallel"

    def named_parameters(self, prefix: str = ""):
        for b, blocks in (("branch1", self.branch1), ("branch2", self.branch2)):
            for i, blk in enumerate(blocks):
                yield from blk.named_parameters(f"{prefix}{b}.{i}.")

    @property
    def features(self) -> int:
        return self.branch1[0].features

    @classmethod
    def init(cls, interleaver: Interleaver, features: int = 4, sub_blocks: int = 2,
             rng: np.random.Generator | None = None) -> "EncoderModel":
        rng = np.random.default_rng(0) if rng is None else rng
        b1 = [MambaBlockParams.init(features, rng) for _ in range(sub_blocks)]
        b2 = [MambaBlockParams.init(features, rng) for _ in range(sub_blocks)]
        return cls(b1, b2, interleaver)


def bits_to_bpsk(u) -> Tensor:
    arr = u.data if isinstance(u, Tensor) else np.asarray(u)
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValueError("encode: message must contain only 0/1 bits")
    return Tensor((2.0 * arr - 1.0).astype(np.float32))


def branch_forward(x: Tensor, blocks: list[MambaBlockParams], mode: str = "parallel") -> Tensor:
    for blk in blocks:
        x = mamba_block_forward(x, blk, mode)
    return x


def encode_unnormalized(u, m: EncoderModel) -> Tensor:
    s = bits_to_bpsk(u)
    if s.ndim != 2 or s.shape[1] != m.interleaver.k:
        raise DimensionError(f"encode: expected messages [B, {m.interleaver.k}], got {s.shape}")
    s = Tensor(s.data[:, :, None])
    sys = branch_forward(s, m.branch1, m.mode)
    par = branch_forward(interleave(s, m.interleaver), m.branch2, m.mode)
    return concat([sys, par], axis=-1)


def encode(u, m: EncoderModel) -> Tensor:
    """Bits ``[B, k]`` to a unit-power codeword ``[B, k, 2]`` (n = 2k symbols)."""
    return power_normalize(encode_unnormalized(u, m))


# ---------------------------------------------------------------------------
# Decoder
# ---------------------------------------------------------------------------
@dataclass
class CNNBlockParams(ParamGroup):
    """``L`` same-padded conv layers with ELU, then a linear read-out."""

    kernels: list[Tensor]
    biases: list[Tensor]
    out_w: Tensor
    out_b: Tensor

    @classmethod
    def init(cls, in_channels: int, out_channels: int, layers: int = 5, hidden: int = 100,
             kernel_size: int = 5, rng: np.random.Generator | None = None) -> "CNNBlockParams":
        if kernel_size % 2 == 0:
            raise ConfigurationError(f"decoder kernel size must be odd, got {kernel_size}")
        rng = np.random.default_rng(0) if rng is None else rng
        kernels, biases = [], []
        cin = in_channels
        for _ in range(layers):
            kernels.append(uniform_init(rng, (kernel_size, cin, hidden), kernel_size * cin))
            biases.append(uniform_init(rng, (hidden,), kernel_size * cin))
            cin = hidden
        return cls(kernels, biases,
                   uniform_init(rng, (hidden, out_channels), hidden),
                   uniform_init(rng, (out_channels,), hidden))

    @property
    def in_channels(self) -> int:
        return self.kernels[0].shape[1]

    @property
    def out_channels(self) -> int:
        return self.out_w.shape[1]

    def forward(self, x: Tensor) -> Tensor:
        for kern, bias in zip(self.kernels, self.biases):
            x = elu(conv1d_same(x, kern, bias))
        return linear_forward(x, self.out_w, self.out_b)

    __call__ = forward


@dataclass
class DecoderModel(ParamGroup):
    """One independent pair of CNN blocks per turbo iteration."""

    blocks: list[tuple[CNNBlockParams, CNNBlockParams]]
    interleaver: Interleaver
    features: int = 5

    def named_parameters(self, prefix: str = ""):
        for i, (first, second) in enumerate(self.blocks):
            yield from first.named_parameters(f"{prefix}iter{i}.first.")
            yield from second.named_parameters(f"{prefix}iter{i}.second.")

    @property
    def iterations(self) -> int:
        return len(self.blocks)

    @classmethod
    def init(cls, interleaver: Interleaver, iterations: int = 6, features: int = 5,
             layers: int = 5, hidden: int = 100, kernel_size: int = 5,
             rng: np.random.Generator | None = None) -> "DecoderModel":
        rng = np.random.default_rng(0) if rng is None else rng
        cin = 2 + features
        blocks = []
        for i in range(iterations):
            last = i == iterations - 1
            first = CNNBlockParams.init(cin, features, layers, hidden, kernel_size, rng)
            second = CNNBlockParams.init(cin, 1 if last else features, layers, hidden, kernel_size, rng)
            blocks.append((first, second))
        return cls(blocks, interleaver, features)


# float32 sigmoid saturates to exactly 0/1 past |z| ~ 17; keep outputs open
_P_LOW = float(np.finfo(np.float32).tiny)
_P_HIGH = float(1.0 - np.finfo(np.float32).epsneg)


def decode_logits(y: Tensor, m: DecoderModel, iterations: int | None = None,
                  trace: list | None = None) -> Tensor:
    """Run the turbo iterations and return deinterleaved final LLRs ``[B, k, 1]``.

    With fewer iterations than trained block pairs, the leading pairs run
    and the last (1-channel) pair closes the loop.

    If ``trace`` is a list, every intermediate prior / extrinsic signal is
    appended to it as ``(iteration, label, ndarray)``.
    """
    y = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float32))
    if y.ndim != 3 or y.shape[2] != 2:
        raise DimensionError(f"decode expects received words [B, k, 2], got {y.shape}")
    iterations = m.iterations if iterations is None else iterations
    if iterations < 1:
        raise ContractError("decode needs at least one iteration")
    if iterations > m.iterations:
        raise ContractError(f"{iterations} iterations requested but only {m.iterations} block pairs exist")
    pi = m.interleaver
    a = y[:, :, 0:1]
    b = y[:, :, 1:2]
    a_int = interleave(a, pi)
    b_deint = deinterleave(b, pi)

    prior = Tensor(np.zeros((y.shape[0], y.shape[1], m.features), dtype=y.dtype))
    active = m.blocks[:iterations - 1] + [m.blocks[-1]] if iterations < m.iterations else m.blocks
    for i, (first, second) in enumerate(active):
        if trace is not None:
            trace.append((i, "prior", prior.data.copy()))
        plr = first(concat([a, b_deint, prior], axis=-1))
        ext_int = interleave(plr - prior, pi)
        if trace is not None:
            trace.append((i, "ext_int", ext_int.data.copy()))
        plr = second(concat([a_int, b, ext_int], axis=-1))
        if i < len(active) - 1:
            prior = deinterleave(plr - ext_int, pi)
    return deinterleave(plr, pi)


def decode(y, m: DecoderModel, iterations: int | None = None) -> Tensor:
    """Received words ``[B, k, 2]`` to bit probabilities ``[B, k]`` in (0, 1)."""
    llr = decode_logits(y, m, iterations)
    p = clamp(sigmoid(llr), _P_LOW, _P_HIGH)
    return p[:, :, 0]


def hard_decision(p) -> np.ndarray:
    """Threshold at 0.5; a tie decides for 1."""
    arr = p.data if isinstance(p, Tensor) else np.asarray(p)
    return (arr >= 0.5).astype(np.int8)


def build_parameter_store(enc: EncoderModel, dec: DecoderModel) -> ParameterStore:
    store = ParameterStore()
    for name, t in enc.named_parameters("enc."):
        store.add(name, t)
    for name, t in dec.named_parameters("dec."):
        store.add(name, t)
    return store
