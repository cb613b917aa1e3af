"""AWGN channel and Eb/N0 bookkeeping for unit-power codewords."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add


@dataclass(frozen=True)
class ChannelSpec:
    rate: float
    ebn0_db: float

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError(f"code rate must lie in (0, 1], got {self.rate}")

    @property
    def n0(self) -> float:
        return 1.0 / (self.rate * 10.0 ** (self.ebn0_db / 10.0))

    @property
    def sigma(self) -> float:
        return ebn0_to_sigma(self)


def ebn0_to_sigma(spec: ChannelSpec) -> float:
    """Noise std for Eb/N0 = 1/(N0 R) with variance N0/2."""
    if spec.rate <= 0:
        raise ValueError(f"code rate must be positive, got {spec.rate}")
    return math.sqrt(spec.n0 / 2.0)


def sigma_to_ebn0(sigma: float, rate: float) -> float:
    n0 = 2.0 * sigma * sigma
    return 10.0 * math.log10(1.0 / (n0 * rate))


@dataclass(frozen=True)
class RngStream:
    """Reproducible, independent Gaussian/bit source keyed by (seed, stream)."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *keys: int) -> "RngStream":
        # fold extra keys into the stream id deterministically
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *keys))
        return RngStream(self.seed, int(ss.generate_state(2, np.uint64)[0]))


def awgn_transmit(x, sigma: float, rng: RngStream | np.random.Generator) -> Tensor:
    """``y = x + z`` with ``z ~ N(0, sigma^2)`` drawn in float64, added in x's dtype.

    A tensor input stays connected to the graph, so gradients reach the
    encoder through the channel.
    """
    if sigma < 0:
        raise ValueError(f"noise std must be non-negative, got {sigma}")
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    if sigma == 0:
        return add(x, np.zeros((), dtype=x.dtype))
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    noise = gen.standard_normal(x.shape) * sigma
    return add(x, Tensor(noise.astype(x.dtype)))


def uncoded_bpsk_ber(ebn0_db: float) -> float:
    """Q(sqrt(2 Eb/N0)), the bit error rate of uncoded BPSK."""
    ebn0 = 10.0 ** (ebn0_db / 10.0)
    return 0.5 * math.erfc(math.sqrt(ebn0))
