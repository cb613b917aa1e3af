"""Monte-Carlo BER/BLER estimation with Wilson confidence intervals."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .channel import ChannelSpec, RngStream, awgn_transmit
from .codec import DecoderModel, EncoderModel, decode, encode, hard_decision
from .scan import default_threads
from .tensor import no_grad

Z_95 = 1.959963984540054

CSV_COLUMNS = ("ebn0_db", "blocks", "bit_errors", "block_errors", "ber", "ber_ci_low",
               "ber_ci_high", "bler", "bler_ci_low", "bler_ci_high", "seed")


def sample_schedule(ebn0_db: float, n: int) -> int:
    """Blocks to simulate at one Eb/N0 point: N, then 2N from 4 dB, 3N from 5 dB, 4N from 5.5 dB."""
    if n <= 0:
        raise ValueError("sample_schedule: N must be positive")
    if ebn0_db >= 5.5:
        return 4 * n
    if ebn0_db >= 5.0:
        return 3 * n
    if ebn0_db >= 4.0:
        return 2 * n
    return n


def confidence_interval(errors: int, trials: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not 0 <= errors <= trials:
        raise ValueError(f"need 0 <= errors <= trials and trials >= 1, got {errors}/{trials}")
    p = errors / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    # the bounds are exact at the ends; rounding must not push them past p
    lo = 0.0 if errors == 0 else min(p, centre - half)
    hi = 1.0 if errors == trials else max(p, centre + half)
    return lo, hi


@dataclass
class EvalPoint:
    ebn0_db: float
    blocks: int
    bit_errors: int
    block_errors: int
    ber: float
    ber_ci_low: float
    ber_ci_high: float
    bler: float
    bler_ci_low: float
    bler_ci_high: float
    seed: int
    k: int

    @classmethod
    def from_counts(cls, ebn0_db: float, k: int, blocks: int, bit_errors: int, block_errors: int,
                    seed: int) -> "EvalPoint":
        ber_lo, ber_hi = confidence_interval(bit_errors, blocks * k)
        bler_lo, bler_hi = confidence_interval(block_errors, blocks)
        return cls(ebn0_db, blocks, bit_errors, block_errors, bit_errors / (blocks * k), ber_lo, ber_hi,
                   block_errors / blocks, bler_lo, bler_hi, seed, k)

    def as_row(self) -> dict:
        d = asdict(self)
        return {c: d[c] for c in CSV_COLUMNS}


# u, generator -> decoded bits
Simulator = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def count_errors(simulate: Simulator, k: int, blocks: int, rng: RngStream, batch_size: int = 500,
                 threads: int | None = None) -> tuple[int, int]:
    """Total bit and block errors over ``blocks`` random messages.

    Each batch draws from its own child stream, so totals do not depend on
    the thread count or the order batches finish in.
    """
    if blocks < 1:
        raise ValueError("need at least one block")
    threads = default_threads() if threads is None else max(1, threads)
    sizes = [batch_size] * (blocks // batch_size)
    if blocks % batch_size:
        sizes.append(blocks % batch_size)

    def run(job):
        j, size = job
        gen = rng.child(j).generator()
        u = gen.integers(0, 2, size=(size, k)).astype(np.int8)
        wrong = np.asarray(simulate(u, gen)) != u
        return int(wrong.sum()), int(wrong.any(axis=1).sum())

    jobs = list(enumerate(sizes))
    if threads == 1:
        results = [run(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    return sum(r[0] for r in results), sum(r[1] for r in results)


def codec_simulator(enc: EncoderModel, dec: DecoderModel, sigma: float) -> Simulator:
    def simulate(u, gen):
        with no_grad():
            y = awgn_transmit(encode(u, enc), sigma, gen)
            return hard_decision(decode(y, dec))
    return simulate


def estimate(enc: EncoderModel, dec: DecoderModel, spec: ChannelSpec, blocks: int, rng: RngStream,
             batch_size: int = 500, threads: int | None = None) -> EvalPoint:
    """Simulate ``blocks`` messages through encode -> AWGN -> decode -> threshold."""
    k = enc.interleaver.k
    bits, blks = count_errors(codec_simulator(enc, dec, spec.sigma), k, blocks, rng, batch_size, threads)
    return EvalPoint.from_counts(spec.ebn0_db, k, blocks, bits, blks, rng.seed)


def evaluate_grid(enc: EncoderModel, dec: DecoderModel, grid, n: int, seed: int, rate: float = 0.5,
                  batch_size: int = 500, threads: int | None = None, schedule: bool = True,
                  progress: Callable[[EvalPoint], None] | None = None) -> list[EvalPoint]:
    points = []
    for i, ebn0 in enumerate(grid):
        blocks = sample_schedule(ebn0, n) if schedule else n
        pt = estimate(enc, dec, ChannelSpec(rate, float(ebn0)), blocks, RngStream(seed, 1000 + i),
                      batch_size, threads)
        if progress is not None:
            progress(pt)
        points.append(pt)
    return points


def cis_overlap(a: EvalPoint, b: EvalPoint, which: str = "ber") -> bool:
    lo_a, hi_a = getattr(a, f"{which}_ci_low"), getattr(a, f"{which}_ci_high")
    lo_b, hi_b = getattr(b, f"{which}_ci_low"), getattr(b, f"{which}_ci_high")
    return lo_a <= hi_b and lo_b <= hi_a


def monotone_within_ci(points: list[EvalPoint], which: str = "ber") -> bool:
    """True when no point is worse than its predecessor beyond overlapping CIs."""
    for prev, cur in zip(points, points[1:]):
        if getattr(cur, which) > getattr(prev, which) and not cis_overlap(prev, cur, which):
            return False
    return True
