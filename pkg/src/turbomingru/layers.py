"""Recurrent sequence layers: GRU, minGRU and the gated Mamba-style block.

All layers take ``[B, T, C]`` tensors and start from a zero hidden state
unless ``h0`` is given.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import scan
from .tensor import (
    DimensionError,
    Tensor,
    conv1d_same,
    linear_forward,
    matmul,
    mul,
    record,
    sigmoid,
    silu,
    stack,
    tanh,
)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                 dtype=np.float32) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class ParamGroup:
    """Mixin giving dataclasses of tensors a flat, named parameter listing."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            name = f"{prefix}{f.name}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, ParamGroup):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor):
                        yield f"{name}.{i}", item
                    else:
                        yield from item.named_parameters(f"{name}.{i}.")

    def num_parameters(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------
@dataclass
class GRUParams(ParamGroup):
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @property
    def d_x(self) -> int:
        return self.w_z.shape[0]

    @property
    def d_h(self) -> int:
        return self.w_z.shape[1]

    @classmethod
    def init(cls, d_x: int, d_h: int, rng: np.random.Generator, dtype=np.float32) -> "GRUParams":
        kw = {}
        for gate in "zrh":
            kw[f"w_{gate}"] = uniform_init(rng, (d_x, d_h), d_x, dtype)
            kw[f"u_{gate}"] = uniform_init(rng, (d_h, d_h), d_h, dtype)
            kw[f"b_{gate}"] = uniform_init(rng, (d_h,), d_h, dtype)
        return cls(**kw)


def _check_seq(x: Tensor, d_x: int, what: str) -> None:
    if x.ndim != 3 or x.shape[2] != d_x:
        raise DimensionError(f"{what}: expected input [B, T, {d_x}], got {x.shape}")


def _initial_state(x: Tensor, d_h: int, h0) -> Tensor:
    if h0 is None:
        return Tensor(np.zeros((x.shape[0], d_h), dtype=x.dtype))
    h0 = h0 if isinstance(h0, Tensor) else Tensor(h0, dtype=x.dtype)
    if h0.shape != (x.shape[0], d_h):
        raise DimensionError(f"h0 must be [{x.shape[0]}, {d_h}], got {h0.shape}")
    return h0


def gru_forward(x: Tensor, p: GRUParams, h0: Tensor | None = None) -> Tensor:
    """Full GRU, one step at a time (update gate, reset gate, candidate, mix)."""
    _check_seq(x, p.d_x, "gru_forward")
    h = _initial_state(x, p.d_h, h0)
    outputs = []
    for t in range(x.shape[1]):
        xt = x[:, t, :]
        z = sigmoid(linear_forward(xt, p.w_z, p.b_z) + matmul(h, p.u_z))
        r = sigmoid(linear_forward(xt, p.w_r, p.b_r) + matmul(h, p.u_r))
        cand = tanh(linear_forward(xt, p.w_h, p.b_h) + matmul(r * h, p.u_h))
        h = (1.0 - z) * h + z * cand
        outputs.append(h)
    return stack(outputs, axis=1)


# ---------------------------------------------------------------------------
# minGRU
# ---------------------------------------------------------------------------
@dataclass
class MinGRUParams(ParamGroup):
    """Gate and candidate projections only; no recurrent weights."""

    w_z: Tensor
    b_z: Tensor
    w_h: Tensor
    b_h: Tensor

    @property
    def d_x(self) -> int:
        return self.w_z.shape[0]

    @property
    def d_h(self) -> int:
        return self.w_z.shape[1]

    @classmethod
    def init(cls, d_x: int, d_h: int, rng: np.random.Generator, dtype=np.float32) -> "MinGRUParams":
        return cls(
            w_z=uniform_init(rng, (d_x, d_h), d_x, dtype),
            b_z=uniform_init(rng, (d_h,), d_x, dtype),
            w_h=uniform_init(rng, (d_x, d_h), d_x, dtype),
            b_h=uniform_init(rng, (d_h,), d_x, dtype),
        )


def mingru_sequential(x: Tensor, p: MinGRUParams, h0: Tensor | None = None) -> Tensor:
    """minGRU evaluated left to right, each step its own small graph."""
    _check_seq(x, p.d_x, "mingru_sequential")
    h = _initial_state(x, p.d_h, h0)
    outputs = []
    for t in range(x.shape[1]):
        xt = x[:, t, :]
        z = sigmoid(linear_forward(xt, p.w_z, p.b_z))
        cand = linear_forward(xt, p.w_h, p.b_h)
        h = (1.0 - z) * h + z * cand
        outputs.append(h)
    return stack(outputs, axis=1)


def linear_recurrence(a: Tensor, b: Tensor, h0: Tensor | None = None,
                      threads: int | None = None) -> Tensor:
    """``h_t = a_t * h_{t-1} + b_t`` for all t by parallel scan, differentiable."""
    if a.shape != b.shape or a.ndim != 3:
        raise DimensionError(f"linear_recurrence: a {a.shape} and b {b.shape} must both be [B, T, D]")
    h0_data = None if h0 is None else h0.data
    h = scan.parallel_scan(a.data, b.data, h0_data, threads=threads)

    def backward(g):
        da, db, dh0 = scan.reverse_scan_grads(a.data, h, g, h0_data, threads=threads)
        return (da, db) if h0 is None else (da, db, dh0)

    parents = (a, b) if h0 is None else (a, b, h0)
    return record(h, parents, backward)


def mingru_parallel(x: Tensor, p: MinGRUParams, h0: Tensor | None = None,
                    threads: int | None = None) -> Tensor:
    """minGRU over the whole sequence at once.

    Gates and candidates for every step come from two projections; the
    recurrence is then solved by the associative scan over
    ``(1 - z_t, z_t * cand_t)``.
    """
    _check_seq(x, p.d_x, "mingru_parallel")
    if h0 is not None:
        h0 = _initial_state(x, p.d_h, h0)
    z = sigmoid(linear_forward(x, p.w_z, p.b_z))
    cand = linear_forward(x, p.w_h, p.b_h)
    return linear_recurrence(1.0 - z, mul(z, cand), h0, threads=threads)


def mingru_forward(x: Tensor, p: MinGRUParams, mode: str = "parallel") -> Tensor:
    if mode == "parallel":
        return mingru_parallel(x, p)
    if mode == "sequential":
        return mingru_sequential(x, p)
    raise ValueError(f"unknown minGRU mode {mode!r}")


def mingru_param_count(d_x: int, d_h: int) -> int:
    return 2 * d_h * (d_x + 1)


def gru_param_count(d_x: int, d_h: int) -> int:
    return 3 * (d_h * d_x + d_h * d_h + d_h)


# ---------------------------------------------------------------------------
# Mamba-style block with a minGRU mixer
# ---------------------------------------------------------------------------
@dataclass
class MambaBlockParams(ParamGroup):
    up_w: Tensor      # [1, F]
    up_b: Tensor
    conv_k: Tensor    # [3, F, F]
    conv_b: Tensor
    gru: MinGRUParams
    gate_w: Tensor    # [1, F]
    gate_b: Tensor
    down_w: Tensor    # [F, 1]
    down_b: Tensor

    @property
    def features(self) -> int:
        return self.up_w.shape[1]

    @classmethod
    def init(cls, features: int, rng: np.random.Generator, kernel_size: int = 3,
             dtype=np.float32) -> "MambaBlockParams":
        f = features
        return cls(
            up_w=uniform_init(rng, (1, f), 1, dtype),
            up_b=uniform_init(rng, (f,), 1, dtype),
            conv_k=uniform_init(rng, (kernel_size, f, f), kernel_size * f, dtype),
            conv_b=uniform_init(rng, (f,), kernel_size * f, dtype),
            gru=MinGRUParams.init(f, f, rng, dtype),
            gate_w=uniform_init(rng, (1, f), 1, dtype),
            gate_b=uniform_init(rng, (f,), 1, dtype),
            down_w=uniform_init(rng, (f, 1), f, dtype),
            down_b=uniform_init(rng, (1,), f, dtype),
        )


def mamba_block_forward(x: Tensor, p: MambaBlockParams, mode: str = "parallel") -> Tensor:
    """Residual gated block mapping ``[B, T, 1]`` to ``[B, T, 1]``.

    up-projection -> conv (K=3) -> SiLU -> minGRU, multiplied by
    SiLU(gate projection of the raw input), projected back down and added
    to the input.
    """
    if x.ndim != 3 or x.shape[2] != 1:
        raise DimensionError(f"mamba block expects [B, T, 1] input, got {x.shape}")
    u = linear_forward(x, p.up_w, p.up_b)
    u = silu(conv1d_same(u, p.conv_k, p.conv_b))
    mixed = mingru_forward(u, p.gru, mode)
    gate = silu(linear_forward(x, p.gate_w, p.gate_b))
    return x + linear_forward(mixed * gate, p.down_w, p.down_b)
