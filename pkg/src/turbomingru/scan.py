"""Associative scans for the first-order linear recurrence ``h_t = a_t * h_{t-1} + b_t``.

Elements are pairs ``(a, b)``; combining an earlier pair with a later one
gives ``(a1 * a2, a2 * b1 + b2)`` with identity ``(1, 0)``.  The work-efficient
Blelloch variant (up-sweep + down-sweep) runs in ``2 log2(T)`` vectorised
passes; a plain loop is kept alongside as the reference.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "TURBOMINGRU_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def sequential_scan(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None) -> np.ndarray:
    """Reference loop over axis 1 of ``[B, T, D]`` arrays."""
    out = np.empty_like(b)
    h = np.zeros_like(b[:, 0]) if h0 is None else h0
    for t in range(b.shape[1]):
        h = a[:, t] * h + b[:, t]
        out[:, t] = h
    return out


def _blelloch(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive scan of pairs along axis 1, returning cumulative (A, B)."""
    n = a.shape[1]
    size = 1 << max(0, (n - 1).bit_length())
    A = np.ones((a.shape[0], size) + a.shape[2:], dtype=a.dtype)
    Bv = np.zeros((b.shape[0], size) + b.shape[2:], dtype=b.dtype)
    A[:, :n] = a
    Bv[:, :n] = b

    # up-sweep: node at right end of each 2*stride block absorbs its left half
    stride = 1
    while stride < size:
        right = slice(2 * stride - 1, size, 2 * stride)
        left = slice(stride - 1, size, 2 * stride)
        Bv[:, right] = A[:, right] * Bv[:, left] + Bv[:, right]
        A[:, right] = A[:, left] * A[:, right]
        stride *= 2

    # down-sweep to an exclusive scan
    A[:, size - 1] = 1
    Bv[:, size - 1] = 0
    stride = size // 2
    while stride >= 1:
        right = slice(2 * stride - 1, size, 2 * stride)
        left = slice(stride - 1, size, 2 * stride)
        la, lb = A[:, left].copy(), Bv[:, left].copy()
        pa, pb = A[:, right], Bv[:, right]
        A[:, left] = pa
        Bv[:, left] = pb
        # prefix of right child = parent prefix followed by left subtree
        Bv[:, right] = la * pb + lb
        A[:, right] = pa * la
        stride //= 2

    # exclusive -> inclusive by folding in each element
    inc_b = a * Bv[:, :n] + b
    inc_a = A[:, :n] * a
    return inc_a, inc_b


def parallel_scan(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None,
                  threads: int | None = None) -> np.ndarray:
    """All ``h_t`` for ``[B, T, D]`` inputs via a Blelloch scan.

    With ``threads > 1`` the independent ``(batch, feature)`` columns are
    split across a thread pool; numpy releases the GIL inside each pass.
    """
    threads = default_threads() if threads is None else max(1, threads)
    if threads == 1 or a.shape[0] * a.shape[2] < 2:
        return _scan_block(a, b, h0)
    bsz, t, d = a.shape
    af = a.transpose(1, 0, 2).reshape(1, t, bsz * d)
    bf = b.transpose(1, 0, 2).reshape(1, t, bsz * d)
    hf = None if h0 is None else h0.reshape(1, bsz * d)
    chunks = np.array_split(np.arange(bsz * d), threads)
    out = np.empty_like(bf)

    def work(cols):
        if len(cols) == 0:
            return
        lo, hi = cols[0], cols[-1] + 1
        out[:, :, lo:hi] = _scan_block(af[:, :, lo:hi], bf[:, :, lo:hi],
                                       None if hf is None else hf[:, lo:hi])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, chunks))
    return out.reshape(t, bsz, d).transpose(1, 0, 2)


def _scan_block(a, b, h0):
    cum_a, cum_b = _blelloch(a, b)
    if h0 is None:
        return cum_b
    return cum_a * h0[:, None] + cum_b


def reverse_scan_grads(a: np.ndarray, h: np.ndarray, g: np.ndarray, h0: np.ndarray | None,
                       threads: int | None = None):
    """Backward pass of the recurrence given upstream ``g = dL/dh``.

    The adjoint ``lam_t = g_t + a_{t+1} lam_{t+1}`` is itself a linear
    recurrence run backwards in time, so the same scan is reused.
    Returns ``(da, db, dh0)``.
    """
    a_next = np.ones_like(a)
    a_next[:, :-1] = a[:, 1:]
    lam = parallel_scan(a_next[:, ::-1], g[:, ::-1], threads=threads)[:, ::-1]
    h_prev = np.zeros_like(h)
    h_prev[:, 1:] = h[:, :-1]
    if h0 is not None:
        h_prev[:, 0] = h0
    da = lam * h_prev
    dh0 = a[:, 0] * lam[:, 0]
    return da, np.ascontiguousarray(lam), dh0
