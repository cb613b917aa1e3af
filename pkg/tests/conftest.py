import numpy as np
import pytest

from turbomingru.tensor import Tensor

FD_STEP = 1e-4
GRAD_RTOL = 1e-3


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def as_float64(group):
    """Cast every parameter of a layer group to float64 in place."""
    for _, t in group.named_parameters():
        t.data = t.data.astype(np.float64)
        t.grad = np.zeros_like(t.data)
    return group


def numeric_grad(f, arr: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``arr`` (mutated in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + step
        up = f()
        arr[idx] = orig - step
        down = f()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(build, tensors: dict[str, Tensor], rng, rtol: float = GRAD_RTOL) -> dict[str, float]:
    """Compare reverse-mode grads of ``sum(build() * R)`` with finite differences.

    ``build`` must read the current ``.data`` of ``tensors`` on every call.
    Returns the relative error per tensor; asserts each is within ``rtol``.
    """
    out = build()
    weights = rng.standard_normal(out.shape)
    for t in tensors.values():
        t.requires_grad_(True)
        t.zero_grad()
    loss = (build() * Tensor(weights)).sum()
    loss.backward()

    def scalar():
        return float(np.sum(build().data * weights))

    errors = {}
    for name, t in tensors.items():
        num = numeric_grad(scalar, t.data)
        errors[name] = rel_error(t.grad, num)
        assert errors[name] <= rtol, f"{name}: relative gradient error {errors[name]:.2e}"
    return errors
