"""Finite-difference gradient checking shared by the test modules."""

from __future__ import annotations

import numpy as np

from spandec import autodiff as ad
from spandec.autodiff import Tensor

FD_STEP = 1e-5
REL_TOL = 1e-3
ABS_TOL = 1e-8


def central_difference(loss_fn, tensor: Tensor, flat_index: int, step: float = FD_STEP) -> float:
    flat = tensor.data.reshape(-1)
    original = flat[flat_index]
    flat[flat_index] = original + step
    plus = loss_fn().item()
    flat[flat_index] = original - step
    minus = loss_fn().item()
    flat[flat_index] = original
    return (plus - minus) / (2.0 * step)


def check_gradients(
    loss_fn,
    params: dict[str, Tensor],
    max_per_tensor: int | None = None,
    seed: int = 0,
    rel_tol: float = REL_TOL,
    step: float = FD_STEP,
) -> list[str]:
    """Compare analytic gradients with central differences.

    Returns a list of human-readable failure strings (empty = all good).
    When max_per_tensor is set, a seeded sample of entries per tensor is
    checked instead of every coordinate.
    """
    ad.zero_grads(params)
    loss_fn().backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    rng = np.random.default_rng(seed)
    failures = []
    for name, tensor in params.items():
        size = tensor.data.size
        if max_per_tensor is not None and size > max_per_tensor:
            indices = rng.choice(size, size=max_per_tensor, replace=False)
        else:
            indices = np.arange(size)
        grad_flat = analytic[name].reshape(-1)
        for i in indices:
            fd = central_difference(loss_fn, tensor, int(i), step)
            an = grad_flat[i]
            err = abs(fd - an)
            if err > ABS_TOL and err / max(abs(fd), abs(an)) > rel_tol:
                failures.append(
                    f"{name}[{i}]: analytic {an:.3e} vs fd {fd:.3e}"
                )
    return failures
