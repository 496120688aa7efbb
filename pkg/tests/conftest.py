"""Shared test helpers: finite-difference gradients and seeded RNG."""

import numpy as np
import pytest

from entromix import tensor as T
from entromix.tensor import Tensor


def fd_grad(fn, x, step=1e-4):
    """Central-difference gradient of a scalar function at ``x``.

    ``fn`` maps a float64 ndarray to a python float and must not mutate
    its argument. The returned array has the same shape as ``x``.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def check_grad(build_loss, x0, step=1e-4, atol=1e-7, rtol=1e-5):
    """Compare reverse-mode gradients against central differences.

    ``build_loss`` maps a Tensor to a scalar Tensor. The analytic gradient
    comes from one backward pass; the numeric one re-runs the same forward
    (gradient recording off) under coordinate perturbations.
    """
    x0 = np.array(x0, dtype=np.float64)

    leaf = Tensor(x0.copy(), requires_grad=True)
    loss = build_loss(leaf)
    loss.backward()
    analytic = leaf.grad

    def forward_value(arr):
        with T.no_grad():
            return build_loss(Tensor(arr.copy())).item()

    numeric = fd_grad(forward_value, x0, step=step)
    np.testing.assert_allclose(analytic, numeric, atol=atol, rtol=rtol)
    return analytic


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(autouse=True)
def clean_tape():
    """Keep tape state from leaking between tests."""
    T.clear_tape()
    yield
    T.clear_tape()
