"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layers import (Conv2d, ConvTranspose2d, Dense, MeanPool, Module, ReLU, Reshape,
                     Sequential, Sigmoid, Softmax, Tanh, forward_backward, mlp)

FD_STEP = 1e-6
TOLERANCE = 1e-5


def relative_error(analytic, numeric) -> float:
    """Norm-relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def central_difference(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of the scalar ``f()`` with respect to ``x``, perturbing in place."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class CheckResult:
    kernel: str
    instance: int
    error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def check_module(net: Module, x: np.ndarray, rng: np.random.Generator, step: float = FD_STEP) -> float:
    """Worst relative error over the input and every parameter for ``L = sum(R * net(x))``."""
    x = np.array(x, dtype=np.float64)
    out = net.forward(x)
    upstream = rng.normal(size=out.shape)
    _, grads = forward_backward(net, x, upstream)

    def loss():
        return float(np.sum(upstream * net.forward(x)))

    worst = relative_error(grads["input"], central_difference(loss, x, step))
    for name, p in net.named_params().items():
        worst = max(worst, relative_error(grads[name], central_difference(loss, p.value, step)))
    return worst


def _half(n: int) -> int:
    return (n - 1) // 2 + 1


def _kernel_cases(rng: np.random.Generator) -> dict[str, tuple[Module, np.ndarray]]:
    b = int(rng.integers(1, 4))
    c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    side = int(rng.choice([4, 6, 8]))
    n_in, n_out = int(rng.integers(1, 17)), int(rng.integers(1, 17))
    dims = [int(d) for d in rng.integers(1, 17, size=4)]
    return {
        "dense": (Dense(n_in, n_out, rng), rng.normal(size=(b, n_in))),
        "conv2d": (Conv2d(c_in, c_out, rng), rng.normal(size=(b, c_in, side, side))),
        "conv_transpose2d": (ConvTranspose2d(c_in, c_out, rng), rng.normal(size=(b, c_in, side // 2, side // 2))),
        "relu": (ReLU(), rng.normal(size=(b, n_in)) + 0.01),
        "sigmoid": (Sigmoid(), 3.0 * rng.normal(size=(b, n_in))),
        "tanh": (Tanh(), rng.normal(size=(b, n_in))),
        "softmax": (Softmax(), rng.normal(size=(b, n_in))),
        "mean_pool": (MeanPool(), rng.normal(size=(b, c_in, side, side))),
        "reshape": (Reshape(-1), rng.normal(size=(b, c_in, side, side))),
        "mlp3": (mlp(dims, rng), rng.normal(size=(b, dims[0]))),
        "conv_stack": (
            Sequential(Conv2d(1, 2, rng), ReLU(), Conv2d(2, 3, rng), Reshape(-1),
                       Dense(3 * _half(_half(side)) ** 2, 4, rng), Sigmoid()),
            rng.normal(size=(b, 1, side, side)),
        ),
    }


def kernel_suite(n_instances: int = 20, seed: int = 0, step: float = FD_STEP,
                 tolerance: float = TOLERANCE) -> list[CheckResult]:
    """Check every kernel on ``n_instances`` random small problems."""
    results = []
    for i in range(n_instances):
        rng = np.random.default_rng([seed, i])
        for name, (net, x) in _kernel_cases(rng).items():
            # zero biases would park ReLU inputs exactly on the kink behind dead units
            for p in net.params():
                p.value[...] += rng.normal(0.0, 0.1, p.shape)
            results.append(CheckResult(name, i, check_module(net, x, rng, step), tolerance))
    return results
