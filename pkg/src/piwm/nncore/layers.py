"""Differentiable kernels with hand-written backward passes.

Every module caches what it needs during ``forward`` and returns the input
gradient from ``backward`` while accumulating parameter gradients into
``Param.grad``.  Everything is float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A kernel produced NaN or inf; the message names the kernel."""


class Param:
    __slots__ = ("name", "value", "grad", "trainable")

    def __init__(self, value, name: str = ""):
        self.name = name
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.trainable = True

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def freeze(self):
        self.trainable = False
        self.value.flags.writeable = False

    def assign(self, value):
        if not self.trainable:
            raise RuntimeError(f"parameter {self.name!r} is frozen")
        self.value[...] = value

    def __repr__(self):
        state = "trainable" if self.trainable else "frozen"
        return f"Param({self.name!r}, shape={self.value.shape}, {state})"


class Module:
    """Base class; subclasses set ``self._params`` (ordered name -> Param)."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def named_params(self, prefix: str = "") -> dict[str, Param]:
        return {prefix + k: p for k, p in self._params.items()}

    def params(self) -> list[Param]:
        return list(self.named_params().values())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def freeze(self):
        for p in self.params():
            p.freeze()

    @property
    def frozen(self) -> bool:
        ps = self.params()
        return bool(ps) and not any(p.trainable for p in ps)

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 2.0):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = Param(rng.normal(0.0, np.sqrt(gain / n_in), (n_in, n_out)), "weight")
        self.bias = Param(np.zeros(n_out), "bias")
        self._params = {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense expects last dim {self.n_in}, got {x.shape}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad):
        x = self._x.reshape(-1, self.n_in)
        g = grad.reshape(-1, self.n_out)
        self.weight.grad += x.T @ g
        self.bias.grad += g.sum(axis=0)
        return grad @ self.weight.value.T


def _im2col(x, k, stride, pad):
    """(B, C, H, W) -> (B * Ho * Wo, C * k * k) patches and output size."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(cols, shape, k, stride, pad, ho, wo):
    """Adjoint of ``_im2col``: scatter-add patches back into an image."""
    b, c, h, w = shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    patches = cols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += patches[..., i, j]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return out


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 2, pad: int = 1):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride, self.pad = c_in, c_out, kernel, stride, pad
        fan_in = c_in * kernel * kernel
        self.weight = Param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in, kernel, kernel)), "weight")
        self.bias = Param(np.zeros(c_out), "bias")
        self._params = {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"Conv2d expects (B, {self.c_in}, H, W), got {x.shape}")
        cols, ho, wo = _im2col(x, self.k, self.stride, self.pad)
        self._cache = (x.shape, cols, ho, wo)
        out = cols @ self.weight.value.reshape(self.c_out, -1).T + self.bias.value
        return out.reshape(x.shape[0], ho, wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, grad):
        shape, cols, ho, wo = self._cache
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.weight.grad += (g.T @ cols).reshape(self.weight.shape)
        self.bias.grad += g.sum(axis=0)
        dcols = g @ self.weight.value.reshape(self.c_out, -1)
        return _col2im(dcols, shape, self.k, self.stride, self.pad, ho, wo)


class ConvTranspose2d(Module):
    """Transposed convolution; output side is ``(H - 1) * stride - 2 * pad + kernel``."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 4, stride: int = 2, pad: int = 1):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride, self.pad = c_in, c_out, kernel, stride, pad
        fan_in = c_in * kernel * kernel // (stride * stride)
        self.weight = Param(rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_in, c_out, kernel, kernel)), "weight")
        self.bias = Param(np.zeros(c_out), "bias")
        self._params = {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"ConvTranspose2d expects (B, {self.c_in}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        ho = (h - 1) * self.stride - 2 * self.pad + self.k
        wo = (w - 1) * self.stride - 2 * self.pad + self.k
        xf = x.transpose(0, 2, 3, 1).reshape(-1, self.c_in)
        self._cache = (xf, x.shape, h, w)
        cols = xf @ self.weight.value.reshape(self.c_in, -1)
        out = _col2im(cols, (b, self.c_out, ho, wo), self.k, self.stride, self.pad, h, w)
        return out + self.bias.value[None, :, None, None]

    def backward(self, grad):
        xf, shape, h, w = self._cache
        self.bias.grad += grad.sum(axis=(0, 2, 3))
        gcols, _, _ = _im2col(grad, self.k, self.stride, self.pad)
        self.weight.grad += (xf.T @ gcols).reshape(self.weight.shape)
        dx = gcols @ self.weight.value.reshape(self.c_in, -1).T
        return dx.reshape(shape[0], h, w, self.c_in).transpose(0, 3, 1, 2)


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class Sigmoid(Module):
    def forward(self, x):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        self._y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


class Tanh(Module):
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad):
        return grad * (1.0 - self._y**2)


class Softmax(Module):
    """Softmax over the last axis."""

    def forward(self, x):
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        self._y = z / z.sum(axis=-1, keepdims=True)
        return self._y

    def backward(self, grad):
        y = self._y
        return y * (grad - (grad * y).sum(axis=-1, keepdims=True))


class MeanPool(Module):
    """Mean over the given axes (spatial axes of an image batch by default)."""

    def __init__(self, axes=(2, 3)):
        super().__init__()
        self.axes = tuple(axes)

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=self.axes)

    def backward(self, grad):
        count = np.prod([self._shape[a] for a in self.axes])
        g = np.expand_dims(grad, self.axes)
        return np.broadcast_to(g, self._shape) / count


class Reshape(Module):
    """Reshape everything after the batch axis."""

    def __init__(self, *shape):
        super().__init__()
        self.shape = shape

    def forward(self, x):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._in)


def Flatten():
    return Reshape(-1)


class Sequential(Module):
    def __init__(self, *layers: Module, check_finite: bool = True):
        super().__init__()
        self.layers = list(layers)
        self.check_finite = check_finite

    def named_params(self, prefix: str = "") -> dict[str, Param]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_params(f"{prefix}{i}.{type(layer).__name__.lower()}."))
        return out

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if self.check_finite and not np.all(np.isfinite(x)):
                raise NonFiniteError(f"layer {i} ({type(layer).__name__}) produced a non-finite output")
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def mlp(sizes: list[int], rng: np.random.Generator, out_gain: float = 1.0) -> Sequential:
    """Dense layers with ReLU between them and a linear output."""
    layers: list[Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        layers.append(Dense(a, b, rng, gain=out_gain if last else 2.0))
        if not last:
            layers.append(ReLU())
    return Sequential(*layers)


def forward_backward(net: Module, x, upstream) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Run ``net`` on ``x``, pull ``upstream`` back, return outputs and parameter gradients.

    Gradients are freshly zeroed first, so the returned arrays are exactly
    d(sum(upstream * out)) / d(param).  The input gradient is stored under "input".
    """
    net.zero_grad()
    out = net.forward(x)
    if np.shape(upstream) != out.shape:
        raise ShapeError(f"upstream gradient shape {np.shape(upstream)} != output shape {out.shape}")
    grad_in = net.backward(np.asarray(upstream, dtype=np.float64))
    grads = {name: p.grad.copy() for name, p in net.named_params().items()}
    grads["input"] = grad_in
    return out, grads
