"""Forward-mode dual numbers over numpy arrays.

A ``Dual`` carries a value of shape (B,) and exact partial derivatives of
shape (B, n) with respect to ``n`` seeded inputs.  Only the handful of
operations the structured dynamics models need are provided.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = val
        self.der = der

    @staticmethod
    def const(val, n: int, batch: int) -> "Dual":
        val = np.broadcast_to(np.asarray(val, dtype=np.float64), (batch,)).copy()
        return Dual(val, np.zeros((batch, n)))

    @staticmethod
    def seeds(values: np.ndarray) -> list["Dual"]:
        """One dual per column of ``values`` (B, n), each seeded with its own unit tangent."""
        batch, n = values.shape
        eye = np.eye(n)
        return [Dual(values[:, i].copy(), np.broadcast_to(eye[i], (batch, n)).copy()) for i in range(n)]

    def _lift(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual(np.broadcast_to(np.asarray(other, dtype=np.float64), self.val.shape), 0.0)

    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.val + o.val, self.der + o.der)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __sub__(self, other):
        o = self._lift(other)
        return Dual(self.val - o.val, self.der - o.der)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._lift(other)
        return Dual(self.val * o.val, self.der * _col(o.val) + _col(self.val) * o.der)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        inv = 1.0 / o.val
        return Dual(self.val * inv, (self.der - _col(self.val * inv) * o.der) * _col(inv))

    def __rtruediv__(self, other):
        return self._lift(other) / self


def _col(a):
    return np.asarray(a)[..., None]


def sin(d: Dual) -> Dual:
    return Dual(np.sin(d.val), d.der * _col(np.cos(d.val)))


def cos(d: Dual) -> Dual:
    return Dual(np.cos(d.val), -d.der * _col(np.sin(d.val)))


def tan(d: Dual) -> Dual:
    t = np.tan(d.val)
    return Dual(t, d.der * _col(1.0 + t * t))


def square(d: Dual) -> Dual:
    return Dual(d.val * d.val, d.der * _col(2.0 * d.val))
