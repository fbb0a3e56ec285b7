"""Forward-mode second-order automatic differentiation.

A :class:`Dual2` carries a value together with its gradient and Hessian with
respect to a small vector of seed variables. Gradient and Hessian are kept as
flat tuples of floats: at the dimensions used here (d <= 8, typically 1 or 2)
that is several times faster than small numpy arrays, and these objects sit on
the innermost loop of every Gibbs iteration.

Functions that should be differentiable are written against the elementary
functions in this module (:func:`exp`, :func:`log`, ...), which accept plain
floats as well as duals.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

MAX_DIM = 8


class Dual2:
    """Value with gradient and (row-major, symmetric) Hessian."""

    __slots__ = ("value", "_g", "_h")

    def __init__(self, value: float, grad: Sequence[float], hess: Sequence[float]):
        d = len(grad)
        if d > MAX_DIM:
            raise ValueError(f"dual dimension {d} exceeds {MAX_DIM}")
        if len(hess) != d * d:
            raise ValueError("hessian must hold d*d entries")
        self.value = float(value)
        self._g = tuple(grad)
        self._h = tuple(hess)

    @classmethod
    def _raw(cls, value, g, h):
        obj = cls.__new__(cls)
        obj.value = value
        obj._g = g
        obj._h = h
        return obj

    @classmethod
    def constant(cls, value: float, dim: int) -> "Dual2":
        return cls._raw(float(value), (0.0,) * dim, (0.0,) * (dim * dim))

    @property
    def dim(self) -> int:
        return len(self._g)

    @property
    def grad(self) -> np.ndarray:
        return np.array(self._g)

    @property
    def hess(self) -> np.ndarray:
        d = len(self._g)
        return np.array(self._h).reshape(d, d)

    def __repr__(self) -> str:
        return f"Dual2(value={self.value!r}, grad={list(self._g)!r})"

    # chain rule for a scalar function with derivatives f1, f2 at self.value
    def _apply(self, f0: float, f1: float, f2: float) -> "Dual2":
        g = self._g
        h = self._h
        d = len(g)
        if d == 1:
            g0 = g[0]
            return Dual2._raw(f0, (f1 * g0,), (f1 * h[0] + f2 * (g0 * g0),))
        out = [0.0] * (d * d)
        for i in range(d):
            gi = g[i]
            for j in range(i, d):
                v = f1 * h[i * d + j] + f2 * (gi * g[j])
                out[i * d + j] = v
                out[j * d + i] = v
        return Dual2._raw(f0, tuple(f1 * x for x in g), tuple(out))

    def _coerce(self, other) -> "Dual2":
        if isinstance(other, Dual2):
            if len(other._g) != len(self._g):
                raise ValueError("dual dimension mismatch")
            return other
        return Dual2.constant(other, len(self._g))

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2._raw(
                self.value + other.value,
                tuple(a + b for a, b in zip(self._g, other._g)),
                tuple(a + b for a, b in zip(self._h, other._h)),
            )
        return Dual2._raw(self.value + other, self._g, self._h)

    __radd__ = __add__

    def __neg__(self):
        return Dual2._raw(-self.value, tuple(-a for a in self._g), tuple(-a for a in self._h))

    def __pos__(self):
        return self

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return Dual2._raw(
                self.value - other.value,
                tuple(a - b for a, b in zip(self._g, other._g)),
                tuple(a - b for a, b in zip(self._h, other._h)),
            )
        return Dual2._raw(self.value - other, self._g, self._h)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Dual2):
            c = float(other)
            return Dual2._raw(self.value * c, tuple(c * a for a in self._g), tuple(c * a for a in self._h))
        a, b = self, self._coerce(other)
        av, bv = a.value, b.value
        ag, bg = a._g, b._g
        ah, bh = a._h, b._h
        d = len(ag)
        out = [0.0] * (d * d)
        for i in range(d):
            for j in range(i, d):
                k = i * d + j
                v = bv * ah[k] + av * bh[k] + (ag[i] * bg[j] + bg[i] * ag[j])
                out[k] = v
                out[j * d + i] = v
        g = tuple(bv * x + av * y for x, y in zip(ag, bg))
        return Dual2._raw(av * bv, g, tuple(out))

    __rmul__ = __mul__

    def reciprocal(self) -> "Dual2":
        v = self.value
        if v == 0.0:
            raise ZeroDivisionError("reciprocal of a dual with zero value")
        r = 1.0 / v
        return self._apply(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Dual2):
            return exp(p * log(self))
        p = float(p)
        v = self.value
        if p == 0.0:
            return Dual2.constant(1.0, len(self._g))
        if v <= 0.0 and not p.is_integer():
            raise DomainError(f"non-integer power of non-positive value {v}")
        return self._apply(v**p, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0) if p != 1.0 else 0.0)

    def __rpow__(self, base):
        return exp(self * math.log(base))


Number = float | Dual2


def lift(eta0: Sequence[float]) -> list[Dual2]:
    """Seed one dual per coordinate: unit gradient, zero Hessian."""
    eta0 = [float(x) for x in np.atleast_1d(eta0)]
    d = len(eta0)
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"need between 1 and {MAX_DIM} coordinates, got {d}")
    zeros = (0.0,) * (d * d)
    return [
        Dual2._raw(x, tuple(1.0 if i == j else 0.0 for i in range(d)), zeros)
        for j, x in enumerate(eta0)
    ]


def exp(x):
    if isinstance(x, Dual2):
        e = math.exp(x.value)
        return x._apply(e, e, e)
    return math.exp(x)


def expm1(x):
    if isinstance(x, Dual2):
        e = math.exp(x.value)
        return x._apply(math.expm1(x.value), e, e)
    return math.expm1(x)


def log(x):
    if isinstance(x, Dual2):
        v = x.value
        if v <= 0.0:
            raise DomainError(f"log of non-positive dual value {v}")
        r = 1.0 / v
        return x._apply(math.log(v), r, -r * r)
    if x <= 0.0:
        raise DomainError(f"log of non-positive value {x}")
    return math.log(x)


def log1p(x):
    if isinstance(x, Dual2):
        v = x.value
        if v <= -1.0:
            raise DomainError(f"log1p of value {v} <= -1")
        r = 1.0 / (1.0 + v)
        return x._apply(math.log1p(v), r, -r * r)
    if x <= -1.0:
        raise DomainError(f"log1p of value {x} <= -1")
    return math.log1p(x)


def sqrt(x):
    if isinstance(x, Dual2):
        v = x.value
        if v <= 0.0:
            raise DomainError(f"sqrt of non-positive dual value {v}")
        s = math.sqrt(v)
        return x._apply(s, 0.5 / s, -0.25 / (s * v))
    return math.sqrt(x)


def value_of(x) -> float:
    return x.value if isinstance(x, Dual2) else float(x)


def grad_hess(f: Callable[[list], Number], eta0) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of ``f`` at ``eta0``.

    ``f`` receives a list of coordinates and must be built from arithmetic and
    the elementary functions of this module. A result that does not depend on
    the inputs (a plain float) has zero derivatives.
    """
    seeds = lift(eta0)
    d = len(seeds)
    out = f(seeds)
    if not isinstance(out, Dual2):
        return float(out), np.zeros(d), np.zeros((d, d))
    return out.value, out.grad, out.hess


def fd_oracle(f: Callable[[list], float], eta0, h: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian with fixed step ``h``.

    Truncation error is O(h^2) for both; at the default step the rounding error
    of the Hessian is about 1e-8 times the magnitude of ``f``.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x0 = np.atleast_1d(np.asarray(eta0, dtype=float))
    d = x0.size

    def at(*steps):
        x = x0.copy()
        for i, s in steps:
            x[i] += s
        return float(f(list(x)))

    grad = np.array([(at((i, h)) - at((i, -h))) / (2 * h) for i in range(d)])
    hess = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            if i == j:
                v = (at((i, 2 * h)) - 2 * at() + at((i, -2 * h))) / (4 * h * h)
            else:
                v = (at((i, h), (j, h)) - at((i, h), (j, -h)) - at((i, -h), (j, h)) + at((i, -h), (j, -h))) / (4 * h * h)
            hess[i, j] = hess[j, i] = v
    return grad, hess
