"""Logistic function, its derivative, and the two hardware-style approximations.

The approximations only use add, multiply, floor, table lookup and (for the
base-2 variant) one reciprocal, and they run in 32-bit floats by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def sigmoid_exact(x):
    """1 / (1 + e^-x) in 64-bit."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x))
    return y if y.ndim else float(y)


def sigmoid_deriv(y):
    """Slope of the logistic in terms of its output, y(1 - y)."""
    return y * (1 - y)


@dataclass(frozen=True, eq=False)
class SigmoidTable:
    entries: np.ndarray
    lo: float = -15.0
    hi: float = 15.0

    @classmethod
    def build(cls, intervals: int = 256, lo: float = -15.0, hi: float = 15.0,
              dtype=np.float32) -> "SigmoidTable":
        # one extra point so x1 == intervals interpolates without a branch
        xs = np.linspace(lo, hi, intervals + 1)
        entries = (1.0 / (1.0 + np.exp(-xs))).astype(dtype)
        entries.setflags(write=False)
        return cls(entries, lo, hi)

    @property
    def intervals(self) -> int:
        return len(self.entries) - 1

    @property
    def scale(self) -> float:
        return self.intervals / (self.hi - self.lo)


def sigmoid_lut(x, table: SigmoidTable | None = None):
    """Clamp to [lo, hi], remap onto the table, and interpolate linearly."""
    t = table or DEFAULT_TABLE
    e = t.entries
    dt = e.dtype
    xa = np.clip(np.asarray(x, dtype=dt), dt.type(t.lo), dt.type(t.hi))
    x1 = (xa - dt.type(t.lo)) * dt.type(t.scale)
    i = np.minimum(np.floor(x1).astype(np.intp), t.intervals - 1)
    frac = x1 - i.astype(dt)
    lo = e[i]
    y = lo + frac * (e[i + 1] - lo)
    return y if np.ndim(y) else dt.type(y)


@dataclass(frozen=True, eq=False)
class Pow2Approx:
    """2^x as an integer-power table times a squared polynomial for 2^t, t in [0, 0.5]."""

    int_table: np.ndarray
    kmin: int
    kmax: int
    poly: tuple[float, ...]  # ascending powers

    @classmethod
    def build(cls, kmin: int = -64, kmax: int = 64, degree: int = 4,
              dtype=np.float32) -> "Pow2Approx":
        # Chebyshev interpolation is within a hair of minimax at this degree
        cheb = np.polynomial.Chebyshev.interpolate(np.exp2, degree, domain=[0.0, 0.5])
        coeffs = cheb.convert(kind=np.polynomial.Polynomial).coef
        table = np.exp2(np.arange(kmin, kmax + 1, dtype=np.float64)).astype(dtype)
        table.setflags(write=False)
        return cls(table, kmin, kmax, tuple(float(c) for c in coeffs))

    @property
    def dtype(self):
        return self.int_table.dtype


def pow2_decompose(x, p: Pow2Approx | None = None):
    """2^floor(x) * q((x - floor(x)) / 2)^2 with q the [0, 0.5] polynomial."""
    p = p or DEFAULT_POW2
    dt = p.dtype
    xa = np.clip(np.asarray(x, dtype=dt), dt.type(p.kmin), dt.type(p.kmax))
    k = np.floor(xa)
    t = (xa - k) * dt.type(0.5)
    q = np.full_like(t, dt.type(p.poly[-1]))
    for c in reversed(p.poly[:-1]):
        q = q * t + dt.type(c)
    y = p.int_table[k.astype(np.intp) - p.kmin] * (q * q)
    return y if np.ndim(y) else dt.type(y)


def logistic_base2(x, p: Pow2Approx | None = None):
    """1 / (1 + 2^-x) from one power-of-two evaluation and one reciprocal.

    Every step is a monotone float operation (the polynomial has positive
    coefficients), so the result is non-decreasing in x even in 32-bit.
    """
    p = p or DEFAULT_POW2
    dt = p.dtype
    z = pow2_decompose(-np.asarray(x, dtype=dt), p)
    return dt.type(1) / (dt.type(1) + z)


DEFAULT_TABLE = SigmoidTable.build()
DEFAULT_POW2 = Pow2Approx.build()

SIGMOID_VARIANTS = ("exact", "lut", "base2")


def get_sigmoid(name: str, dtype=np.float64) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized squashing function producing arrays of ``dtype``.

    The approximations are always evaluated in 32-bit, like the hardware.
    """
    dtype = np.dtype(dtype)
    if name == "exact":
        fn = sigmoid_exact
    elif name == "lut":
        fn = sigmoid_lut
    elif name == "base2":
        fn = logistic_base2
    else:
        raise ValueError(f"unknown sigmoid variant {name!r}; expected one of {SIGMOID_VARIANTS}")

    def squash(x):
        return np.asarray(fn(x)).astype(dtype, copy=False)

    squash.__name__ = f"sigmoid_{name}"
    return squash
