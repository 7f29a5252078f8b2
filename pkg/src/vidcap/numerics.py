"""Dense linear algebra, activations, a reproducible RNG, and a finite-difference oracle.

Everything here operates on plain float64 numpy arrays. The RNG is a
counter-based splitmix64 generator so that streams are bit-identical
across platforms and runs.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .exceptions import DomainError, NumericError, ShapeError

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


def _mix64_scalar(z: int) -> int:
    """splitmix64 finalizer on a Python int (used for seeding substreams)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays (wrapping math)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based splitmix64 stream: output(i) = mix64(seed + i * gamma).

    Identical seeds give bit-identical streams on every platform. A
    single instance is not thread-safe; use :meth:`fork` for
    independent substreams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        return _mix64(np.uint64(self.seed) + idx * np.uint64(_GAMMA))

    def fork(self, tag: int | str) -> "Rng":
        """Independent substream keyed by (seed, tag). String tags hash
        via FNV-1a so call sites can use readable labels."""
        if isinstance(tag, str):
            h = 0xCBF29CE484222325
            for byte in tag.encode("utf-8"):
                h = ((h ^ byte) * 0x100000001B3) & _MASK64
            tag = h
        return Rng(_mix64_scalar(self.seed ^ _mix64_scalar(tag ^ 0xA5A5A5A5A5A5A5A5)))

    def uniform01(self, size: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Uniform doubles in [0, 1) with full 53-bit resolution."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape) if shape else float(u[0])

    def uniform(self, lo: float, hi: float, size: int | tuple[int, ...] = ()) -> np.ndarray | float:
        return lo + (hi - lo) * self.uniform01(size)

    def normal(self, size: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        npairs = (n + 1) // 2
        raw = self._raw(2 * npairs)
        # u1 in (0, 1] so log() is safe
        u1 = ((raw[:npairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[npairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n). Bias is < 2**-53 * n, negligible at desk scale."""
        if n <= 0:
            raise DomainError(f"integer() needs n >= 1, got {n}")
        return min(int(self.uniform01() * n), n - 1)

    def choice(self, seq: Sequence):
        return seq[self.integer(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integer(i + 1)
            items[i], items[j] = items[j], items[i]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtraction) over a 1-D vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise DomainError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains non-finite entries")
    e = np.exp(x - x.max())
    return e / e.sum()


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sigmoid": sigmoid,
    "tanh": np.tanh,
    "identity": lambda x: np.asarray(x, dtype=np.float64),
}


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    """Apply an elementwise activation: sigmoid, tanh, or identity."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise DomainError(f"unknown activation {kind!r}") from None
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"activate({kind}) got non-finite input")
    return fn(x)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    Used as the independent oracle against the hand-derived backward
    pass; eps must lie in (0, 1e-2].
    """
    if not 0.0 < eps <= 1e-2:
        raise DomainError(f"eps must be in (0, 1e-2], got {eps}")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump[i] = eps
        hi = float(f(theta + bump))
        lo = float(f(theta - bump))
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"non-finite objective at coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def ensure_finite(arr: np.ndarray, name: str) -> np.ndarray:
    """Raise NumericError if any entry of arr is NaN or infinite."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr
