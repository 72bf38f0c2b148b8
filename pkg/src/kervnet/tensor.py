"""Dense float64 arrays, reductions and the seeded generator used everywhere.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order, so
``shape`` and the flat row-major ``data`` of the abstract tensor are simply
``arr.shape`` and ``arr.ravel()``.
"""

from __future__ import annotations

import hashlib
import math
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError

Tensor = np.ndarray

_OPS = ("add", "sub", "mul", "abs", "pow")

# 2**-53: maps the top 53 bits of a 64-bit word onto [0, 1).
_U53 = 1.0 / 9007199254740992.0


def as_tensor(values, shape: Sequence[int] | None = None) -> Tensor:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        arr = reshape(arr, shape)
    return arr


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    if math.prod(shape) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {shape}")
    return np.reshape(np.ascontiguousarray(t), shape)


def elementwise(op: str, a, b=None) -> Tensor:
    """Apply ``op`` element by element; ``b`` is a same-shape tensor or a scalar.

    ``abs`` is unary and ignores ``b``.
    """
    if op not in _OPS:
        raise DomainError(f"unknown op {op!r}; expected one of {_OPS}")
    a = as_tensor(a)
    if op == "abs":
        return np.abs(a)
    if b is None:
        raise DomainError(f"op {op!r} needs a second operand")
    if not np.isscalar(b):
        b = as_tensor(b)
        if b.shape != a.shape:
            raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    return np.power(a, b)


def inner(a, b) -> float:
    a = as_tensor(a).ravel()
    b = as_tensor(b).ravel()
    if a.size != b.size:
        raise ShapeError(f"inner: length mismatch {a.size} vs {b.size}")
    return float(np.dot(a, b))


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile between closest ranks.

    With ``n`` sorted values the 1-based rank is ``1 + (n - 1) * p / 100``.
    """
    v = np.sort(as_tensor(values).ravel())
    if v.size == 0:
        raise DomainError("percentile of an empty list")
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"percentile p must lie in [0, 100], got {p}")
    pos = (v.size - 1) * p / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, v.size - 1)
    frac = pos - lo
    return float(v[lo] + (v[hi] - v[lo]) * frac)


class Rng:
    """Seeded stream built on the PCG64 bit generator.

    Only the raw 64-bit output of PCG64 is consumed (its stream is frozen by
    numpy's compatibility policy); every derived distribution is computed
    here, so draws do not depend on numpy's distribution code.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._bits = np.random.PCG64(seed)

    def spawn(self, key) -> "Rng":
        """Independent child stream identified by ``key`` (deterministic)."""
        digest = hashlib.blake2b(f"{self.seed}/{key}".encode(), digest_size=8).digest()
        return Rng(int.from_bytes(digest, "little"))

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(int(n))

    def random(self, shape=()) -> np.ndarray:
        n = math.prod(shape) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _U53
        return u.reshape(shape) if shape else u[0]

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> Tensor:
        if not lo < hi:
            raise DomainError(f"uniform needs lo < hi, got [{lo}, {hi})")
        shape = tuple(shape)
        out = lo + (hi - lo) * np.asarray(self.random(shape), dtype=np.float64)
        # rounding can land exactly on hi
        return np.minimum(out, np.nextafter(hi, lo))

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> Tensor:
        """Box-Muller transform of two uniform streams."""
        shape = tuple(shape)
        n = math.prod(shape) if shape else 1
        u1 = np.atleast_1d(self.random((n,)))
        u2 = np.atleast_1d(self.random((n,)))
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        z = mean + std * z
        return z.reshape(shape) if shape else z[0]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.raw(n)
        return np.argsort(keys, kind="stable")

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        if not lo < hi:
            raise DomainError(f"integers needs lo < hi, got [{lo}, {hi})")
        u = self.random(shape)
        return (lo + np.floor(np.asarray(u) * (hi - lo))).astype(np.int64)


def rand_uniform(rng: Rng, shape, lo: float, hi: float) -> Tensor:
    return rng.uniform(shape, lo, hi)
