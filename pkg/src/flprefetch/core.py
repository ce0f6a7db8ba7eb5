"""Parameter-vector math and deterministic RNG streams.

Model state is represented as flat 1-D float64 numpy arrays. All linear
algebra here uses a fixed left-to-right evaluation order so that results
are bit-reproducible across runs regardless of how callers order their
work.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "MatrixShape",
    "RngStream",
    "axpy",
    "weighted_sum",
    "as_param_vector",
]


class DimensionMismatchError(ValueError):
    """Raised when two parameter vectors of different lengths are combined."""


@dataclass(frozen=True)
class MatrixShape:
    """Matrix view (rows x cols) of a flat parameter vector."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"invalid matrix shape {self.rows}x{self.cols}")

    @property
    def dim(self) -> int:
        return self.rows * self.cols

    @staticmethod
    def near_square(dim: int) -> "MatrixShape":
        """Most balanced factorization a*b == dim with a >= b."""
        b = int(np.sqrt(dim))
        while b > 1 and dim % b != 0:
            b -= 1
        return MatrixShape(dim // b, b)


def as_param_vector(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Coerce to a 1-D float64 array and validate finiteness."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("parameter vector must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError("parameter vector contains NaN or Inf")
    return v


def axpy(y: np.ndarray, alpha: float, x: np.ndarray) -> np.ndarray:
    """Return y + alpha * x (elementwise, float64)."""
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise DimensionMismatchError(f"axpy: {y.shape} vs {x.shape}")
    return y + alpha * x


def weighted_sum(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Fixed-order weighted sum of equal-length vectors.

    Summation is strictly left to right in the given order, so callers that
    present inputs in a canonical order get bit-identical results.
    """
    if len(vectors) == 0:
        raise ValueError("weighted_sum: empty input")
    if len(vectors) != len(weights):
        raise ValueError("weighted_sum: weights/vectors length mismatch")
    first = np.asarray(vectors[0], dtype=np.float64)
    acc = weights[0] * first
    for v, w in zip(vectors[1:], weights[1:]):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != first.shape:
            raise DimensionMismatchError("weighted_sum: dimension mismatch")
        acc = acc + w * v
    return acc


def _mix(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


@dataclass(frozen=True)
class RngStream:
    """Splittable deterministic random stream.

    A stream is identified by a 64-bit seed plus a key tuple. Forking with
    the same ids always yields the same child stream, independent of call
    order, so simulation decisions never depend on event interleaving.
    """

    seed: int
    key: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "key", tuple(_mix(i) for i in self.key))

    def fork(self, *ids) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(_mix(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))


def fork_stream(rng: RngStream, round_: int, client: int, tag: str) -> RngStream:
    """Child stream for a (round, client, purpose) triple."""
    return rng.fork(round_, client, tag)
