"""Downstream/upstream update compressors and exact wire-size accounting.

Three compressor families are implemented: magnitude masking (top fraction
by absolute value), stochastic uniform quantization, and one-step power
iteration low-rank factorization. Each produces a tagged wire object that
knows its own byte size and can be accumulated with later updates covering
adjacent round spans.

Wire values are accounted as 32-bit floats (4 bytes each). Masked and dense
values are round-tripped through float32 at compression time so the cast
is part of the model math, but accumulated sums are kept in float64 so
that decode(accumulate(parts)) == sum(decode(part)) holds exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .core import MatrixShape, RngStream

__all__ = [
    "CompressorConfig",
    "Masked",
    "Quantized",
    "QuantSegment",
    "LowRank",
    "Dense",
    "Zero",
    "CompressedUpdate",
    "compress",
    "decompress",
    "accumulate",
    "wire_size",
]

VALUE_BYTES = 4  # 32-bit floats on the wire


class SpanError(ValueError):
    """Raised when accumulated parts do not cover contiguous ascending spans."""


@dataclass(frozen=True)
class CompressorConfig:
    """Configuration for one compressor.

    kind: one of "topk", "quant", "lowrank", "identity".
    Only the field matching the kind is meaningful: `ratio` for topk,
    `bits` for quant, `rank` for lowrank.
    """

    kind: str
    ratio: float = 0.2
    bits: int = 4
    rank: int = 1

    def __post_init__(self):
        if self.kind not in ("topk", "quant", "lowrank", "identity"):
            raise ValueError(f"unknown compressor kind {self.kind!r}")
        if self.kind == "topk" and not (0.0 < self.ratio <= 1.0):
            raise ValueError(f"topk ratio must be in (0,1], got {self.ratio}")
        if self.kind == "quant" and not (1 <= self.bits <= 32):
            raise ValueError(f"quant bits must be in [1,32], got {self.bits}")
        if self.kind == "lowrank" and self.rank < 1:
            raise ValueError(f"lowrank rank must be >= 1, got {self.rank}")


@dataclass(frozen=True)
class Masked:
    """Sparse update: strictly increasing positions plus their values."""

    indices: np.ndarray  # int64, sorted, unique
    values: np.ndarray   # float64 (float32-cast at compress time)
    span: tuple[int, int]


@dataclass(frozen=True)
class QuantSegment:
    """One round's quantized block: symmetric signed codes with one scale."""

    scale: float
    codes: np.ndarray  # int64 in [-(2^(b-1)-1), 2^(b-1)-1]
    bits: int


@dataclass(frozen=True)
class Quantized:
    segments: tuple[QuantSegment, ...]
    span: tuple[int, int]


@dataclass(frozen=True)
class LowRank:
    """Factorized update M ~= P @ Q with P (a x r) and Q (r x b)."""

    shape: MatrixShape
    p: np.ndarray  # (a, r) float64
    q: np.ndarray  # (r, b) float64
    span: tuple[int, int]


@dataclass(frozen=True)
class Dense:
    values: np.ndarray  # float64 (float32-cast at compress time)
    span: tuple[int, int]


@dataclass(frozen=True)
class Zero:
    """Canonical empty-range update: decodes to zeros, zero bytes on the wire."""

    span: tuple[int, int] = (0, -1)


CompressedUpdate = Union[Masked, Quantized, LowRank, Dense, Zero]


def _quant_levels(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def _gram_schmidt(m: np.ndarray) -> np.ndarray:
    """Orthonormalize columns of m in place order; zero columns stay zero."""
    q = m.astype(np.float64).copy()
    for j in range(q.shape[1]):
        for i in range(j):
            q[:, j] -= np.dot(q[:, i], q[:, j]) * q[:, i]
        norm = np.linalg.norm(q[:, j])
        if norm > 0.0:
            q[:, j] /= norm
        else:
            q[:, j] = 0.0
    return q


def compress(
    cfg: CompressorConfig,
    update: np.ndarray,
    shape: MatrixShape | None = None,
    rng: RngStream | None = None,
    span: tuple[int, int] = (0, 0),
) -> CompressedUpdate:
    """Compress a flat update vector into a wire object covering `span`."""
    v = np.asarray(update, dtype=np.float64).ravel()
    dim = v.size
    if cfg.kind == "identity":
        return Dense(v.astype(np.float32).astype(np.float64), span)
    if cfg.kind == "topk":
        if not np.any(v):
            return Masked(np.empty(0, dtype=np.int64), np.empty(0), span)
        k = max(1, math.ceil(cfg.ratio * dim))
        k = min(k, dim)
        # Largest |value| first; ties broken by lower index.
        order = np.lexsort((np.arange(dim), -np.abs(v)))
        keep = np.sort(order[:k]).astype(np.int64)
        vals = v[keep].astype(np.float32).astype(np.float64)
        return Masked(keep, vals, span)
    if cfg.kind == "quant":
        scale = float(np.max(np.abs(v)))
        levels = _quant_levels(cfg.bits)
        if scale == 0.0 or levels == 0:
            codes = np.zeros(dim, dtype=np.int64)
            return Quantized((QuantSegment(0.0, codes, cfg.bits),), span)
        if rng is None:
            raise ValueError("quant compression requires an rng stream")
        scaled = v / scale * levels
        floor = np.floor(scaled)
        frac = scaled - floor
        bump = rng.generator().random(dim) < frac
        codes = (floor + bump).astype(np.int64)
        np.clip(codes, -levels, levels, out=codes)
        return Quantized((QuantSegment(np.float32(scale), codes, cfg.bits),), span)
    # lowrank
    if shape is None:
        raise ValueError("lowrank compression requires a matrix shape")
    if shape.dim != dim:
        raise ValueError(f"shape {shape} does not cover dim {dim}")
    if rng is None:
        raise ValueError("lowrank compression requires an rng stream")
    m = v.reshape(shape.rows, shape.cols)
    q0 = rng.generator().standard_normal((shape.cols, cfg.rank))
    p = _gram_schmidt(m @ q0)
    q = p.T @ m
    return LowRank(shape, p, q, span)


def decompress(cu: CompressedUpdate, dim: int) -> np.ndarray:
    """Decode a wire object into a dense float64 vector of length dim."""
    if isinstance(cu, Zero):
        return np.zeros(dim)
    if isinstance(cu, Dense):
        if cu.values.size != dim:
            raise ValueError(f"dense update dim {cu.values.size} != {dim}")
        return cu.values.astype(np.float64)
    if isinstance(cu, Masked):
        out = np.zeros(dim)
        if cu.indices.size:
            if cu.indices[-1] >= dim:
                raise ValueError("mask index out of range")
            out[cu.indices] = cu.values
        return out
    if isinstance(cu, Quantized):
        out = np.zeros(dim)
        for seg in cu.segments:
            if seg.codes.size != dim:
                raise ValueError(f"quant segment dim {seg.codes.size} != {dim}")
            levels = _quant_levels(seg.bits)
            if levels > 0 and seg.scale != 0.0:
                out += seg.codes * (float(seg.scale) / levels)
        return out
    if isinstance(cu, LowRank):
        if cu.shape.dim != dim:
            raise ValueError(f"lowrank shape dim {cu.shape.dim} != {dim}")
        return (cu.p @ cu.q).ravel()
    raise TypeError(f"unknown update variant {type(cu)!r}")


def wire_size(cu: CompressedUpdate, dim: int) -> int:
    """Deterministic byte count of a wire object."""
    if isinstance(cu, Zero):
        return 0
    if isinstance(cu, Dense):
        return VALUE_BYTES * dim
    if isinstance(cu, Masked):
        return math.ceil(dim / 8) + VALUE_BYTES * int(cu.indices.size)
    if isinstance(cu, Quantized):
        return sum(VALUE_BYTES + math.ceil(seg.bits * dim / 8) for seg in cu.segments)
    if isinstance(cu, LowRank):
        return VALUE_BYTES * cu.p.shape[1] * (cu.shape.rows + cu.shape.cols)
    raise TypeError(f"unknown update variant {type(cu)!r}")


def _check_spans(parts: Sequence[CompressedUpdate]) -> tuple[int, int]:
    spans = [p.span for p in parts]
    for prev, cur in zip(spans, spans[1:]):
        if cur[0] != prev[1] + 1:
            raise SpanError(f"non-contiguous spans {prev} -> {cur}")
    return spans[0][0], spans[-1][1]


def _dense_sum(parts: Sequence[CompressedUpdate], dim: int, span) -> Dense:
    total = np.zeros(dim)
    for p in parts:
        total += decompress(p, dim)
    return Dense(total, span)


def accumulate(cfg: CompressorConfig, parts: Sequence[CompressedUpdate], dim: int) -> CompressedUpdate:
    """Combine per-round updates over adjacent spans into one wire object.

    The combined object always decodes to the sum of the parts' decodings.
    Quantized and low-rank accumulations fall back to a dense vector once
    their concatenated wire size would exceed the dense size.
    """
    parts = [p for p in parts if not isinstance(p, Zero)]
    if not parts:
        return Zero()
    span = _check_spans(parts)
    if len(parts) == 1:
        return parts[0]
    dense_bytes = VALUE_BYTES * dim
    if any(isinstance(p, Dense) for p in parts):
        return _dense_sum(parts, dim, span)
    kinds = {type(p) for p in parts}
    if len(kinds) != 1:
        raise ValueError(f"cannot accumulate mixed update kinds {kinds}")
    first = parts[0]
    if isinstance(first, Masked):
        total = np.zeros(dim)
        for p in parts:
            if p.indices.size:
                np.add.at(total, p.indices, p.values)
        union = np.flatnonzero(total != 0.0)
        # Keep indices touched by any part even if values cancelled to zero;
        # the mask union is what the size model observes.
        touched = np.unique(np.concatenate([p.indices for p in parts])) if parts else union
        return Masked(touched.astype(np.int64), total[touched], span)
    if isinstance(first, Quantized):
        segments = tuple(seg for p in parts for seg in p.segments)
        combined = Quantized(segments, span)
        if wire_size(combined, dim) > dense_bytes:
            return _dense_sum(parts, dim, span)
        return combined
    if isinstance(first, LowRank):
        shape = first.shape
        p_stack = np.concatenate([p.p for p in parts], axis=1)
        q_stack = np.concatenate([p.q for p in parts], axis=0)
        combined = LowRank(shape, p_stack, q_stack, span)
        if wire_size(combined, dim) > dense_bytes:
            return _dense_sum(parts, dim, span)
        return combined
    raise TypeError(f"unknown update variant {type(first)!r}")
