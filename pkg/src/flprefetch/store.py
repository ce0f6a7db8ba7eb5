"""Server-side model timeline, per-round compressed deltas, and size profiling.

The store owns the invariant models[t+1] == models[t] + decode(deltas[t])
by construction: the committed model is always produced from the decoded
compressed delta, never from the raw aggregate.
"""
from __future__ import annotations

import math
from typing import Dict

import numpy as np

from .compress import (
    CompressedUpdate,
    CompressorConfig,
    VALUE_BYTES,
    Zero,
    accumulate,
    compress,
    decompress,
    wire_size,
)
from .core import MatrixShape, RngStream

__all__ = ["ServerStore", "SizeProfiler", "RetentionError"]


class RetentionError(KeyError):
    """Raised when an evicted round's model or delta is requested."""


class SizeProfiler:
    """Running mean of observed accumulated-update sizes, keyed by span length.

    Before a span length has been observed, an analytic size estimate for
    the configured compressor is returned instead so the scheduler has
    usable numbers from round one. For masking compressors the profile is
    clamped to be non-decreasing in span length, matching the monotone
    growth of the mask union.
    """

    def __init__(self, cfg: CompressorConfig, dim: int):
        self.cfg = cfg
        self.dim = dim
        self.base_model_size = VALUE_BYTES * dim
        self._count: Dict[int, int] = {}
        self._mean: Dict[int, float] = {}

    def record(self, span: int, size: int) -> None:
        if span < 1:
            return
        n = self._count.get(span, 0) + 1
        mean = self._mean.get(span, 0.0)
        self._count[span] = n
        self._mean[span] = mean + (size - mean) / n

    def _analytic(self, k: int) -> float:
        cfg, dim = self.cfg, self.dim
        if cfg.kind == "quant":
            per_round = VALUE_BYTES + math.ceil(cfg.bits * dim / 8)
            return min(k * per_round, self.base_model_size)
        if cfg.kind == "lowrank":
            shape = MatrixShape.near_square(dim)
            per_round = VALUE_BYTES * cfg.rank * (shape.rows + shape.cols)
            return min(k * per_round, self.base_model_size)
        if cfg.kind == "topk":
            one = self._mean.get(1)
            if one is None:
                one = math.ceil(dim / 8) + VALUE_BYTES * max(1, math.ceil(cfg.ratio * dim))
            return min(self.base_model_size, k * one)
        return float(self.base_model_size)  # identity/dense

    def profiled_size(self, span: int) -> float:
        if span <= 0:
            return 0.0
        if self.cfg.kind == "topk":
            # Monotone in span: a longer miss window never shrinks the union.
            cap = self.base_model_size + math.ceil(self.dim / 8)
            best = 0.0
            for k in range(1, span + 1):
                est = self._mean.get(k, None)
                if est is None:
                    est = self._analytic(k)
                best = max(best, est)
            return min(best, cap)
        return self._mean.get(span, None) or self._analytic(span)


class ServerStore:
    """Model history w_t plus compressed per-round deltas with a fixed horizon.

    Rounds are 1-based: models[1] is the initial model, commit_round at
    round t records deltas[t] and creates models[t+1].
    """

    def __init__(
        self,
        init_model: np.ndarray,
        shape: MatrixShape,
        dl_cfg: CompressorConfig,
        retention: int,
    ):
        init_model = np.asarray(init_model, dtype=np.float64)
        if shape.dim != init_model.size:
            raise ValueError("matrix shape does not cover the model dimension")
        self.dim = init_model.size
        self.shape = shape
        self.dl_cfg = dl_cfg
        self.retention = max(2, retention)
        self.current_round = 1
        self.models: Dict[int, np.ndarray] = {1: init_model}
        self.deltas: Dict[int, CompressedUpdate] = {}
        self.profiler = SizeProfiler(dl_cfg, self.dim)

    @property
    def base_model_size(self) -> int:
        return VALUE_BYTES * self.dim

    def commit_round(self, aggregated: np.ndarray, rng: RngStream) -> CompressedUpdate:
        """Compress and store the aggregate for the current round, advance t."""
        t = self.current_round
        aggregated = np.asarray(aggregated, dtype=np.float64)
        if aggregated.size != self.dim:
            raise ValueError(f"aggregate dim {aggregated.size} != {self.dim}")
        cu = compress(self.dl_cfg, aggregated, self.shape, rng, span=(t, t))
        self.deltas[t] = cu
        self.models[t + 1] = self.models[t] + decompress(cu, self.dim)
        self.profiler.record(1, wire_size(cu, self.dim))
        self.current_round = t + 1
        self._evict()
        return cu

    def _evict(self) -> None:
        floor = self.current_round - self.retention
        for r in [r for r in self.deltas if r < floor]:
            del self.deltas[r]
        for r in [r for r in self.models if r < floor]:
            del self.models[r]

    def delta_range(self, t1: int, t2: int) -> CompressedUpdate:
        """Accumulated compressed deltas for rounds t1..t2 (empty if t1 > t2)."""
        if t1 > t2:
            return Zero()
        parts = []
        for r in range(t1, t2 + 1):
            if r not in self.deltas:
                raise RetentionError(f"delta for round {r} evicted or not committed")
            parts.append(self.deltas[r])
        cu = accumulate(self.dl_cfg, parts, self.dim)
        self.profiler.record(t2 - t1 + 1, wire_size(cu, self.dim))
        return cu

    def combined_base(self, p: int) -> tuple[np.ndarray, int]:
        """Dense base-model download for round p: (w_p, size in bytes)."""
        if p not in self.models:
            raise RetentionError(f"model for round {p} evicted or not committed")
        return self.models[p], self.base_model_size

    def model(self, t: int) -> np.ndarray:
        if t not in self.models:
            raise RetentionError(f"model for round {t} evicted or not committed")
        return self.models[t]
