import math

import numpy as np
import pytest

from flprefetch.compress import CompressorConfig, decompress, wire_size
from flprefetch.core import MatrixShape, RngStream
from flprefetch.store import RetentionError, ServerStore, SizeProfiler

RNG = RngStream(11)


def make_store(dim=40, kind="topk", retention=5, **kw):
    cfg = CompressorConfig(kind, **kw)
    return ServerStore(np.zeros(dim), MatrixShape.near_square(dim), cfg, retention)


def commit_random(store, t, scale=1.0):
    gen = RNG.fork("agg", t).generator()
    agg = scale * gen.standard_normal(store.dim)
    store.commit_round(agg, RNG.fork("dl", t))
    return agg


class TestServerStore:
    def test_initial_state(self):
        store = make_store()
        assert store.current_round == 1
        assert store.model(1).tolist() == [0.0] * store.dim

    def test_commit_advances_round(self):
        store = make_store()
        commit_random(store, 1)
        assert store.current_round == 2
        assert 1 in store.deltas and 2 in store.models

    def test_model_recurrence(self):
        # models[t+1] must equal models[t] plus the decoded committed delta,
        # not the raw aggregate (which the compressor lossily encodes).
        store = make_store(kind="topk", ratio=0.3)
        for t in range(1, 6):
            before = store.model(t).copy()
            commit_random(store, t)
            delta = decompress(store.deltas[t], store.dim)
            assert np.array_equal(store.model(t + 1), before + delta)

    def test_dense_commit_matches_aggregate_at_float32(self):
        store = make_store(kind="identity")
        agg = commit_random(store, 1)
        assert np.array_equal(store.model(2), agg.astype(np.float32).astype(np.float64))

    def test_delta_range_telescopes(self):
        # decode(delta_range(t1, t2)) == models[t2+1] - models[t1] exactly,
        # because accumulation sums the same decoded per-round deltas.
        store = make_store(kind="topk", ratio=0.25, retention=10)
        for t in range(1, 7):
            commit_random(store, t)
        for t1, t2 in [(1, 1), (2, 5), (1, 6), (4, 6)]:
            combined = decompress(store.delta_range(t1, t2), store.dim)
            expect = store.model(t2 + 1) - store.model(t1)
            assert np.max(np.abs(combined - expect)) < 1e-12

    def test_empty_range_is_zero(self):
        store = make_store()
        commit_random(store, 1)
        cu = store.delta_range(3, 2)
        assert wire_size(cu, store.dim) == 0
        assert decompress(cu, store.dim).tolist() == [0.0] * store.dim

    def test_eviction_below_horizon(self):
        store = make_store(retention=3)
        for t in range(1, 10):
            commit_random(store, t)
        assert min(store.deltas) >= store.current_round - 3
        with pytest.raises(RetentionError):
            store.delta_range(1, 2)
        with pytest.raises(RetentionError):
            store.model(1)

    def test_uncommitted_range_rejected(self):
        store = make_store()
        commit_random(store, 1)
        with pytest.raises(RetentionError):
            store.delta_range(1, 2)

    def test_combined_base_size(self):
        store = make_store(dim=50)
        model, size = store.combined_base(1)
        assert size == 4 * 50
        assert model is store.model(1)

    def test_retention_floor_of_two(self):
        store = make_store(retention=0)
        assert store.retention == 2


class TestSizeProfiler:
    def test_cold_start_topk_analytic(self):
        cfg = CompressorConfig("topk", ratio=0.2)
        prof = SizeProfiler(cfg, 800)
        per_round = math.ceil(800 / 8) + 4 * 160
        assert prof.profiled_size(1) == per_round
        assert prof.profiled_size(3) == min(3 * per_round, 4 * 800)

    def test_cold_start_quant_analytic(self):
        cfg = CompressorConfig("quant", bits=4)
        prof = SizeProfiler(cfg, 800)
        assert prof.profiled_size(1) == 4 + 400
        assert prof.profiled_size(2) == 2 * 404
        # Analytic estimate never exceeds the dense base model size.
        assert prof.profiled_size(50) == 4 * 800

    def test_zero_span_is_free(self):
        prof = SizeProfiler(CompressorConfig("topk"), 100)
        assert prof.profiled_size(0) == 0.0
        assert prof.profiled_size(-2) == 0.0

    def test_observed_mean_replaces_analytic(self):
        prof = SizeProfiler(CompressorConfig("quant", bits=4), 800)
        prof.record(2, 700)
        prof.record(2, 900)
        assert prof.profiled_size(2) == 800.0

    def test_topk_profile_monotone_in_span(self):
        prof = SizeProfiler(CompressorConfig("topk", ratio=0.3), 200)
        prof.record(1, 500)
        prof.record(2, 400)  # stale small observation must not reorder
        prof.record(3, 900)
        sizes = [prof.profiled_size(k) for k in range(1, 5)]
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))

    def test_topk_profile_capped(self):
        prof = SizeProfiler(CompressorConfig("topk", ratio=1.0), 100)
        cap = 4 * 100 + math.ceil(100 / 8)
        prof.record(1, 10 ** 9)
        assert prof.profiled_size(4) == cap

    def test_profiler_fed_by_store_commits(self):
        store = make_store(dim=64, kind="topk", ratio=0.25)
        for t in range(1, 5):
            commit_random(store, t)
        # Span-1 profile now reflects observed sizes, which for masking is
        # bitmap + 4 * ceil(0.25 * 64) per round.
        assert store.profiler.profiled_size(1) == math.ceil(64 / 8) + 4 * 16

    def test_profiler_records_ranges(self):
        store = make_store(dim=64, kind="topk", ratio=0.25)
        for t in range(1, 5):
            commit_random(store, t)
        observed = wire_size(store.delta_range(1, 3), store.dim)
        assert store.profiler.profiled_size(3) >= observed
