import numpy as np
import pytest

from flprefetch.core import RngStream
from flprefetch.workload import (
    BandwidthTraceError,
    accuracy,
    centralized_train,
    gen_synth_task,
    learning_rate,
    load_availability,
    load_bandwidth,
    local_train,
    loss_and_grad,
    model_dim,
    online_at,
    predict_proba,
    sample_lognormal_bandwidth,
)

RNG = RngStream(3)


class TestBandwidthTrace:
    def _load(self, tmp_path, text, n=4):
        p = tmp_path / "bw.csv"
        p.write_text(text)
        return load_bandwidth(str(p), RNG.fork("bw"), n)

    def test_mbps_to_bytes(self, tmp_path):
        rows = self._load(tmp_path, "81.29,10.0\n", n=3)
        assert all(dl == 81.29 * 125_000 for dl, _ in rows)
        assert rows[0][0] == pytest.approx(10_161_250.0)
        assert rows[0][1] == 1_250_000.0

    def test_header_skipped(self, tmp_path):
        rows = self._load(tmp_path, "download_mbps,upload_mbps\n2.0,1.0\n")
        assert rows[0] == (250_000.0, 125_000.0)

    def test_blank_lines_ignored(self, tmp_path):
        rows = self._load(tmp_path, "\n1.0,0.5\n\n")
        assert rows[0] == (125_000.0, 62_500.0)

    def test_sampling_with_replacement_deterministic(self, tmp_path):
        text = "".join(f"{i}.5,{i}.25\n" for i in range(1, 9))
        a = self._load(tmp_path, text, n=20)
        b = self._load(tmp_path, text, n=20)
        assert a == b

    def test_bad_value_reports_line(self, tmp_path):
        with pytest.raises(BandwidthTraceError, match=":2:"):
            self._load(tmp_path, "1.0,1.0\nbogus,1.0\n")

    def test_nonpositive_rejected(self, tmp_path):
        with pytest.raises(BandwidthTraceError):
            self._load(tmp_path, "0.0,1.0\n")

    def test_missing_column_rejected(self, tmp_path):
        with pytest.raises(BandwidthTraceError):
            self._load(tmp_path, "5.0\n")

    def test_empty_file_rejected(self, tmp_path):
        with pytest.raises(BandwidthTraceError):
            self._load(tmp_path, "\n")


class TestLognormalBandwidth:
    def test_heavy_tail_ratio(self):
        rows = sample_lognormal_bandwidth(RNG.fork("ln"), 20_000, 50.0, sigma=1.9)
        dl = np.array([d for d, _ in rows])
        p50, p95 = np.percentile(dl, [50, 95])
        assert p95 / p50 >= 20.0
        assert p50 == pytest.approx(50.0 * 125_000, rel=0.05)

    def test_upload_fraction(self):
        rows = sample_lognormal_bandwidth(RNG.fork("uf"), 100, 10.0, ul_fraction=0.25)
        assert all(ul == pytest.approx(0.25 * dl) for dl, ul in rows)

    def test_deterministic(self):
        assert sample_lognormal_bandwidth(RNG.fork("d"), 5) == \
            sample_lognormal_bandwidth(RNG.fork("d"), 5)


class TestAvailability:
    def test_half_open_intervals(self, tmp_path):
        p = tmp_path / "av.csv"
        p.write_text("client_id,start_s,end_s\n3,10,20\n3,30,40\n")
        trace = load_availability(str(p))
        assert online_at(trace, 3, 10.0)
        assert online_at(trace, 3, 19.999)
        assert not online_at(trace, 3, 20.0)
        assert not online_at(trace, 3, 25.0)
        assert online_at(trace, 3, 30.0)

    def test_unlisted_client_always_online(self, tmp_path):
        p = tmp_path / "av.csv"
        p.write_text("1,0,5\n")
        trace = load_availability(str(p))
        assert online_at(trace, 99, 1e9)

    def test_empty_interval_rejected(self, tmp_path):
        p = tmp_path / "av.csv"
        p.write_text("1,5,5\n")
        with pytest.raises(ValueError):
            load_availability(str(p))

    def test_overlap_rejected(self, tmp_path):
        p = tmp_path / "av.csv"
        p.write_text("1,0,10\n1,5,15\n")
        with pytest.raises(ValueError):
            load_availability(str(p))


class TestSynthTask:
    def test_shapes(self):
        task = gen_synth_task(4, 3, 5, skew=0.5, seed=1, samples_per_client=10,
                              test_samples=20)
        assert len(task.client_x) == 4
        assert task.client_x[0].shape == (10, 5)
        assert task.test_x.shape == (20, 5)
        assert set(np.unique(task.test_y)) <= set(range(3))

    def test_deterministic(self):
        a = gen_synth_task(3, 2, 4, 0.5, seed=7)
        b = gen_synth_task(3, 2, 4, 0.5, seed=7)
        assert np.array_equal(a.client_x[2], b.client_x[2])
        assert np.array_equal(a.test_y, b.test_y)

    def test_skew_controls_label_spread(self):
        # Small Dirichlet concentration pushes each client toward one class;
        # large concentration approaches the uniform label mix.
        narrow = gen_synth_task(30, 5, 3, skew=0.05, seed=2, samples_per_client=200)
        wide = gen_synth_task(30, 5, 3, skew=100.0, seed=2, samples_per_client=200)

        def mean_top_share(task):
            shares = []
            for y in task.client_y:
                counts = np.bincount(y, minlength=5)
                shares.append(counts.max() / counts.sum())
            return np.mean(shares)

        assert mean_top_share(narrow) > 0.8
        assert mean_top_share(wide) < 0.4

    def test_model_dim(self):
        assert model_dim(199, 10) == 2000
        assert model_dim(4, 3) == 15


class TestLogisticModel:
    def _small(self):
        return gen_synth_task(2, 3, 4, 1.0, seed=5, samples_per_client=30,
                              test_samples=50)

    def test_proba_rows_sum_to_one(self):
        task = self._small()
        model = RNG.fork("m").generator().standard_normal(model_dim(4, 3))
        probs = predict_proba(model, task.test_x, 4, 3)
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all(probs >= 0)

    def test_gradient_matches_finite_differences(self):
        # Central finite differences on the flat parameter vector; the
        # analytic gradient must agree to 1e-5 relative.
        task = self._small()
        x, y = task.client_x[0], task.client_y[0]
        dim = model_dim(4, 3)
        model = 0.3 * RNG.fork("fd").generator().standard_normal(dim)
        _, grad = loss_and_grad(model, x, y, 4, 3)
        eps = 1e-6
        for i in range(dim):
            bump = np.zeros(dim)
            bump[i] = eps
            lp, _ = loss_and_grad(model + bump, x, y, 4, 3)
            lm, _ = loss_and_grad(model - bump, x, y, 4, 3)
            numeric = (lp - lm) / (2 * eps)
            denom = max(abs(numeric), abs(grad[i]), 1e-8)
            assert abs(numeric - grad[i]) / denom < 1e-5

    def test_local_train_reduces_loss(self):
        task = self._small()
        x, y = task.client_x[0], task.client_y[0]
        model = np.zeros(model_dim(4, 3))
        before, _ = loss_and_grad(model, x, y, 4, 3)
        out = local_train(model, x, y, 4, 3, steps=20, batch_size=10, lr=0.05,
                          rng=RNG.fork("lt"))
        after, _ = loss_and_grad(out, x, y, 4, 3)
        assert after < before

    def test_local_train_deterministic(self):
        task = self._small()
        x, y = task.client_x[1], task.client_y[1]
        model = np.zeros(model_dim(4, 3))
        a = local_train(model, x, y, 4, 3, 5, 10, 0.05, RNG.fork("det"))
        b = local_train(model, x, y, 4, 3, 5, 10, 0.05, RNG.fork("det"))
        assert np.array_equal(a, b)

    def test_centralized_reference_learns(self):
        task = gen_synth_task(10, 5, 20, 1.0, seed=9, samples_per_client=100,
                              test_samples=500)
        model = centralized_train(task, rounds=30, steps=10, batch_size=20,
                                  lr=0.05, seed=9)
        acc = accuracy(model, task.test_x, task.test_y, 20, 5)
        assert acc > 0.8


class TestLearningRate:
    def test_step_decay(self):
        assert learning_rate(0.01, 0.98, 10, 1) == 0.01
        assert learning_rate(0.01, 0.98, 10, 10) == 0.01
        assert learning_rate(0.01, 0.98, 10, 11) == pytest.approx(0.0098)
        assert learning_rate(0.01, 0.98, 10, 21) == pytest.approx(0.01 * 0.98 ** 2)

    def test_no_decay(self):
        assert learning_rate(0.01, 0.5, 0, 100) == 0.01
