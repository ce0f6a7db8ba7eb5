"""Trace ingestion, client profile generation, and the synthetic learning task.

The learning task is multinomial logistic regression on per-client Gaussian
class clusters with Dirichlet-skewed class proportions. It is convex and
cheap, which keeps convergence checks robust, and the analytic gradient is
easy to verify against finite differences.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream

__all__ = [
    "BandwidthTraceError",
    "load_bandwidth",
    "sample_lognormal_bandwidth",
    "AvailabilityTrace",
    "load_availability",
    "online_at",
    "SynthTask",
    "gen_synth_task",
    "model_dim",
    "predict_proba",
    "accuracy",
    "loss_and_grad",
    "local_train",
    "centralized_train",
]

MBPS_TO_BYTES = 125_000.0


class BandwidthTraceError(ValueError):
    """Raised for malformed bandwidth trace files."""


def _parse_rate(text: str, path: str, row: int, col: str) -> float:
    try:
        rate = float(text)
    except ValueError as exc:
        raise BandwidthTraceError(f"{path}:{row}: bad {col} value {text!r}") from exc
    if not math.isfinite(rate) or rate <= 0.0:
        raise BandwidthTraceError(f"{path}:{row}: nonpositive {col} rate {text!r}")
    return rate


def load_bandwidth(path: str, rng: RngStream, n: int) -> list[tuple[float, float]]:
    """Sample n (download, upload) pairs in bytes/s from a Mbps CSV trace.

    Columns are download_mbps, upload_mbps; a header row is optional.
    Rows are sampled with replacement, deterministically per rng.
    """
    rows: list[tuple[float, float]] = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip():
                continue
            if lineno == 1 and any(c.isalpha() for c in rec[0]):
                continue  # header
            if len(rec) < 2:
                raise BandwidthTraceError(f"{path}:{lineno}: expected two columns")
            dl = _parse_rate(rec[0].strip(), path, lineno, "download")
            ul = _parse_rate(rec[1].strip(), path, lineno, "upload")
            rows.append((dl * MBPS_TO_BYTES, ul * MBPS_TO_BYTES))
    if not rows:
        raise BandwidthTraceError(f"{path}: no bandwidth rows")
    gen = rng.generator()
    picks = gen.integers(0, len(rows), size=n)
    return [rows[int(i)] for i in picks]


def sample_lognormal_bandwidth(
    rng: RngStream,
    n: int,
    median_dl_mbps: float = 50.0,
    sigma: float = 1.9,
    ul_fraction: float = 0.25,
) -> list[tuple[float, float]]:
    """Heavy-tailed synthetic bandwidth profiles in bytes/s.

    sigma ~1.9 gives p95/p50 around 20x, comparable to measured edge
    bandwidth distributions. Upload is a fixed fraction of download.
    """
    gen = rng.generator()
    dl = median_dl_mbps * np.exp(sigma * gen.standard_normal(n)) * MBPS_TO_BYTES
    return [(float(d), float(d * ul_fraction)) for d in dl]


@dataclass
class AvailabilityTrace:
    """Per-client half-open [start, end) online intervals in seconds."""

    intervals: dict[int, list[tuple[float, float]]] = field(default_factory=dict)


def load_availability(path: str) -> AvailabilityTrace:
    """Load a client_id,start_s,end_s CSV (multiple rows per client)."""
    trace = AvailabilityTrace()
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip():
                continue
            if lineno == 1 and any(c.isalpha() for c in rec[0]):
                continue
            if len(rec) < 3:
                raise ValueError(f"{path}:{lineno}: expected client_id,start_s,end_s")
            cid, start, end = int(rec[0]), float(rec[1]), float(rec[2])
            if end <= start:
                raise ValueError(f"{path}:{lineno}: empty interval")
            trace.intervals.setdefault(cid, []).append((start, end))
    for cid, spans in trace.intervals.items():
        spans.sort()
        for (s0, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ValueError(f"overlapping availability intervals for client {cid}")
    return trace


def online_at(trace: AvailabilityTrace, client: int, second: float) -> bool:
    """True iff the client is online at the given second (default online)."""
    spans = trace.intervals.get(client)
    if not spans:
        return True
    return any(start <= second < end for start, end in spans)


@dataclass
class SynthTask:
    """Per-client datasets for multinomial logistic regression."""

    features: int
    classes: int
    client_x: list[np.ndarray]
    client_y: list[np.ndarray]
    test_x: np.ndarray
    test_y: np.ndarray


def model_dim(features: int, classes: int) -> int:
    return (features + 1) * classes  # weights + bias per class


def gen_synth_task(
    n_clients: int,
    classes: int,
    features: int,
    skew: float,
    seed: int,
    samples_per_client: int = 100,
    test_samples: int = 2000,
    center_scale: float = 2.0,
) -> SynthTask:
    """Gaussian class clusters with Dirichlet(skew)-distributed client labels.

    Large skew approaches iid clients; small skew approaches single-class
    clients. center_scale sets cluster separation relative to unit noise,
    i.e. task difficulty. Deterministic per seed.
    """
    if min(n_clients, classes, features) < 1 or skew <= 0.0:
        raise ValueError("invalid synthetic task parameters")
    if center_scale <= 0.0:
        raise ValueError("center_scale must be positive")
    root = RngStream(seed, ("synth-task",))
    gen = root.fork("centers").generator()
    centers = gen.standard_normal((classes, features)) * center_scale
    client_x, client_y = [], []
    for cid in range(n_clients):
        g = root.fork("client", cid).generator()
        props = g.dirichlet(np.full(classes, skew))
        labels = g.choice(classes, size=samples_per_client, p=props)
        x = centers[labels] + g.standard_normal((samples_per_client, features))
        client_x.append(x)
        client_y.append(labels.astype(np.int64))
    g = root.fork("test").generator()
    labels = g.integers(0, classes, size=test_samples)
    test_x = centers[labels] + g.standard_normal((test_samples, features))
    return SynthTask(features, classes, client_x, client_y, test_x, labels.astype(np.int64))


def _unpack(model: np.ndarray, features: int, classes: int) -> tuple[np.ndarray, np.ndarray]:
    w = model[: features * classes].reshape(features, classes)
    b = model[features * classes :]
    return w, b


def predict_proba(model: np.ndarray, x: np.ndarray, features: int, classes: int) -> np.ndarray:
    w, b = _unpack(model, features, classes)
    logits = x @ w + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True)


def accuracy(model: np.ndarray, x: np.ndarray, y: np.ndarray, features: int, classes: int) -> float:
    probs = predict_proba(model, x, features, classes)
    return float(np.mean(probs.argmax(axis=1) == y))


def loss_and_grad(
    model: np.ndarray, x: np.ndarray, y: np.ndarray, features: int, classes: int
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its analytic gradient (flat)."""
    n = x.shape[0]
    probs = predict_proba(model, x, features, classes)
    loss = -float(np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    probs[np.arange(n), y] -= 1.0
    probs /= n
    grad_w = x.T @ probs
    grad_b = probs.sum(axis=0)
    return loss, np.concatenate([grad_w.ravel(), grad_b])


def local_train(
    model: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    features: int,
    classes: int,
    steps: int,
    batch_size: int,
    lr: float,
    rng: RngStream,
    momentum: float = 0.9,
) -> np.ndarray:
    """Mini-batch SGD with momentum; batch order is deterministic per rng."""
    out = model.astype(np.float64).copy()
    velocity = np.zeros_like(out)
    gen = rng.generator()
    n = x.shape[0]
    for _ in range(steps):
        batch = gen.choice(n, size=min(batch_size, n), replace=False)
        _, grad = loss_and_grad(out, x[batch], y[batch], features, classes)
        velocity = momentum * velocity + grad
        out -= lr * velocity
    return out


def centralized_train(
    task: SynthTask, rounds: int, steps: int, batch_size: int, lr: float, seed: int
) -> np.ndarray:
    """Single-worker SGD reference on the pooled client data."""
    x = np.concatenate(task.client_x)
    y = np.concatenate(task.client_y)
    model = np.zeros(model_dim(task.features, task.classes))
    root = RngStream(seed, ("centralized",))
    for r in range(rounds):
        model = local_train(
            model, x, y, task.features, task.classes, steps, batch_size, lr, root.fork(r)
        )
    return model


def learning_rate(initial: float, decay: float, decay_every: int, round_: int) -> float:
    """Stepwise-decayed rate: multiplied by `decay` every `decay_every` rounds."""
    if decay_every <= 0:
        return initial
    return initial * decay ** ((round_ - 1) // decay_every)
