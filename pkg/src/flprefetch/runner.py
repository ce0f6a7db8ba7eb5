"""Experiment configuration, run orchestration, and delimited output emission.

Configs are flat JSON documents; every run writes `rounds.csv` with one row
per round, `summary.json` with cumulative metrics plus a full config echo
and trace-file hashes, and (unless disabled) rendered figures next to them.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .compress import CompressorConfig
from .core import RngStream
from .engine import ClientProfile, Metrics, Simulation, TrainParams
from .workload import (
    gen_synth_task,
    load_availability,
    load_bandwidth,
    online_at,
    sample_lognormal_bandwidth,
)

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "parse_compressor",
    "load_config",
    "build_simulation",
    "run_experiment",
    "sweep_experiment",
    "compare_naive",
    "ROUNDS_HEADER",
]

ROUNDS_HEADER = [
    "round",
    "duration_s",
    "fetch_time_s",
    "compute_time_s",
    "upload_time_s",
    "fetch_bytes",
    "prefetch_bytes",
    "upload_bytes",
    "accuracy",
]


class ConfigError(ValueError):
    """Raised with the offending field name for invalid configurations."""


def parse_compressor(text: str) -> CompressorConfig:
    """Parse "topk:0.2", "quant:4", "lowrank:2", or "identity"."""
    kind, _, arg = text.partition(":")
    if kind == "identity":
        return CompressorConfig("identity")
    if kind == "topk":
        return CompressorConfig("topk", ratio=float(arg or 0.2))
    if kind == "quant":
        return CompressorConfig("quant", bits=int(arg or 4))
    if kind == "lowrank":
        return CompressorConfig("lowrank", rank=int(arg or 1))
    raise ConfigError(f"compressor: unknown spec {text!r}")


@dataclass
class ExperimentConfig:
    n_clients: int = 100
    clients_per_round: int = 10
    overcommit: float = 1.0
    prefetch_rounds: int = 3
    beta: float = 0.0
    alpha: float = 0.125
    rounds: int = 100
    seed: int = 1
    scheduler: str = "fedfetch"  # "fedfetch" | "fixed-<k>" | "none"
    dl_compressor: str = "topk:0.2"
    ul_compressor: str = "topk:0.2"
    bandwidth_trace: Optional[str] = None
    bandwidth_median_mbps: float = 50.0
    bandwidth_sigma: float = 1.9
    upload_fraction: float = 0.25
    compute_seconds: float = 5.0
    compute_sigma: float = 0.0  # lognormal sigma; 0 => constant
    availability: str = "full"  # "full" | "trace" | "toggle"
    availability_trace: Optional[str] = None
    offline_prob: float = 0.1
    replace_offline: bool = False
    classes: int = 10
    features: int = 199
    skew: float = 0.5
    center_scale: float = 2.0
    samples_per_client: int = 100
    test_samples: int = 2000
    local_steps: int = 10
    batch_size: int = 20
    learning_rate: float = 0.01
    lr_decay: float = 0.98
    lr_decay_every: int = 10
    target_accuracy: Optional[float] = None
    eval_every: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.n_clients < 1:
            raise ConfigError("n_clients: must be >= 1")
        if not (1 <= self.clients_per_round <= self.n_clients):
            raise ConfigError("clients_per_round: must satisfy 1 <= K <= N")
        if self.overcommit < 1.0:
            raise ConfigError("overcommit: must be >= 1")
        if self.prefetch_rounds < 0:
            raise ConfigError("prefetch_rounds: must be >= 0")
        if self.beta < 0.0 or 1.0 + self.beta > self.overcommit + 1e-12:
            raise ConfigError("beta: must satisfy 0 <= beta and 1+beta <= OC")
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError("alpha: must be in (0, 1]")
        if self.rounds < 1:
            raise ConfigError("rounds: must be >= 1")
        if self.scheduler not in ("fedfetch", "none") and not self.scheduler.startswith("fixed-"):
            raise ConfigError(f"scheduler: unknown mode {self.scheduler!r}")
        if self.availability not in ("full", "trace", "toggle"):
            raise ConfigError(f"availability: unknown mode {self.availability!r}")
        if self.availability == "trace" and not self.availability_trace:
            raise ConfigError("availability_trace: required for trace mode")
        parse_compressor(self.dl_compressor)
        parse_compressor(self.ul_compressor)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build a config from an optional JSON file plus CLI overrides."""
    data: dict = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return ExperimentConfig(**data).validate()


def _file_hash(path: Optional[str]) -> Optional[str]:
    if not path:
        return None
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def _build_profiles(cfg: ExperimentConfig) -> list[ClientProfile]:
    rng = RngStream(cfg.seed, ("profiles",))
    if cfg.bandwidth_trace:
        bw = load_bandwidth(cfg.bandwidth_trace, rng.fork("bandwidth"), cfg.n_clients)
    else:
        bw = sample_lognormal_bandwidth(
            rng.fork("bandwidth"),
            cfg.n_clients,
            median_dl_mbps=cfg.bandwidth_median_mbps,
            sigma=cfg.bandwidth_sigma,
            ul_fraction=cfg.upload_fraction,
        )
    if cfg.compute_sigma > 0.0:
        gen = rng.fork("compute").generator()
        compute = cfg.compute_seconds * np.exp(
            cfg.compute_sigma * gen.standard_normal(cfg.n_clients)
        )
    else:
        compute = np.full(cfg.n_clients, cfg.compute_seconds)
    return [
        ClientProfile(cid, bw[cid][0], bw[cid][1], float(compute[cid]))
        for cid in range(cfg.n_clients)
    ]


def _build_availability(cfg: ExperimentConfig):
    if cfg.availability == "full":
        return None
    if cfg.availability == "trace":
        trace = load_availability(cfg.availability_trace)
        return lambda cid, round_, now: online_at(trace, cid, now)
    # toggle: each client is offline in a round with probability offline_prob,
    # decided from a (round, client)-keyed stream so runs stay deterministic.
    root = RngStream(cfg.seed, ("availability",))
    prob = cfg.offline_prob

    def toggled(cid: int, round_: int, now: float) -> bool:
        return root.fork(round_, cid).generator().random() >= prob

    return toggled


def build_simulation(cfg: ExperimentConfig) -> Simulation:
    cfg.validate()
    task = gen_synth_task(
        cfg.n_clients,
        cfg.classes,
        cfg.features,
        cfg.skew,
        cfg.seed,
        samples_per_client=cfg.samples_per_client,
        test_samples=cfg.test_samples,
        center_scale=cfg.center_scale,
    )
    if cfg.scheduler.startswith("fixed-"):
        mode, window = "fixed", int(cfg.scheduler.split("-", 1)[1])
    else:
        mode, window = cfg.scheduler, 1
    return Simulation(
        profiles=_build_profiles(cfg),
        task=task,
        rounds=cfg.rounds,
        clients_per_round=cfg.clients_per_round,
        overcommit=cfg.overcommit,
        prefetch_rounds=cfg.prefetch_rounds,
        beta=cfg.beta,
        alpha=cfg.alpha,
        seed=cfg.seed,
        dl_compressor=parse_compressor(cfg.dl_compressor),
        ul_compressor=parse_compressor(cfg.ul_compressor),
        scheduler_mode=mode,
        fixed_window=window,
        availability=_build_availability(cfg),
        replace_offline_clients=cfg.replace_offline,
        train=TrainParams(
            local_steps=cfg.local_steps,
            batch_size=cfg.batch_size,
            lr=cfg.learning_rate,
            lr_decay=cfg.lr_decay,
            lr_decay_every=cfg.lr_decay_every,
        ),
        eval_every=cfg.eval_every,
    )


def _write_rounds_csv(path: str, metrics: Metrics) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(ROUNDS_HEADER) + "\n")
        for r in metrics.reports:
            acc = "" if r.accuracy is None else repr(r.accuracy)
            fh.write(
                f"{r.round},{r.duration!r},{r.fetch_time!r},{r.compute_time!r},"
                f"{r.upload_time!r},{r.fetch_bytes!r},{r.prefetch_bytes!r},"
                f"{r.upload_bytes!r},{acc}\n"
            )


def summarize(cfg: ExperimentConfig, metrics: Metrics) -> dict:
    rtt = (
        metrics.rounds_to_target(cfg.target_accuracy)
        if cfg.target_accuracy is not None
        else None
    )
    return {
        "fetch_time_s": metrics.fetch_time,
        "total_time_s": metrics.total_time,
        "fetch_volume_bytes": metrics.fetch_volume,
        "prefetch_volume_bytes": metrics.prefetch_volume,
        "upload_volume_bytes": metrics.upload_volume,
        "total_volume_bytes": metrics.total_volume,
        "rounds_run": len(metrics.reports),
        "rounds_to_target": rtt,
        "final_accuracy": next(
            (r.accuracy for r in reversed(metrics.reports) if r.accuracy is not None),
            None,
        ),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "trace_hashes": {
            "bandwidth": _file_hash(cfg.bandwidth_trace),
            "availability": _file_hash(cfg.availability_trace),
        },
    }


def run_experiment(
    cfg: ExperimentConfig, out_dir: Optional[str] = None, plots: bool = True
) -> tuple[Metrics, dict]:
    """Execute one run; optionally write rounds.csv/summary.json and figures."""
    sim = build_simulation(cfg)
    metrics = sim.run(cfg.target_accuracy)
    summary = summarize(cfg, metrics)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_rounds_csv(os.path.join(out_dir, "rounds.csv"), metrics)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
        if plots:
            from . import plots as plotmod

            plotmod.render_run(out_dir, metrics)
    return metrics, summary


SWEEP_PARAMS = {
    "R": ("prefetch_rounds", int),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "oc": ("overcommit", float),
}

SWEEP_HEADER = [
    "param",
    "value",
    "seed",
    "fetch_time_s",
    "total_time_s",
    "fetch_volume_bytes",
    "prefetch_volume_bytes",
    "upload_volume_bytes",
    "total_volume_bytes",
    "rounds_to_target",
]


def _sweep_row(param: str, value, summary: dict) -> list:
    return [
        param,
        value,
        summary["seed"],
        summary["fetch_time_s"],
        summary["total_time_s"],
        summary["fetch_volume_bytes"],
        summary["prefetch_volume_bytes"],
        summary["upload_volume_bytes"],
        summary["total_volume_bytes"],
        summary["rounds_to_target"],
    ]


def _write_table(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else str(v) for v in row) + "\n")


def sweep_experiment(
    cfg: ExperimentConfig,
    param: str,
    values: Sequence,
    seeds: Optional[Sequence[int]] = None,
    out_dir: Optional[str] = None,
    plots: bool = True,
) -> list[dict]:
    """Run one simulation per (value, seed) and emit an aggregate sweep.csv."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"param: must be one of {sorted(SWEEP_PARAMS)}")
    attr, cast = SWEEP_PARAMS[param]
    seeds = list(seeds) if seeds else [cfg.seed]
    rows, summaries = [], []
    for value in values:
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, **{attr: cast(value), "seed": seed})
            if param == "oc" and 1.0 + run_cfg.beta > run_cfg.overcommit:
                run_cfg = dataclasses.replace(run_cfg, beta=0.0)
            sub = (
                os.path.join(out_dir, f"{param}_{value}_seed{seed}") if out_dir else None
            )
            _, summary = run_experiment(run_cfg, sub, plots=False)
            rows.append(_sweep_row(param, value, summary))
            summaries.append(summary)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_table(os.path.join(out_dir, "sweep.csv"), SWEEP_HEADER, rows)
        if plots:
            from . import plots as plotmod

            plotmod.render_sweep(out_dir, param, rows)
    return summaries


NAIVE_VARIANTS = ("fedfetch", "fixed-1", None)  # None -> fixed-R


def compare_naive(
    cfg: ExperimentConfig,
    out_dir: Optional[str] = None,
    seeds: Optional[Sequence[int]] = None,
    plots: bool = True,
) -> dict[str, list[dict]]:
    """Paired runs of the adaptive scheduler against fixed-window prefetching."""
    if cfg.prefetch_rounds < 1:
        raise ConfigError("prefetch_rounds: compare-naive requires R >= 1")
    seeds = list(seeds) if seeds else [cfg.seed]
    variants = ["fedfetch", "fixed-1", f"fixed-{cfg.prefetch_rounds}"]
    results: dict[str, list[dict]] = {}
    rows = []
    for variant in variants:
        results[variant] = []
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, scheduler=variant, seed=seed)
            sub = os.path.join(out_dir, f"{variant}_seed{seed}") if out_dir else None
            _, summary = run_experiment(run_cfg, sub, plots=False)
            results[variant].append(summary)
            rows.append(_sweep_row("scheduler", variant, summary))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_table(os.path.join(out_dir, "sweep.csv"), SWEEP_HEADER, rows)
        if plots:
            from . import plots as plotmod

            plotmod.render_sweep(out_dir, "scheduler", rows)
    return results
