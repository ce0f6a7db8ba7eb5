"""Round-driven simulation engine.

Each round runs phase-sequentially: presample and schedule a future cohort,
run the train phase for the current cohort, pick the aggregated set, account
round time as max fetch + max compute + max upload over that set, advance
background prefetch downloads with the round's duration as budget, then
commit the compressed aggregate to the server store.

Prefetch progress and train-phase fetches in round t only see deltas
committed through round t-1; round t's delta becomes visible in t+1.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .compress import CompressorConfig, compress, decompress, wire_size
from .core import MatrixShape, RngStream, weighted_sum
from .sampling import RoundPlan, presample, replace_offline
from .scheduler import DurationEstimator, schedule_prefetch
from .store import ServerStore
from .workload import SynthTask, learning_rate, local_train, model_dim, accuracy

__all__ = [
    "ClientProfile",
    "PendingClient",
    "RoundReport",
    "Metrics",
    "Simulation",
]


@dataclass(frozen=True)
class ClientProfile:
    cid: int
    bw_dl: float  # bytes/s
    bw_ul: float  # bytes/s
    compute_time: float  # seconds per train round
    weight: float = 1.0


@dataclass
class PendingClient:
    """Per-cohort download state for one presampled client."""

    cid: int
    train_round: int
    start_round: int  # assigned prefetch start P^i
    started: bool = False
    sync_round: int = 0  # holds state consistent with server model w_{sync+1}
    queue: deque = field(default_factory=deque)  # items: ["base"|"delta", payload, remaining]
    prefetch_bytes: float = 0.0


@dataclass
class RoundReport:
    round: int
    duration: float
    fetch_time: float
    compute_time: float
    upload_time: float
    fetch_bytes: float
    prefetch_bytes: float
    upload_bytes: float
    aggregated: list[int]
    dropped: list[int]
    accuracy: Optional[float] = None
    degraded: bool = False


class Metrics:
    """Cumulative FT/TT/FV/TV accumulators over the round history."""

    def __init__(self):
        self.reports: list[RoundReport] = []

    def add(self, report: RoundReport) -> None:
        self.reports.append(report)

    @property
    def fetch_time(self) -> float:
        return sum(r.fetch_time for r in self.reports)

    @property
    def total_time(self) -> float:
        return sum(r.duration for r in self.reports)

    @property
    def fetch_volume(self) -> float:
        return sum(r.fetch_bytes for r in self.reports)

    @property
    def prefetch_volume(self) -> float:
        return sum(r.prefetch_bytes for r in self.reports)

    @property
    def upload_volume(self) -> float:
        return sum(r.upload_bytes for r in self.reports)

    @property
    def total_volume(self) -> float:
        return self.fetch_volume + self.prefetch_volume + self.upload_volume

    def rounds_to_target(self, target: float, window: int = 5) -> Optional[int]:
        """First round where the trailing-window mean accuracy reaches target."""
        history = [(r.round, r.accuracy) for r in self.reports if r.accuracy is not None]
        for i in range(len(history)):
            lo = max(0, i - window + 1)
            mean = float(np.mean([a for _, a in history[lo : i + 1]]))
            if mean >= target:
                return history[i][0]
        return None


@dataclass
class TrainParams:
    local_steps: int = 10
    batch_size: int = 20
    lr: float = 0.01
    lr_decay: float = 0.98
    lr_decay_every: int = 10


class Simulation:
    """One deterministic simulation run.

    scheduler_mode: "fedfetch" (adaptive schedules), "fixed" with
    fixed_window k (every client starts k rounds before training), or
    "none" (cohorts sampled at their own round, no prefetch).
    """

    def __init__(
        self,
        *,
        profiles: list[ClientProfile],
        task: SynthTask,
        rounds: int,
        clients_per_round: int,
        overcommit: float = 1.0,
        prefetch_rounds: int = 0,
        beta: float = 0.0,
        alpha: float = 0.125,
        seed: int = 0,
        dl_compressor: CompressorConfig,
        ul_compressor: CompressorConfig,
        scheduler_mode: str = "fedfetch",
        fixed_window: int = 1,
        availability: Optional[Callable[[int, int, float], bool]] = None,
        replace_offline_clients: bool = False,
        train: TrainParams | None = None,
        eval_every: int = 1,
        shape: MatrixShape | None = None,
    ):
        if scheduler_mode not in ("fedfetch", "fixed", "none"):
            raise ValueError(f"unknown scheduler mode {scheduler_mode!r}")
        self.profiles = {p.cid: p for p in profiles}
        self.n = len(profiles)
        self.task = task
        self.rounds = rounds
        self.k = clients_per_round
        self.oc = overcommit
        self.r = prefetch_rounds if scheduler_mode != "none" else 0
        self.beta = beta
        self.seed = seed
        self.dl_cfg = dl_compressor
        self.ul_cfg = ul_compressor
        self.mode = scheduler_mode
        self.fixed_window = fixed_window
        self.availability = availability
        self.replace = replace_offline_clients
        self.train = train or TrainParams()
        self.eval_every = eval_every

        dim = model_dim(task.features, task.classes)
        self.dim = dim
        self.shape = shape or MatrixShape.near_square(dim)
        self.root = RngStream(seed)
        self.store = ServerStore(
            np.zeros(dim), self.shape, dl_compressor, retention=self.r + 2
        )
        self.estimator = DurationEstimator(alpha=alpha)
        self.metrics = Metrics()
        self.pending: dict[int, dict[int, PendingClient]] = {}  # train round -> cid -> state
        self.plans: dict[int, RoundPlan] = {}

    # -- availability ------------------------------------------------------

    def online_set(self, round_: int, now: float) -> set[int]:
        if self.availability is None:
            return set(self.profiles)
        return {cid for cid in self.profiles if self.availability(cid, round_, now)}

    # -- planning ----------------------------------------------------------

    def _bootstrap_duration(self) -> float:
        if self.estimator.initialized:
            return self.estimator.estimate
        bws = sorted(p.bw_dl for p in self.profiles.values())
        return self.store.base_model_size / bws[len(bws) // 2]

    def _create_plan(self, train_round: int, now_round: int, online: set[int]) -> None:
        rng = self.root.fork("presample", train_round)
        plan = presample(online, train_round, self.k, self.oc, rng)
        self.plans[train_round] = plan
        if self.mode == "fedfetch" and train_round > now_round:
            schedule, _ = schedule_prefetch(
                plan.cohort,
                now_round,
                train_round,
                self._bootstrap_duration(),
                self.store.profiler.profiled_size,
                self.store.base_model_size,
                {cid: self.profiles[cid].bw_dl for cid in plan.cohort},
                beta=self.beta,
                overcommit=self.oc,
            )
        elif self.mode == "fixed" and train_round > now_round:
            start = max(now_round, train_round - self.fixed_window)
            schedule = {cid: start for cid in plan.cohort}
        else:
            schedule = {cid: train_round for cid in plan.cohort}
        self.pending[train_round] = {
            cid: PendingClient(cid, train_round, schedule[cid]) for cid in plan.cohort
        }

    def _apply_replacement(self, round_: int, online: set[int]) -> None:
        for t_star in sorted(self.pending):
            if t_star <= round_:
                continue
            plan = self.plans[t_star]
            active = {c for ts, states in self.pending.items() if ts != t_star for c in states}
            new_plan = replace_offline(
                plan, online, self.root.fork("replace", t_star, round_), exclude=sorted(active)
            )
            if new_plan is plan:
                continue
            self.plans[t_star] = new_plan
            states = self.pending[t_star]
            for cid in list(states):
                if cid not in new_plan.cohort:
                    del states[cid]
            for cid in new_plan.cohort:
                if cid not in states:
                    # Replacement starts prefetching now with the leftover budget.
                    states[cid] = PendingClient(cid, t_star, round_)

    # -- download bookkeeping ---------------------------------------------

    def _ensure_started(self, state: PendingClient, round_: int) -> None:
        if state.started or state.start_round > round_:
            return
        state.started = True
        base_round = max(state.start_round, round_)
        state.sync_round = base_round - 1
        state.queue.append(["base", base_round, float(self.store.base_model_size)])

    def _refill_queue(self, state: PendingClient, newest_round: int) -> None:
        """Enqueue one coalesced catch-up range if fully drained and stale."""
        if state.queue or state.sync_round >= newest_round:
            return
        t1, t2 = state.sync_round + 1, newest_round
        size = wire_size(self.store.delta_range(t1, t2), self.dim)
        state.queue.append(["delta", (t1, t2), float(size)])

    def advance_prefetch(self, state: PendingClient, elapsed: float, newest_round: int) -> float:
        """Drain elapsed seconds of download budget; returns bytes moved."""
        self._ensure_started(state, newest_round + 1)
        if not state.started:
            return 0.0
        budget = elapsed * self.profiles[state.cid].bw_dl
        moved = 0.0
        while budget > 0.0:
            self._refill_queue(state, newest_round)
            if not state.queue:
                break
            item = state.queue[0]
            take = min(item[2], budget)
            item[2] -= take
            budget -= take
            moved += take
            if item[2] <= 0.0:
                state.queue.popleft()
                state.sync_round = item[1] - 1 if item[0] == "base" else item[1][1]
        state.prefetch_bytes += moved
        return moved

    def train_phase_fetch(self, state: PendingClient, round_: int) -> float:
        """Finish all remaining downloads for the train round; returns bytes."""
        self._ensure_started(state, round_)
        moved = 0.0
        while state.queue:
            item = state.queue.popleft()
            moved += item[2]
            state.sync_round = item[1] - 1 if item[0] == "base" else item[1][1]
        if state.sync_round < round_ - 1:
            cu = self.store.delta_range(state.sync_round + 1, round_ - 1)
            moved += wire_size(cu, self.dim)
            state.sync_round = round_ - 1
        return moved

    # -- round loop --------------------------------------------------------

    def run_round(self) -> RoundReport:
        t = self.store.current_round
        now = self.metrics.total_time
        online = self.online_set(t, now)

        if self.replace:
            self._apply_replacement(t, online)

        # Prepare: presample R rounds ahead; early/current rounds fall back
        # to sampling at their own round with no prefetch window.
        if t not in self.pending:
            self._create_plan(t, t, online)
        horizon = t + self.r
        if self.r >= 1 and horizon <= self.rounds and horizon not in self.pending:
            self._create_plan(horizon, t, online)

        plan = self.plans[t]
        states = self.pending[t]
        participants = [cid for cid in plan.cohort if cid in online]
        dropped = [cid for cid in plan.cohort if cid not in online]

        lr = learning_rate(
            self.train.lr, self.train.lr_decay, self.train.lr_decay_every, t
        )
        base_model = self.store.model(t)
        results = {}
        for cid in sorted(participants):
            prof = self.profiles[cid]
            fetch_bytes = self.train_phase_fetch(states[cid], t)
            fetch_time = fetch_bytes / prof.bw_dl
            trained = local_train(
                base_model,
                self.task.client_x[cid],
                self.task.client_y[cid],
                self.task.features,
                self.task.classes,
                self.train.local_steps,
                self.train.batch_size,
                lr,
                self.root.fork("train", t, cid),
            )
            cu = compress(
                self.ul_cfg,
                trained - base_model,
                self.shape,
                self.root.fork("ul", t, cid),
                span=(t, t),
            )
            ul_bytes = wire_size(cu, self.dim)
            results[cid] = (
                fetch_time,
                prof.compute_time,
                ul_bytes / prof.bw_ul,
                fetch_bytes,
                ul_bytes,
                cu,
            )

        # Over-commitment discard: keep the K fastest end-to-end finishers.
        order = sorted(results, key=lambda c: (sum(results[c][:3]), c))
        # Canonical cid order keeps the aggregation sum bit-reproducible
        # regardless of which run's timing produced the same set.
        aggregated = sorted(order[: self.k])
        discarded = order[self.k :]
        degraded = plan.degraded or len(aggregated) < self.k

        if aggregated:
            ft = max(results[c][0] for c in aggregated)
            ct = max(results[c][1] for c in aggregated)
            ut = max(results[c][2] for c in aggregated)
            duration = ft + ct + ut
        else:
            ft = ct = ut = 0.0
            duration = self.estimator.estimate if self.estimator.initialized else 1.0

        # Background prefetch for future cohorts runs alongside this round.
        prefetch_bytes = 0.0
        for t_star in sorted(self.pending):
            if t_star <= t:
                continue
            for cid in sorted(self.pending[t_star]):
                if self.availability is not None and cid not in online:
                    continue
                state = self.pending[t_star][cid]
                if state.start_round <= t:
                    prefetch_bytes += self.advance_prefetch(state, duration, t - 1)

        # Aggregate and commit; the committed delta becomes visible next round.
        if aggregated:
            deltas = [decompress(results[c][5], self.dim) for c in aggregated]
            weights = [1.0 / len(aggregated)] * len(aggregated)
            agg = weighted_sum(deltas, weights)
        else:
            agg = np.zeros(self.dim)
        self.store.commit_round(agg, self.root.fork("dl", t))

        acc = None
        if self.eval_every and (t % self.eval_every == 0 or t == self.rounds):
            acc = accuracy(
                self.store.model(t + 1),
                self.task.test_x,
                self.task.test_y,
                self.task.features,
                self.task.classes,
            )

        report = RoundReport(
            round=t,
            duration=duration,
            fetch_time=ft,
            compute_time=ct,
            upload_time=ut,
            fetch_bytes=sum(results[c][3] for c in results),
            prefetch_bytes=prefetch_bytes,
            upload_bytes=sum(results[c][4] for c in results),
            aggregated=aggregated,
            dropped=sorted(dropped + discarded),
            accuracy=acc,
            degraded=degraded,
        )
        self.metrics.add(report)
        self.estimator.update(max(duration, 1e-9))
        del self.pending[t]
        del self.plans[t]
        return report

    def run(self, target_accuracy: Optional[float] = None) -> Metrics:
        """Run all rounds, or stop once the smoothed accuracy hits the target."""
        for _ in range(self.rounds):
            self.run_round()
            if target_accuracy is not None:
                if self.metrics.rounds_to_target(target_accuracy) is not None:
                    break
        return self.metrics
