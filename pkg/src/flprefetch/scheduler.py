"""Prepare-phase scheduling: round-duration smoothing, fetch-time estimation,
and assignment of per-client prefetch start rounds.

The scheduler walks candidate start rounds from the presampling round up to
the train round. A client keeps the latest start round whose estimated
train-phase fetch time still fits under the time limit in force; the limit
is the (1+beta)/OC nearest-rank percentile of the cohort's estimates,
refreshed whenever every client fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

__all__ = ["DurationEstimator", "est_fetch_time", "schedule_prefetch"]


@dataclass
class DurationEstimator:
    """Exponentially weighted moving average of observed round durations."""

    alpha: float = 0.125
    estimate: float = 0.0
    initialized: bool = False

    def update(self, observed: float) -> float:
        if observed <= 0.0:
            raise ValueError(f"round duration must be positive, got {observed}")
        if not self.initialized:
            self.estimate = observed
            self.initialized = True
        else:
            self.estimate = self.alpha * observed + (1.0 - self.alpha) * self.estimate
        return self.estimate


def est_fetch_time(
    bw_dl: float,
    start_round: int,
    train_round: int,
    d_avg: float,
    profiled_size: Callable[[int], float],
    base_model_size: float,
) -> float:
    """Estimated train-phase fetch time if prefetch starts at `start_round`.

    Simulates the greedy prefetch process round by round: the client drains
    its pending bytes with each round's time budget, re-queues the newest
    accumulated update when it catches up, and whatever is left at the
    train round (plus the final catch-up span) is fetched at bw_dl.
    """
    if bw_dl <= 0.0:
        raise ValueError("bw_dl must be positive")
    if start_round > train_round:
        raise ValueError("start_round must not exceed train_round")
    u = float(base_model_size)  # bytes still to download
    b = 0.0                     # accrued time budget (seconds)
    sync = start_round          # model round reached once u is drained
    for j in range(start_round, train_round):
        b = max(0.0, b + d_avg - u / bw_dl)
        if b > 0.0:
            u = max(0.0, profiled_size(j - sync) - b * bw_dl)
            sync = j
        else:
            u = max(0.0, u - d_avg * bw_dl)
    return (u + profiled_size(train_round - sync)) / bw_dl


def schedule_prefetch(
    cohort: list[int],
    presample_round: int,
    train_round: int,
    d_avg: float,
    profiled_size: Callable[[int], float],
    base_model_size: float,
    bandwidths: Mapping[int, float],
    beta: float = 0.0,
    overcommit: float = 1.0,
) -> tuple[dict[int, int], int]:
    """Assign each cohort member a prefetch start round in [t^P, t*].

    Returns (schedule, t^P) where t^P is the earliest common start round,
    the latest round at which every client's estimate still fit the limit.
    """
    if not cohort:
        raise ValueError("cohort must be non-empty")
    if presample_round > train_round:
        raise ValueError("presample round after train round")
    n = len(cohort)
    rank = min(max(math.ceil((1.0 + beta) / overcommit * n), 1), n)
    t_limit = math.inf
    t_common = presample_round
    schedule: dict[int, int] = {}
    for t in range(presample_round, train_round + 1):
        times = {
            i: est_fetch_time(
                bandwidths[i], t, train_round, d_avg, profiled_size, base_model_size
            )
            for i in cohort
        }
        fitting = [i for i in cohort if times[i] <= t_limit]
        if len(fitting) == n:
            t_common = t
            t_limit = sorted(times.values())[rank - 1]
        for i in fitting:
            schedule[i] = t
    return schedule, t_common
