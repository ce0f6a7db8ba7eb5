"""Cohort presampling with over-commitment and offline-client replacement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import RngStream

__all__ = ["RoundPlan", "presample", "replace_offline", "cohort_size"]


def cohort_size(k: int, overcommit: float) -> int:
    return math.ceil(k * overcommit)


@dataclass
class RoundPlan:
    """Planned cohort for a future train round."""

    train_round: int
    cohort: list[int]
    target_k: int
    degraded: bool = False
    replaced: list[int] = field(default_factory=list)  # ids added by replacement


def presample(
    online: Iterable[int],
    train_round: int,
    k: int,
    overcommit: float,
    rng: RngStream,
) -> RoundPlan:
    """Uniform sample without replacement of ceil(K*OC) ids from the online set.

    If fewer clients are online than requested, everyone online is taken
    and the plan is flagged degraded.
    """
    pool = sorted(online)
    want = cohort_size(k, overcommit)
    if len(pool) <= want:
        return RoundPlan(train_round, list(pool), k, degraded=len(pool) < want)
    gen = rng.generator()
    picked = gen.choice(len(pool), size=want, replace=False)
    return RoundPlan(train_round, [pool[i] for i in sorted(picked)], k)


def replace_offline(
    plan: RoundPlan,
    online: set[int],
    rng: RngStream,
    exclude: Sequence[int] = (),
) -> RoundPlan:
    """Swap offline cohort members for uniform draws from the online pool.

    Replacements are recorded in plan.replaced so the engine can start
    their prefetch immediately with whatever budget remains. If the pool
    runs dry the plan shrinks and is flagged degraded.
    """
    offline_members = [c for c in plan.cohort if c not in online]
    if not offline_members:
        return plan
    pool = sorted(online - set(plan.cohort) - set(exclude))
    gen = rng.generator()
    cohort = list(plan.cohort)
    replaced = list(plan.replaced)
    degraded = plan.degraded
    for member in offline_members:
        if pool:
            idx = int(gen.integers(len(pool)))
            newcomer = pool.pop(idx)
            cohort[cohort.index(member)] = newcomer
            replaced.append(newcomer)
        else:
            cohort.remove(member)
            degraded = True
    return RoundPlan(plan.train_round, cohort, plan.target_k, degraded, replaced)
