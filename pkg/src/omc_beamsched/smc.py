"""Monte-Carlo statistical model checking of motion models.

Three query forms are supported: an invariant (the position stays inside
bounds for the whole scope), a bounded reachability box (the position
enters an interval during a time window) and an expectation of the
trajectory extrema.  The number of runs follows the Chernoff-Hoeffding
bound for the configured half-width and confidence.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .motion import MotionModel1D, PerturbationConfig, derive_perturbation, simulate_runs, step_times

CHUNK_RUNS = 256


def chernoff_runs(epsilon: float, delta: float) -> int:
    """Runs needed so that P(|p_hat - p| > epsilon) <= delta."""
    return int(math.ceil(math.log(2.0 / delta) / (2.0 * epsilon**2)))


@dataclass(frozen=True)
class SmcConfig:
    epsilon: float = 0.05
    delta: float = 0.05
    deadline: float | None = None  # ms of wall time, measured from the call

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def run_count(self) -> int:
        return chernoff_runs(self.epsilon, self.delta)


@dataclass(frozen=True)
class InvariantQuery:
    """Pr[<= scope] ([] lower <= position <= upper)."""

    scope: float
    lower: float
    upper: float

    def __post_init__(self):
        if not self.scope > 0:
            raise ValueError("scope must be positive")
        if not self.lower <= self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")


@dataclass(frozen=True)
class ReachBoxQuery:
    """Pr[<= horizon] (<> t_lo <= t <= t_hi and x_lo <= position <= x_hi)."""

    horizon: float
    t_lo: float
    t_hi: float
    x_lo: float
    x_hi: float

    def __post_init__(self):
        if not self.t_lo <= self.t_hi <= self.horizon:
            raise ValueError("need t_lo <= t_hi <= horizon")
        if not self.x_lo <= self.x_hi:
            raise ValueError("need x_lo <= x_hi")

    @classmethod
    def around_observation(
        cls,
        created_at: float,
        t_obs: float,
        x_obs: float,
        t_plus: float = 200.0,
        t_minus: float = 200.0,
        x_plus: float = 1.5,
        x_minus: float = 1.5,
    ) -> "ReachBoxQuery":
        """Box around an observation ``(t_obs, x_obs)`` for a model created at ``created_at``."""
        rel = t_obs - created_at
        return cls(
            horizon=rel + t_plus,
            t_lo=max(0.0, rel - t_minus),
            t_hi=rel + t_plus,
            x_lo=x_obs - x_minus,
            x_hi=x_obs + x_plus,
        )


@dataclass(frozen=True)
class ProbabilityEstimate:
    p_hat: float
    runs_used: int
    completed: bool


class _Stop:
    def __init__(self, smc: SmcConfig, stop_at: float | None, cancel: threading.Event | None):
        limits = [s for s in (stop_at,) if s is not None]
        if smc.deadline is not None:
            limits.append(time.monotonic() + smc.deadline / 1000.0)
        self.at = min(limits) if limits else None
        self.cancel = cancel

    def __call__(self) -> bool:
        if self.cancel is not None and self.cancel.is_set():
            return True
        return self.at is not None and time.monotonic() >= self.at


def _run(
    model: MotionModel1D,
    cfg: PerturbationConfig | None,
    horizon: float,
    smc: SmcConfig,
    seed,
    per_run: Callable[[np.ndarray], np.ndarray],
    stop_at: float | None,
    cancel: threading.Event | None,
) -> tuple[list[np.ndarray], int, bool]:
    if cfg is None:
        cfg = derive_perturbation(model.accuracy)
    stop = _Stop(smc, stop_at, cancel)
    total = smc.run_count
    if stop():
        return [], 0, False
    rng = np.random.default_rng(seed)
    if cfg.deterministic:
        # every run is the same trajectory
        value = per_run(simulate_runs(model, cfg, horizon, 1, rng))
        return [np.repeat(value, total, axis=0)], total, True
    chunks = []
    done = 0
    while done < total:
        if stop():
            return chunks, done, False
        n = min(CHUNK_RUNS, total - done)
        chunks.append(per_run(simulate_runs(model, cfg, horizon, n, rng)))
        done += n
    return chunks, done, True


def _estimate(chunks, runs, completed) -> ProbabilityEstimate:
    hits = sum(int(np.count_nonzero(c)) for c in chunks)
    return ProbabilityEstimate(hits / runs if runs else 0.0, runs, completed)


def check_invariant(
    model: MotionModel1D,
    cfg: PerturbationConfig | None,
    q: InvariantQuery,
    smc: SmcConfig = SmcConfig(),
    seed=None,
    *,
    stop_at: float | None = None,
    cancel: threading.Event | None = None,
) -> ProbabilityEstimate:
    """Probability that every step within ``q.scope`` lies in ``[q.lower, q.upper]``.

    ``stop_at`` is an absolute :func:`time.monotonic` deadline; hitting it (or
    ``smc.deadline``) returns the partial estimate with ``completed=False``.
    """

    def inside(pos):
        return np.all((pos >= q.lower) & (pos <= q.upper), axis=1)

    return _estimate(*_run(model, cfg, q.scope, smc, seed, inside, stop_at, cancel))


def check_reach_box(
    model: MotionModel1D,
    cfg: PerturbationConfig | None,
    q: ReachBoxQuery,
    smc: SmcConfig = SmcConfig(),
    seed=None,
    *,
    stop_at: float | None = None,
    cancel: threading.Event | None = None,
) -> ProbabilityEstimate:
    """Probability that some step with time in ``[t_lo, t_hi]`` has position in ``[x_lo, x_hi]``."""
    t = step_times(model.dt, q.horizon)
    window = (t >= q.t_lo) & (t <= q.t_hi)

    def hit(pos):
        pos = pos[:, window]
        return np.any((pos >= q.x_lo) & (pos <= q.x_hi), axis=1)

    return _estimate(*_run(model, cfg, q.horizon, smc, seed, hit, stop_at, cancel))


def estimate_extrema(
    model: MotionModel1D,
    cfg: PerturbationConfig | None,
    scope: float,
    smc: SmcConfig = SmcConfig(),
    seed=None,
) -> tuple[float, float]:
    """Mean over runs of each run's minimum and maximum position within ``scope``."""
    if not scope > 0:
        raise ValueError("scope must be positive")

    def extrema(pos):
        return np.column_stack([pos.min(axis=1), pos.max(axis=1)])

    chunks, runs, _ = _run(model, cfg, scope, smc, seed, extrema, None, None)
    both = np.concatenate(chunks)
    return float(both[:, 0].mean()), float(both[:, 1].mean())
