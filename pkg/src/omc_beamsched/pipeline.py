"""Per-slot refitting and validation of the axis models.

Every slot the axis models are refitted from the trailing samples, checked
against the observation one second later with a bounding-box reachability
query, and a per-axis tier counter is moved up on failure and down on
success.  The slot's model set is unusable when every axis sits at tier 3
or above, or when any axis could not be fitted.
"""

from __future__ import annotations

import logging
import time
import zlib
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .fitting import FIT_WINDOW, FitError, SampleWindow, fit_window, predict
from .formats import MotionTrace
from .motion import MotionModel1D, derive_perturbation
from .smc import ReachBoxQuery, SmcConfig, check_reach_box

log = logging.getLogger(__name__)

MAX_TIER = 4
INVALID_TIER = 3


class FeedExhausted(Exception):
    """The sensor feed has no samples for the requested slot."""


@dataclass(frozen=True)
class OmcConfig:
    slot_interval: float = 3000.0
    validity_window: float = 6000.0
    validation_offset: float = 1000.0
    t_plus: float = 200.0
    t_minus: float = 200.0
    x_plus: float = 1.5
    x_minus: float = 1.5
    tp: float = 0.8
    accuracy: float | tuple[float, ...] = 100.0
    # trailing fit windows tried per slot, longest first
    fit_windows: tuple[float, ...] = (FIT_WINDOW, 12000.0, 8000.0)
    recent: float = 3000.0
    flat_tol: float = 0.05
    session_offset: float = FIT_WINDOW
    epsilon: float = 0.05
    delta: float = 0.05
    seed: int = 0

    def accuracy_for(self, axis: int) -> float:
        if isinstance(self.accuracy, (tuple, list)):
            return float(self.accuracy[axis])
        return float(self.accuracy)

    @property
    def smc(self) -> SmcConfig:
        return SmcConfig(self.epsilon, self.delta)

    def boundary(self, trace_start: float, slot_index: int) -> float:
        return trace_start + self.session_offset + slot_index * self.slot_interval


@dataclass(frozen=True)
class TierState:
    tiers: tuple[int, ...]
    tp: float = 0.8

    @classmethod
    def initial(cls, dims: int, tp: float = 0.8) -> "TierState":
        return cls((0,) * dims, tp)

    @property
    def invalid(self) -> bool:
        return all(t >= INVALID_TIER for t in self.tiers)

    def update(self, passed: Sequence[bool]) -> "TierState":
        tiers = tuple(
            max(0, t - 1) if ok else min(MAX_TIER, t + 1) for t, ok in zip(self.tiers, passed)
        )
        return TierState(tiers, self.tp)


@dataclass
class SlotModelSet:
    slot_index: int
    created_at: float
    models: tuple[MotionModel1D | None, ...]
    valid: bool
    validity_probs: tuple[float, ...]
    tiers: tuple[int, ...] = ()
    errors: tuple[str | None, ...] = field(default=())

    @property
    def dims(self) -> int:
        return len(self.models)


def _seed(cfg: OmcConfig, slot_index: int, axis: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, slot_index, axis, zlib.crc32(b"validate")])


def fit_axis(window: SampleWindow, created_at: float, accuracy: float, cfg: OmcConfig) -> MotionModel1D:
    """Fit one axis, preferring a shorter trailing window when it explains recent samples much better."""
    best = None
    last_error = None
    for length in cfg.fit_windows:
        w = window.trailing(length)
        if len(w) < 3:
            continue
        try:
            model = fit_window(w, origin=created_at, accuracy=accuracy, flat_tol=cfg.flat_tol).model
        except FitError as exc:
            last_error = exc
            continue
        recent = w.times >= w.times[-1] - cfg.recent
        err = predict(model, w.times[recent] - created_at) - w.positions[recent]
        rms = float(np.sqrt(np.mean(err**2)))
        if best is None or (rms < 0.5 * best[1] and best[1] - rms > 0.1):
            best = (model, rms)
    if best is None:
        raise last_error or FitError("no usable fit window")
    return best[0]


def _validate_axis(feed: MotionTrace, model: MotionModel1D, created_at: float, axis: int,
                   slot_index: int, cfg: OmcConfig) -> float:
    i = feed.nearest_index(created_at + cfg.validation_offset)
    t_obs, x_obs = float(feed.times[i]), float(feed.positions[i, axis])
    if t_obs <= created_at:
        raise FeedExhausted(f"no observation after slot {slot_index}")
    q = ReachBoxQuery.around_observation(
        created_at, t_obs, x_obs, cfg.t_plus, cfg.t_minus, cfg.x_plus, cfg.x_minus
    )
    cfg_p = derive_perturbation(model.accuracy)
    return check_reach_box(model, cfg_p, q, cfg.smc, _seed(cfg, slot_index, axis)).p_hat


def _process_axis(feed, axis, created_at, slot_index, cfg):
    window = feed.window(created_at, max(cfg.fit_windows), axis)
    try:
        model = fit_axis(window, created_at, cfg.accuracy_for(axis), cfg)
    except (FitError, ValueError) as exc:
        return None, 0.0, str(exc)
    return model, _validate_axis(feed, model, created_at, axis, slot_index, cfg), None


def run_slot(
    feed: MotionTrace,
    prev: TierState,
    cfg: OmcConfig,
    slot_index: int,
    executor: Executor | None = None,
) -> tuple[SlotModelSet, TierState]:
    """Fit, validate and publish the model set for one slot."""
    created_at = cfg.boundary(feed.start, slot_index)
    if created_at + cfg.validation_offset > feed.end:
        raise FeedExhausted(f"feed ends at {feed.end} ms, slot {slot_index} needs {created_at + cfg.validation_offset}")
    axes = range(feed.dims)
    if executor is None:
        results = [_process_axis(feed, ax, created_at, slot_index, cfg) for ax in axes]
    else:
        futures = [executor.submit(_process_axis, feed, ax, created_at, slot_index, cfg) for ax in axes]
        results = [f.result() for f in futures]  # barrier: all axes of the same slot

    models = tuple(r[0] for r in results)
    probs = tuple(r[1] for r in results)
    errors = tuple(r[2] for r in results)
    passed = [m is not None and p >= prev.tp for m, p, _ in results]
    state = prev.update(passed)
    valid = all(m is not None for m in models) and not state.invalid
    if not valid:
        log.info("slot %d: no valid model (tiers %s, errors %s)", slot_index, state.tiers, errors)
    return SlotModelSet(slot_index, created_at, models, valid, probs, state.tiers, errors), state


def slot_clock(start: float, cfg: OmcConfig, end: float | None = None, realtime: bool = False) -> Iterator[float]:
    """Slot boundaries ``start, start + interval, ...`` (strictly before ``end``).

    With ``realtime`` the generator sleeps so boundaries are emitted at the
    matching wall-clock instants.
    """
    wall0 = time.monotonic()
    k = 0
    while True:
        boundary = start + k * cfg.slot_interval
        if end is not None and boundary >= end:
            return
        if realtime:
            delay = wall0 + k * cfg.slot_interval / 1000.0 - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        yield boundary
        k += 1


class OmcPipeline:
    """Replays a feed slot by slot, caching the published model sets."""

    def __init__(self, feed: MotionTrace, cfg: OmcConfig = OmcConfig(), executor: Executor | None = None):
        self.feed = feed
        self.cfg = cfg
        self.executor = executor
        self.state = TierState.initial(feed.dims, cfg.tp)
        self._sets: list[SlotModelSet] = []
        self.exhausted = False

    @property
    def dims(self) -> int:
        return self.feed.dims

    def model_set(self, slot_index: int) -> SlotModelSet | None:
        """Model set of ``slot_index``; ``None`` once the feed is exhausted."""
        if slot_index < 0:
            raise ValueError("slot index must be non-negative")
        while len(self._sets) <= slot_index and not self.exhausted:
            try:
                ms, self.state = run_slot(self.feed, self.state, self.cfg, len(self._sets), self.executor)
            except FeedExhausted:
                self.exhausted = True
                break
            self._sets.append(ms)
        return self._sets[slot_index] if slot_index < len(self._sets) else None

    def run_all(self) -> list[SlotModelSet]:
        k = 0
        while self.model_set(k) is not None:
            k += 1
        return list(self._sets)
