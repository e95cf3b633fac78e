"""Per-slot beam verification against the current axis models."""

from __future__ import annotations

import logging
import os
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np

from .beams import BeamSpec
from .motion import derive_perturbation
from .pipeline import OmcPipeline, SlotModelSet
from .smc import InvariantQuery, ProbabilityEstimate, SmcConfig, check_invariant

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 0.5
STRICT_CUTOFF = 0.91
DEFAULT_SCOPE = 3000.0
STATUS_OK = "OK"
STATUS_GAP = "GAP"


def build_queries(beam: BeamSpec, scope: float = DEFAULT_SCOPE) -> list[InvariantQuery]:
    """One invariant query per axis from the beam's bounds."""
    problems = beam.problems()
    if problems:
        raise ValueError(f"beam {beam.id}: " + "; ".join(problems))
    return [InvariantQuery(scope, lo, hi) for lo, hi in beam.bounds]


def _by_id(beam: BeamSpec):
    # numeric IDs sort numerically, others lexically after them
    return (0, int(beam.id), "") if beam.id.isdigit() else (1, 0, beam.id)


def prioritize(beams: list[BeamSpec]) -> list[BeamSpec]:
    """Order beams for verification.

    Running beams come first, then started ones; the rest alternate between
    the widest-bounds ranking and the shortest-remaining-time ranking.
    """
    running = sorted((b for b in beams if b.running), key=_by_id)
    started = sorted((b for b in beams if b.started and not b.running), key=_by_id)
    rest = [b for b in beams if not b.started and not b.running]
    by_width = sorted(rest, key=lambda b: (-b.min_width, _by_id(b)))
    by_time = sorted(rest, key=lambda b: (b.remaining_time, _by_id(b)))
    rankings = [iter(by_width), iter(by_time)]
    mixed: list[BeamSpec] = []
    picked: set[int] = set()
    turn = 0
    while len(mixed) < len(rest):
        for beam in rankings[turn]:
            if id(beam) not in picked:
                picked.add(id(beam))
                mixed.append(beam)
                break
        turn ^= 1
    return running + started + mixed


@dataclass(frozen=True)
class VerificationResult:
    beam_id: str
    estimates: tuple[ProbabilityEstimate | None, ...]
    combined_p: float
    deliverable: bool
    slot_index: int
    error: str | None = None

    @property
    def completed(self) -> bool:
        return self.error is None and all(e is not None and e.completed for e in self.estimates)


@dataclass
class SlotResponse:
    slot_index: int
    status: str
    results: list[VerificationResult] = field(default_factory=list)

    @property
    def deliverable_ids(self) -> set[str]:
        return {r.beam_id for r in self.results if r.deliverable}


def _query_seed(seed: int, slot_index: int, beam_id: str, axis: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, slot_index, zlib.crc32(beam_id.encode()), axis])


def _verify_beam(beam, model_set, cutoff, scope, smc, seed, stop_at, cancel):
    try:
        queries = build_queries(beam, scope)
        if len(queries) != model_set.dims:
            raise ValueError(f"beam {beam.id} has {len(queries)} axes, models have {model_set.dims}")
    except ValueError as exc:
        return VerificationResult(beam.id, (), 0.0, False, model_set.slot_index, str(exc))
    estimates = []
    for axis, (q, model) in enumerate(zip(queries, model_set.models)):
        est = check_invariant(
            model, derive_perturbation(model.accuracy), q, smc,
            _query_seed(seed, model_set.slot_index, beam.id, axis), stop_at=stop_at, cancel=cancel,
        )
        estimates.append(est)
        if not est.completed:
            break
    estimates += [None] * (len(queries) - len(estimates))
    return _combine(beam.id, estimates, cutoff, model_set.slot_index)


def _combine(beam_id, estimates, cutoff, slot_index) -> VerificationResult:
    combined = min((e.p_hat if e is not None else 0.0) for e in estimates)
    done = all(e is not None and e.completed for e in estimates)
    return VerificationResult(beam_id, tuple(estimates), combined, done and combined >= cutoff, slot_index)


def _timed_out(beam: BeamSpec, dims: int, slot_index: int) -> VerificationResult:
    return VerificationResult(beam.id, (None,) * dims, 0.0, False, slot_index)


def verify_slot(
    beams: list[BeamSpec],
    model_set: SlotModelSet | None,
    cutoff: float = DEFAULT_CUTOFF,
    deadline: float | None = 3000.0,
    workers: int | None = None,
    scope: float = DEFAULT_SCOPE,
    smc: SmcConfig = SmcConfig(),
    seed: int = 0,
) -> SlotResponse:
    """Check every beam against the slot's models within ``deadline`` ms of wall time.

    Beams are checked in priority order on ``workers`` threads.  Beams whose
    checks did not finish in time are reported incomplete and not
    deliverable.  An invalid or missing model set yields a GAP response.
    """
    if model_set is None or not model_set.valid:
        slot = -1 if model_set is None else model_set.slot_index
        return SlotResponse(slot, STATUS_GAP)
    stop_at = None if deadline is None else time.monotonic() + deadline / 1000.0
    cancel = threading.Event()
    ordered = prioritize(beams)
    workers = workers or os.cpu_count() or 1
    results: dict[str, VerificationResult] = {}

    def task(beam):
        return _verify_beam(beam, model_set, cutoff, scope, smc, seed, stop_at, cancel)

    if workers == 1:
        for beam in ordered:
            results[beam.id] = task(beam)
    else:
        pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="verify")
        futures = {pool.submit(task, beam): beam for beam in ordered}
        timeout = None if stop_at is None else max(0.0, stop_at - time.monotonic())
        done, pending = wait(futures, timeout=timeout)
        cancel.set()
        pool.shutdown(wait=False, cancel_futures=True)
        for fut in done:
            results[futures[fut].id] = fut.result()
    out = [results.get(b.id) or _timed_out(b, model_set.dims, model_set.slot_index) for b in beams]
    n_done = sum(r.completed for r in out)
    if n_done < len(out):
        log.info("slot %d: %d of %d beams checked before the deadline", model_set.slot_index, n_done, len(out))
    return SlotResponse(model_set.slot_index, STATUS_OK, out)


@dataclass
class ServiceConfig:
    cutoff: float = DEFAULT_CUTOFF
    scope: float = DEFAULT_SCOPE
    deadline: float | None = 3000.0
    workers: int | None = None
    epsilon: float = 0.05
    delta: float = 0.05
    seed: int = 0


class BeamService:
    """Answers beam requests slot by slot from an OMC pipeline."""

    def __init__(self, pipeline: OmcPipeline, cfg: ServiceConfig = ServiceConfig()):
        self.pipeline = pipeline
        self.cfg = cfg

    @property
    def dims(self) -> int:
        return self.pipeline.dims

    def handle(self, slot_hint: int, beams: list[BeamSpec]) -> SlotResponse:
        model_set = self.pipeline.model_set(slot_hint)
        if model_set is None:
            return SlotResponse(slot_hint, STATUS_GAP)
        c = self.cfg
        return verify_slot(
            beams, model_set, c.cutoff, c.deadline, c.workers, c.scope,
            SmcConfig(c.epsilon, c.delta), c.seed,
        )
