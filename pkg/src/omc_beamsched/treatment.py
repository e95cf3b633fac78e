"""Treatment session simulation: static beam order versus slot-wise verified order.

All session bookkeeping is done in integer milliseconds so that the
makespan splits exactly into beam-on, transition and idle time.
Feasibility of a beam is piecewise constant between trace samples.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .beams import BeamSpec
from .formats import MotionTrace
from .protocol import STATUS_ERROR, BeamClient, ProtocolError
from .service import STATUS_OK

logger = logging.getLogger(__name__)

DEFAULT_TRANSITION = 1500


# -- transition models --------------------------------------------------------


class ConstantTransition:
    def __init__(self, ms: int = DEFAULT_TRANSITION):
        if ms < 0:
            raise ValueError("transition time must be non-negative")
        self.ms = int(ms)

    def __call__(self, src: str, dst: str) -> int:
        return 0 if src == dst else self.ms


class MatrixTransition:
    """Pairwise transition times (ms) given as a symmetric matrix over beam IDs."""

    def __init__(self, ids: list[str], matrix):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (len(ids), len(ids)):
            raise ValueError("matrix shape does not match the ID list")
        if np.any(m < 0) or not np.array_equal(m, m.T):
            raise ValueError("transition matrix must be non-negative and symmetric")
        self.index = {str(i): k for k, i in enumerate(ids)}
        self.matrix = m

    def __call__(self, src: str, dst: str) -> int:
        if src == dst:
            return 0
        return int(math.ceil(self.matrix[self.index[src], self.index[dst]]))


class CoordinateTransition:
    """Euclidean distance between beam start positions divided by robot speed (units/ms)."""

    def __init__(self, coords: dict[str, tuple[float, ...]], speed: float):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.coords = {str(k): np.asarray(v, dtype=float) for k, v in coords.items()}
        self.speed = float(speed)

    def __call__(self, src: str, dst: str) -> int:
        if src == dst:
            return 0
        return int(math.ceil(np.linalg.norm(self.coords[src] - self.coords[dst]) / self.speed))


Transition = Callable[[str, str], int]


def read_transition_matrix(path) -> MatrixTransition:
    """CSV with header ``ID,<id1>,<id2>,...`` and one row per beam."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["ID"]:
        raise ValueError(f"{path}: line 1: expected header starting with ID")
    ids = rows[0][1:]
    body = [r for r in rows[1:] if r]
    if [r[0] for r in body] != ids:
        raise ValueError(f"{path}: row IDs must match the header order")
    try:
        matrix = [[float(v) for v in r[1:]] for r in body]
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return MatrixTransition(ids, matrix)


def read_coordinates(path, speed: float) -> CoordinateTransition:
    """CSV with header ``ID,x,y,z`` giving each beam's robot start position."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["ID", "x", "y", "z"]:
        raise ValueError(f"{path}: line 1: expected header ID,x,y,z")
    coords = {}
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != 4:
            raise ValueError(f"{path}: line {lineno}: expected 4 columns, got {len(r)}")
        coords[r[0]] = tuple(float(v) for v in r[1:])
    return CoordinateTransition(coords, speed)


@dataclass
class TreatmentPlan:
    beams: list[BeamSpec]
    transition: Transition = field(default_factory=ConstantTransition)
    initial: str | None = None

    def __post_init__(self):
        if not self.beams:
            raise ValueError("a plan needs at least one beam")
        if len({b.id for b in self.beams}) != len(self.beams):
            raise ValueError("beam IDs must be unique")
        for b in self.beams:
            if b.remaining_time <= 0:
                raise ValueError(f"beam {b.id}: delivery time must be positive")
        if self.initial is not None and self.initial not in {b.id for b in self.beams}:
            raise ValueError(f"unknown initial beam {self.initial!r}")


def greedy_order(beams: list[BeamSpec], position: str, transition: Transition) -> list[BeamSpec]:
    """Nearest-neighbour tour over ``beams`` from the robot ``position``; ties keep input order."""
    remaining = list(beams)
    order = []
    here = position
    while remaining:
        costs = [transition(here, b.id) for b in remaining]
        nxt = remaining.pop(int(np.argmin(costs)))
        order.append(nxt)
        here = nxt.id
    return order


def static_order(plan: TreatmentPlan) -> list[BeamSpec]:
    start = plan.initial or plan.beams[0].id
    return greedy_order(plan.beams, start, plan.transition)


# -- session log --------------------------------------------------------------

INTERVAL_KINDS = ("on", "transition", "idle", "gap")


@dataclass
class TreatmentLog:
    mode: str
    start: int
    events: list[tuple[int, int, str, str]] = field(default_factory=list)
    beam_on: int = 0
    transition: int = 0
    idle: int = 0
    gap: int = 0
    interruptions: int = 0
    preemptions: int = 0
    beams_completed: int = 0
    beams_total: int = 0
    end: int = 0
    complete: bool = False
    aborted: bool = False

    @property
    def makespan(self) -> int:
        return self.end - self.start

    @property
    def idle_time(self) -> int:
        """Idle time including model gaps."""
        return self.idle + self.gap

    def interval(self, kind: str, t0: int, t1: int, beam_id: str = "") -> None:
        if t1 <= t0:
            return
        if kind == "on":
            self.beam_on += t1 - t0
        elif kind == "transition":
            self.transition += t1 - t0
        elif kind == "idle":
            self.idle += t1 - t0
        else:
            self.gap += t1 - t0
        last = self.events[-1] if self.events else None
        if last and last[2] == kind and last[3] == beam_id and last[1] == t0:
            self.events[-1] = (last[0], t1, kind, beam_id)
        else:
            self.events.append((t0, t1, kind, beam_id))
        self.end = max(self.end, t1)

    def mark(self, kind: str, t: int, beam_id: str) -> None:
        if kind == "halt":
            self.interruptions += 1
        elif kind == "preempt":
            self.preemptions += 1
        elif kind == "finish":
            self.beams_completed += 1
        self.events.append((t, t, kind, beam_id))

    def audit(self) -> bool:
        """Makespan equals beam-on + transition + idle, and the event intervals tile the session."""
        sums = {k: 0 for k in INTERVAL_KINDS}
        cursor = self.start
        for t0, t1, kind, _ in self.events:
            if kind in sums:
                if t0 != cursor:
                    return False
                sums[kind] += t1 - t0
                cursor = t1
        return (
            cursor == self.end
            and sums["on"] == self.beam_on
            and sums["transition"] == self.transition
            and sums["idle"] == self.idle
            and sums["gap"] == self.gap
            and self.makespan == self.beam_on + self.transition + self.idle + self.gap
        )

    def totals(self) -> dict:
        return {
            "mode": self.mode,
            "makespan_ms": self.makespan,
            "beam_on_ms": self.beam_on,
            "transition_ms": self.transition,
            "idle_ms": self.idle_time,
            "gap_ms": self.gap,
            "interruptions": self.interruptions,
            "preemptions": self.preemptions,
            "beams_completed": self.beams_completed,
            "beams_total": self.beams_total,
            "complete": int(self.complete),
            "aborted": int(self.aborted),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start_ms", "end_ms", "kind", "beam_id"])
        w.writerows(self.events)
        return buf.getvalue()

    def summary(self) -> str:
        t = self.totals()
        status = "complete" if self.complete else ("aborted" if self.aborted else "incomplete")
        return (
            f"{self.mode} session {status}: {t['beams_completed']}/{t['beams_total']} beams, "
            f"makespan {t['makespan_ms'] / 1000:.3f} s = on {t['beam_on_ms'] / 1000:.3f} s"
            f" + transitions {t['transition_ms'] / 1000:.3f} s + idle {t['idle_ms'] / 1000:.3f} s"
            f" (of which model gaps {t['gap_ms'] / 1000:.3f} s); "
            f"{t['interruptions']} interruptions, {t['preemptions']} preemptions\n"
        )


# -- ground truth ---------------------------------------------------------------


class GroundTruth:
    """Sample-and-hold feasibility of beams along a motion trace."""

    def __init__(self, trace: MotionTrace):
        self.trace = trace
        self.times = np.rint(trace.times).astype(np.int64)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trace timestamps collapse when rounded to milliseconds")
        self.end = int(self.times[-1])
        self._cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def _feasibility(self, beam: BeamSpec):
        key = beam.bounds
        if key not in self._cache:
            if beam.dims != self.trace.dims:
                raise ValueError(f"beam {beam.id} has {beam.dims} axes, trace has {self.trace.dims}")
            lo = np.array([p[0] for p in beam.bounds])
            hi = np.array([p[1] for p in beam.bounds])
            pos = self.trace.positions
            feas = np.all((pos >= lo) & (pos <= hi), axis=1)
            changes = np.flatnonzero(np.diff(feas.astype(np.int8))) + 1
            self._cache[key] = (feas, changes)
        return self._cache[key]

    def segment(self, beam: BeamSpec, t: int) -> tuple[bool, int]:
        """Feasibility at ``t`` and the time (ms) it next changes (trace end at the latest)."""
        feas, changes = self._feasibility(beam)
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the trace")
        k = int(np.searchsorted(changes, i, side="right"))
        nxt = self.end if k == len(changes) else int(self.times[changes[k]])
        return bool(feas[i]), max(nxt, t) if t < self.end else t


@dataclass
class TreatmentConfig:
    slot_interval: int = 3000
    session_offset: int = 20000
    max_session: int | None = 2 * 3600 * 1000
    # lock session time to wall time (one slot per slot_interval of real time)
    realtime: bool = False


def _limits(truth: GroundTruth, cfg: TreatmentConfig) -> tuple[int, int]:
    t0 = int(truth.times[0]) + cfg.session_offset
    limit = truth.end if cfg.max_session is None else min(truth.end, t0 + cfg.max_session)
    if limit <= t0:
        raise ValueError("trace does not cover the session start")
    return t0, limit


def _deliver(truth, beam, rem, t, stop, delivering, log):
    """Deliver ``beam`` from ``t`` until done, a violation, or ``stop``.

    Returns ``(t, rem, delivering, outcome)`` with outcome one of
    ``finished``, ``blocked``, ``stopped``.
    """
    while t < stop:
        ok, change = truth.segment(beam, t)
        seg_end = min(change, stop)
        if seg_end <= t:
            break
        if not ok:
            if delivering:
                log.mark("halt", t, beam.id)
            return t, rem, False, "blocked"
        on = min(rem, seg_end - t)
        log.interval("on", t, t + on, beam.id)
        t += on
        rem -= on
        delivering = True
        if rem == 0:
            log.mark("finish", t, beam.id)
            return t, 0, False, "finished"
    return t, rem, delivering, "stopped"


def run_static(plan: TreatmentPlan, trace: MotionTrace, cfg: TreatmentConfig = TreatmentConfig()) -> TreatmentLog:
    """Deliver beams strictly in static order, waiting whenever the current beam is blocked."""
    truth = GroundTruth(trace)
    t0, limit = _limits(truth, cfg)
    log = TreatmentLog("static", t0, end=t0, beams_total=len(plan.beams))
    order = static_order(plan)
    t = t0
    pos = order[0].id
    for beam in order:
        if beam.id != pos:
            dur = plan.transition(pos, beam.id)
            end = min(t + dur, limit)
            log.interval("transition", t, end, beam.id)
            t, pos = end, beam.id
        rem = int(round(beam.remaining_time))
        delivering = False
        while rem > 0 and t < limit:
            t, rem, delivering, outcome = _deliver(truth, beam, rem, t, limit, delivering, log)
            if outcome == "blocked":
                ok, change = truth.segment(beam, t)
                end = min(change, limit)
                log.interval("idle", t, end, beam.id)
                t = end
        if rem > 0:
            break
    log.end = max(log.end, t)
    log.complete = log.beams_completed == len(plan.beams)
    return log


def run_omc(
    plan: TreatmentPlan,
    trace: MotionTrace,
    client: BeamClient,
    cfg: TreatmentConfig = TreatmentConfig(),
) -> TreatmentLog:
    """Deliver beams the service reports deliverable, re-planning every slot.

    Each slot the outstanding beams are sent to the service; the first
    deliverable beam in the nearest-neighbour order from the current robot
    position is delivered until it finishes, is blocked by the actual
    motion, or the slot ends.  GAP responses pause the treatment.
    """
    truth = GroundTruth(trace)
    t0, limit = _limits(truth, cfg)
    log = TreatmentLog("omc", t0, end=t0, beams_total=len(plan.beams))
    remaining = {b.id: int(round(b.remaining_time)) for b in plan.beams}
    specs = {b.id: b for b in plan.beams}
    started: set[str] = set()
    pos = static_order(plan)[0].id
    running: str | None = None
    t = t0
    slot = cfg.slot_interval
    wall0 = time.monotonic()

    while remaining and t < limit:
        k = (t - t0) // slot
        if cfg.realtime:
            time.sleep(max(0.0, wall0 + (t - t0) / 1000.0 - time.monotonic()))
        slot_end = min(t0 + (k + 1) * slot, limit)
        outstanding = [
            specs[i].with_progress(remaining[i], i in started, i == running) for i in specs if i in remaining
        ]
        try:
            resp = client.request(int(k), outstanding)
        except (OSError, ProtocolError) as exc:
            log.aborted = True
            logger.warning("session aborted: %s", exc)
            break
        if resp.status == STATUS_ERROR:
            log.aborted = True
            logger.warning("session aborted: service rejected the request")
            break
        if resp.status != STATUS_OK:
            if running is not None:
                log.mark("preempt", t, running)
                running = None
            log.interval("gap", t, slot_end)
            t = slot_end
            continue

        deliverable = resp.deliverable_ids
        while t < slot_end and remaining:
            order = greedy_order([b for b in outstanding if b.id in remaining], pos, plan.transition)
            cand = next((b for b in order if b.id in deliverable), None)
            if cand is None:
                if running is not None:
                    log.mark("preempt", t, running)
                    running = None
                log.interval("idle", t, slot_end)
                t = slot_end
                break
            if running is not None and running != cand.id:
                log.mark("preempt", t, running)
                running = None
            if cand.id != pos:
                end = min(t + plan.transition(pos, cand.id), limit)
                log.interval("transition", t, end, cand.id)
                t, pos = end, cand.id
                if t >= slot_end:
                    break
            started.add(cand.id)
            t, rem, delivering, outcome = _deliver(
                truth, cand, remaining[cand.id], t, slot_end, running == cand.id, log
            )
            remaining[cand.id] = rem
            running = cand.id if delivering else None
            if outcome == "finished":
                del remaining[cand.id]
                deliverable.discard(cand.id)
            elif outcome == "blocked":
                # fail-safe: wait for the next verified slot
                log.interval("idle", t, slot_end, cand.id)
                t = slot_end
                break
            elif t < slot_end:
                # trace exhausted before the slot ended
                t = slot_end
                break
    log.end = max(log.end, t if not log.aborted else log.end)
    log.complete = not remaining
    return log


# -- repeated comparison ------------------------------------------------------


@dataclass
class CompareResult:
    rows: list[dict]

    def _col(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)

    def summary(self) -> dict:
        s_idle, o_idle = self._col("static_idle_ms") / 1000, self._col("omc_idle_ms") / 1000
        n = len(self.rows)
        wins = int(np.sum(s_idle > o_idle))
        losses = int(np.sum(s_idle < o_idle))
        sign_p = float(stats.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue) if wins + losses else 1.0
        diff = s_idle - o_idle
        t_p = float(stats.ttest_rel(s_idle, o_idle, alternative="greater").pvalue) if n > 1 and np.std(diff) > 0 else float("nan")
        return {
            "repetitions": n,
            "static_idle_mean_s": float(s_idle.mean()),
            "static_idle_sd_s": float(s_idle.std(ddof=1)) if n > 1 else 0.0,
            "omc_idle_mean_s": float(o_idle.mean()),
            "omc_idle_sd_s": float(o_idle.std(ddof=1)) if n > 1 else 0.0,
            "reduction_pct": percent_reduction(float(s_idle.mean()), float(o_idle.mean())),
            "static_interruptions_mean": float(self._col("static_interruptions").mean()),
            "omc_interruptions_mean": float(self._col("omc_interruptions").mean()),
            "static_makespan_mean_s": float(self._col("static_makespan_ms").mean() / 1000),
            "omc_makespan_mean_s": float(self._col("omc_makespan_ms").mean() / 1000),
            "sign_wins": wins,
            "sign_losses": losses,
            "sign_test_p": sign_p,
            "paired_t_p": t_p,
            "all_complete": int(all(r["static_complete"] and r["omc_complete"] for r in self.rows)),
        }

    def rows_csv(self) -> str:
        return _dicts_csv(self.rows)

    def summary_csv(self) -> str:
        s = self.summary()
        return _dicts_csv([{k: _fmt(v) for k, v in s.items()}])

    def long_table_csv(self) -> str:
        """One row per (repetition, mode); convenient for plotting."""
        out = []
        for r in self.rows:
            for mode in ("static", "omc"):
                out.append({
                    "rep": r["rep"],
                    "mode": mode,
                    "idle_s": r[f"{mode}_idle_ms"] / 1000,
                    "interruptions": r[f"{mode}_interruptions"],
                    "makespan_s": r[f"{mode}_makespan_ms"] / 1000,
                })
        return _dicts_csv(out)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else v


def _dicts_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def percent_reduction(static: float, omc: float) -> float:
    return 0.0 if static == 0 else 100.0 * (static - omc) / static


def compare(
    template: list[BeamSpec],
    trace: MotionTrace,
    client_factory: Callable[[], BeamClient],
    repetitions: int = 30,
    n_beams: int = 100,
    seed: int = 0,
    transition: Transition | None = None,
    cfg: TreatmentConfig = TreatmentConfig(),
) -> CompareResult:
    """Run both schedulers on ``repetitions`` beam lists drawn from ``template``.

    Repetition ``r`` uses the beam list generated with seed ``(seed, r)``.
    """
    from .datagen import gen_beam_list

    rows = []
    for rep in range(repetitions):
        beams = gen_beam_list(template, n_beams, seed=np.random.SeedSequence([seed, rep]))
        plan = TreatmentPlan(beams, transition or ConstantTransition())
        s = run_static(plan, trace, cfg)
        o = run_omc(plan, trace, client_factory(), cfg)
        rows.append({
            "rep": rep,
            "static_idle_ms": s.idle_time,
            "omc_idle_ms": o.idle_time,
            "omc_gap_ms": o.gap,
            "static_interruptions": s.interruptions,
            "omc_interruptions": o.interruptions,
            "static_makespan_ms": s.makespan,
            "omc_makespan_ms": o.makespan,
            "static_complete": int(s.complete),
            "omc_complete": int(o.complete),
            "static_audit": int(s.audit()),
            "omc_audit": int(o.audit()),
        })
        logger.info("rep %d: idle static %.3f s, omc %.3f s", rep, s.idle_time / 1000, o.idle_time / 1000)
    return CompareResult(rows)
