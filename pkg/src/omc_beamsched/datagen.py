"""Synthetic motion traces and quantile-matched beam lists."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .beams import BeamSpec
from .formats import MotionTrace, parse_declarations
from .motion import DEFAULT_DT, MotionModel1D, _position

EVENT_KINDS = ("period", "amplitude", "baseline", "noise")


@dataclass(frozen=True)
class ChangeEvent:
    """A scripted change, cross-faded linearly over ``[time, time + fade]``.

    ``period`` and ``amplitude`` scale the current value by ``value``,
    ``baseline`` adds ``value`` mm and ``noise`` sets the noise sigma (mm).
    ``axes`` restricts the event to some axes (default: all).
    """

    kind: str
    time: float
    value: float
    fade: float = 2000.0
    axes: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.fade < 0:
            raise ValueError("fade must be non-negative")
        if self.kind in ("period", "amplitude") and self.value <= 0:
            raise ValueError(f"{self.kind} factor must be positive")
        if self.kind == "noise" and self.value < 0:
            raise ValueError("noise sigma must be non-negative")

    @property
    def end(self) -> float:
        return self.time + self.fade


@dataclass
class TraceSpec:
    axes: list[MotionModel1D]
    duration: float
    interval: float = DEFAULT_DT
    noise: list[float] | None = None
    events: list[ChangeEvent] = field(default_factory=list)
    start: float = 0.0

    def __post_init__(self):
        if len(self.axes) not in (1, 3):
            raise ValueError("a trace has 1 or 3 axes")
        if self.duration <= 0 or self.interval <= 0:
            raise ValueError("duration and interval must be positive")
        if self.noise is None:
            self.noise = [0.0] * len(self.axes)
        if len(self.noise) != len(self.axes):
            raise ValueError("one noise sigma per axis")
        for axis in range(len(self.axes)):
            evs = sorted(self._events_for(axis), key=lambda e: e.time)
            for prev, nxt in zip(evs, evs[1:]):
                if nxt.time < prev.end or nxt.time == prev.time:
                    raise ValueError(
                        f"overlapping events on axis {axis} at t={prev.time} and t={nxt.time}"
                    )

    def _events_for(self, axis: int) -> list[ChangeEvent]:
        return [e for e in self.events if e.axes is None or axis in e.axes]

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "TraceSpec":
        axes = []
        for item in raw["axes"]:
            if isinstance(item, str):
                path = Path(item) if base_dir is None else base_dir / item
                axes.append(parse_declarations(path.read_text(encoding="utf-8")))
            else:
                axes.append(MotionModel1D(**item))
        events = [
            ChangeEvent(**{**e, "axes": tuple(e["axes"]) if e.get("axes") is not None else None})
            for e in raw.get("events", [])
        ]
        return cls(
            axes=axes,
            duration=float(raw["duration"]),
            interval=float(raw.get("interval", DEFAULT_DT)),
            noise=raw.get("noise"),
            events=events,
            start=float(raw.get("start", 0.0)),
        )

    @classmethod
    def from_json(cls, path) -> "TraceSpec":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)


def _timeline(t, events, kind, initial, combine):
    """Piecewise-linear parameter course for one event kind."""
    knots_t, knots_v = [t[0] if len(t) else 0.0], [initial]
    current = initial
    for ev in sorted((e for e in events if e.kind == kind), key=lambda e: e.time):
        new = combine(current, ev.value)
        knots_t += [ev.time, ev.end if ev.fade > 0 else np.nextafter(ev.time, np.inf)]
        knots_v += [current, new]
        current = new
    if len(knots_t) == 1:
        return None
    return np.interp(t, knots_t, knots_v)


def gen_motion_trace(spec: TraceSpec, seed=None) -> MotionTrace:
    """Sample the scripted motion every ``spec.interval`` ms for ``spec.duration`` ms."""
    rng = np.random.default_rng(seed)
    n = int(np.floor(spec.duration / spec.interval + 1e-9)) + 1
    t = np.arange(n) * spec.interval  # time since trace start
    columns = []
    for axis, model in enumerate(spec.axes):
        events = [
            ChangeEvent(e.kind, e.time - spec.start, e.value, e.fade, e.axes)
            for e in spec._events_for(axis)
        ]
        offset = _timeline(t, events, "baseline", 0.0, lambda c, v: c + v)
        scale = _timeline(t, events, "amplitude", 1.0, lambda c, v: c * v)
        pscale = _timeline(t, events, "period", 1.0, lambda c, v: c * v)
        sigma = _timeline(t, events, "noise", float(spec.noise[axis]), lambda c, v: v)

        base = model.base if offset is None else model.base + offset
        a, b = model.a, model.b
        if scale is not None:
            a = [ak * scale for ak in a]
            b = [bk * scale for bk in b]
        extra = None
        if pscale is not None:
            f = model.frequency
            extra = cumulative_trapezoid(f / pscale - f, t, initial=0.0)
        pos = _position(base, model.drift, a, b, model.frequency, t, extra)
        if sigma is None:
            sigma = np.full(n, float(spec.noise[axis]))
        pos = pos + sigma * rng.standard_normal(n)
        columns.append(pos)
    return MotionTrace(spec.start + t, np.column_stack(columns))


def _stratified_quantiles(values: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    # one uniform draw per probability stratum, shuffled; the outer strata
    # are pinned to the template extremes so min and max carry over exactly
    values = np.asarray(values, dtype=float)
    strata = rng.permutation(n)
    u = (strata + rng.uniform(size=n)) / n
    if n > 1:
        u[strata == 0] = 0.0
        u[strata == n - 1] = 1.0
    x = np.quantile(values, u)
    return _match_mean(x, values)


def _match_mean(x: np.ndarray, values: np.ndarray) -> np.ndarray:
    # Interpolating the empirical CDF biases the mean for small templates.
    # Pull it back with x + lam (x - L)(R - x) / (R - L) inside each
    # inter-quartile segment [L, R]: monotone for |lam| <= 1 and it leaves
    # min, quartiles and max where they are.
    edges = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
    seg = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, 3)
    lo, hi = edges[seg], edges[seg + 1]
    width = hi - lo
    g = np.divide((x - lo) * (hi - x), width, out=np.zeros_like(x), where=width > 0)
    if not g.any():
        return x
    lam = float(np.clip((values.mean() - x.mean()) / g.mean(), -1.0, 1.0))
    return x + lam * g


def gen_beam_list(template: list[BeamSpec], n: int, seed=None) -> list[BeamSpec]:
    """Draw ``n`` beams whose time and bound columns follow the template's empirical distributions.

    Columns are sampled independently by the inverse empirical CDF.  Times
    are rounded to whole milliseconds; IDs are fresh and unique.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not template:
        raise ValueError("template beam list is empty")
    dims = template[0].dims
    if any(b.dims != dims for b in template):
        raise ValueError("template mixes 1D and 3D beams")
    rng = np.random.default_rng(seed)

    times = np.maximum(1, np.rint(_stratified_quantiles([b.remaining_time for b in template], n, rng)))
    if dims == 1:
        thr = _stratified_quantiles([b.threshold for b in template], n, rng)
        bounds = [((-v, v),) for v in np.round(thr, 4)]
    else:
        per_axis = []
        for k in range(3):
            lo = _stratified_quantiles([b.bounds[k][0] for b in template], n, rng)
            hi = _stratified_quantiles([b.bounds[k][1] for b in template], n, rng)
            per_axis.append(np.round(np.sort(np.column_stack([lo, hi]), axis=1), 4))
        bounds = [tuple(tuple(per_axis[k][i]) for k in range(3)) for i in range(n)]

    if n <= 90000:
        ids = rng.choice(np.arange(10000, 100000), size=n, replace=False)
    else:
        ids = 10000 + rng.permutation(n)
    return [BeamSpec(str(i), float(t), bd) for i, t, bd in zip(ids, times, bounds)]
