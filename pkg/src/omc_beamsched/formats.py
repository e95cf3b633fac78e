"""Motion-trace and beam-list CSV files and the model declaration text format."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beams import BeamSpec
from .fitting import SampleWindow
from .motion import DEFAULT_DT, N_HARMONICS, MotionModel1D


class FormatError(ValueError):
    """Malformed input; the message carries the line (and column) involved."""


def fmt_float(x: float) -> str:
    # shortest repr that round-trips
    return repr(float(x))


def fmt_time(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _number(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"{where}: malformed number {text.strip()!r}") from None
    if not math.isfinite(value):
        raise FormatError(f"{where}: non-finite number {text.strip()!r}")
    return value


def _read_csv(text: str, header: list[str] | tuple[list[str], ...], what: str):
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{what}: empty file, header row required")
    cols = [c.strip() for c in lines[0].split(",")]
    headers = header if isinstance(header, tuple) else (header,)
    if cols not in [list(h) for h in headers]:
        expected = " or ".join(",".join(h) for h in headers)
        raise FormatError(f"{what}: line 1: expected header {expected}, got {lines[0]!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(cols):
            raise FormatError(
                f"{what}: line {lineno}: expected {len(cols)} columns, got {len(fields)}"
            )
        rows.append((lineno, [f.strip() for f in fields]))
    return cols, rows


# -- motion traces ------------------------------------------------------------

TRACE_HEADER_1D = ["t[ms]", "x[mm]"]
TRACE_HEADER_3D = ["t[ms]", "x[mm]", "y[mm]", "z[mm]"]


@dataclass
class MotionTrace:
    """Timestamped positions; ``positions`` has one column per axis (1 or 3)."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        self.positions = pos
        if pos.shape[0] != len(self.times) or pos.shape[1] not in (1, 3):
            raise ValueError("positions must have shape (n, 1) or (n, 3) matching times")
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise ValueError("trace timestamps must be strictly increasing")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(pos))):
            raise ValueError("trace values must be finite")

    @property
    def dims(self) -> int:
        return self.positions.shape[1]

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def index_at(self, t: float) -> int:
        """Index of the last sample at or before ``t`` (sample-and-hold)."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the trace")
        return i

    def nearest_index(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i == 0:
            return 0
        if i == len(self.times):
            return i - 1
        return i if self.times[i] - t < t - self.times[i - 1] else i - 1

    def window(self, end: float, length: float, axis: int = 0) -> SampleWindow:
        """Samples with ``end - length <= t <= end`` on one axis."""
        lo = int(np.searchsorted(self.times, end - length, side="left"))
        hi = int(np.searchsorted(self.times, end, side="right"))
        return SampleWindow(self.times[lo:hi], self.positions[lo:hi, axis])


def parse_trace(text: str) -> MotionTrace:
    cols, rows = _read_csv(text, (TRACE_HEADER_1D, TRACE_HEADER_3D), "motion trace")
    if not rows:
        raise FormatError("motion trace: no samples")
    values = np.empty((len(rows), len(cols)))
    for r, (lineno, fields) in enumerate(rows):
        for c, f in enumerate(fields):
            values[r, c] = _number(f, f"motion trace: line {lineno}, column {c + 1}")
    bad = np.flatnonzero(np.diff(values[:, 0]) <= 0)
    if len(bad):
        raise FormatError(
            f"motion trace: line {rows[bad[0] + 1][0]}: timestamps must be strictly increasing"
        )
    return MotionTrace(values[:, 0], values[:, 1:])


def format_trace(trace: MotionTrace) -> str:
    header = TRACE_HEADER_1D if trace.dims == 1 else TRACE_HEADER_3D
    lines = [",".join(header)]
    for t, row in zip(trace.times, trace.positions):
        lines.append(",".join([fmt_time(t), *(fmt_float(v) for v in row)]))
    return "\n".join(lines) + "\n"


def read_trace(path) -> MotionTrace:
    return parse_trace(Path(path).read_text(encoding="utf-8"))


def write_trace(trace: MotionTrace, path) -> None:
    Path(path).write_text(format_trace(trace), encoding="utf-8")


# -- beam lists ---------------------------------------------------------------

BEAM_HEADER_1D = ["ID", "Time[ms]", "Threshold[mm]"]
BEAM_HEADER_3D = [
    "ID", "Time[ms]",
    "XLower[mm]", "XUpper[mm]", "YLower[mm]", "YUpper[mm]", "ZLower[mm]", "ZUpper[mm]",
]


def parse_beam_list(text: str) -> list[BeamSpec]:
    cols, rows = _read_csv(text, (BEAM_HEADER_1D, BEAM_HEADER_3D), "beam list")
    beams = []
    seen = set()
    for lineno, fields in rows:
        where = f"beam list: line {lineno}"
        bid = fields[0]
        if not bid:
            raise FormatError(f"{where}, column 1: empty ID")
        if bid in seen:
            raise FormatError(f"{where}, column 1: duplicate ID {bid!r}")
        seen.add(bid)
        time = _number(fields[1], f"{where}, column 2")
        if time <= 0:
            raise FormatError(f"{where}, column 2: delivery time must be positive")
        nums = [_number(f, f"{where}, column {c + 3}") for c, f in enumerate(fields[2:])]
        if len(nums) == 1:
            if nums[0] < 0:
                raise FormatError(f"{where}, column 3: threshold must be non-negative")
            beams.append(BeamSpec.symmetric(bid, time, nums[0]))
        else:
            pairs = list(zip(nums[0::2], nums[1::2]))
            for k, (lo, hi) in enumerate(pairs):
                if lo > hi:
                    raise FormatError(f"{where}, column {2 * k + 3}: lower bound exceeds upper bound")
            beams.append(BeamSpec(bid, time, tuple(pairs)))
    return beams


def format_beam_list(beams: list[BeamSpec]) -> str:
    if not beams:
        raise ValueError("cannot write an empty beam list without knowing its dimension")
    dims = beams[0].dims
    lines = [",".join(BEAM_HEADER_1D if dims == 1 else BEAM_HEADER_3D)]
    for beam in beams:
        if beam.dims != dims:
            raise ValueError("beam list mixes 1D and 3D beams")
        if dims == 1:
            lo, hi = beam.bounds[0]
            if lo != -hi:
                raise ValueError(f"beam {beam.id}: 1D lists need symmetric bounds")
            values = [fmt_float(hi)]
        else:
            values = [fmt_float(v) for pair in beam.bounds for v in pair]
        lines.append(",".join([beam.id, fmt_time(beam.remaining_time), *values]))
    return "\n".join(lines) + "\n"


def read_beam_list(path) -> list[BeamSpec]:
    return parse_beam_list(Path(path).read_text(encoding="utf-8"))


def write_beam_list(beams: list[BeamSpec], path) -> None:
    Path(path).write_text(format_beam_list(beams), encoding="utf-8")


# -- model declarations -------------------------------------------------------

_SCALAR = re.compile(r"^\s*(?:const\s+)?double\s+(\w+)\s*=\s*([^;]*);")
_ARRAY = re.compile(r"^\s*(?:const\s+)?double\s+(\w+)\s*\[\s*(\d+)\s*\]\s*=\s*\{([^}]*)\}\s*;")
_TIMER = re.compile(r"^\s*\w+\s*=\s*Timer\s*\(\s*([^)]*)\)\s*;")
_SCALAR_FIELDS = ("period", "drift", "base", "accuracy")
_ARRAY_FIELDS = ("a", "b")


class DeclarationError(FormatError):
    pass


def _decl_number(text: str, where: str) -> float:
    try:
        return _number(text, where)
    except FormatError as exc:
        raise DeclarationError(str(exc)) from None


def parse_declarations(text: str) -> MotionModel1D:
    """Read a motion model from declaration text (``const double period = 5088.0;`` ...).

    Declarations of other names are ignored.  ``accuracy`` defaults to 100
    and the step duration comes from a ``Timer(<dt>)`` instantiation if present.
    """
    found: dict[str, object] = {}
    dt = DEFAULT_DT
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("//", 1)[0]
        m = _ARRAY.match(line)
        if m:
            name, size, body = m.group(1), int(m.group(2)), m.group(3)
            if name not in _ARRAY_FIELDS:
                continue
            items = [s for s in (p.strip() for p in body.split(","))]
            if size != N_HARMONICS or len(items) != N_HARMONICS:
                raise DeclarationError(
                    f"line {lineno}: array {name!r} must have arity {N_HARMONICS} "
                    f"(declared {size}, {len(items)} values)"
                )
            if name in found:
                raise DeclarationError(f"line {lineno}: duplicate declaration of {name!r}")
            found[name] = tuple(_decl_number(s, f"line {lineno}: {name}") for s in items)
            continue
        m = _SCALAR.match(line)
        if m:
            name = m.group(1)
            if name in _ARRAY_FIELDS:
                raise DeclarationError(f"line {lineno}: {name!r} must be declared as an array")
            if name not in _SCALAR_FIELDS:
                continue
            if name in found:
                raise DeclarationError(f"line {lineno}: duplicate declaration of {name!r}")
            found[name] = _decl_number(m.group(2), f"line {lineno}: {name}")
            continue
        m = _TIMER.match(line)
        if m:
            dt = _decl_number(m.group(1), f"line {lineno}: Timer step")
    missing = [n for n in ("period", "drift", "base", "a", "b") if n not in found]
    if missing:
        raise DeclarationError(f"missing declaration of {', '.join(repr(n) for n in missing)}")
    try:
        return MotionModel1D(
            period=found["period"], drift=found["drift"], base=found["base"],
            a=found["a"], b=found["b"], accuracy=found.get("accuracy", 100.0), dt=dt,
        )
    except ValueError as exc:
        raise DeclarationError(str(exc)) from None


def write_declarations(model: MotionModel1D) -> str:
    values = (model.period, model.drift, model.base, model.accuracy, model.dt, *model.a, *model.b)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("cannot write non-finite model parameters")
    lines = []
    if model.accuracy != 100.0:
        lines += [f"const double accuracy = {fmt_float(model.accuracy)};", ""]
    lines += [
        f"const double period = {fmt_float(model.period)};",
        f"const double drift = {fmt_float(model.drift)};",
        "",
        f"double base = {fmt_float(model.base)};",
        "double a[4] = { " + ", ".join(fmt_float(v) for v in model.a) + " };",
        "double b[4] = { " + ", ".join(fmt_float(v) for v in model.b) + " };",
    ]
    if model.dt != DEFAULT_DT:
        lines += ["", f"Clock = Timer({fmt_time(model.dt)});"]
    return "\n".join(lines) + "\n"
