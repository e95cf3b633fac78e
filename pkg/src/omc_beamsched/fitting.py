"""Fitting motion models to windows of timestamped position samples."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .motion import DEFAULT_DT, N_HARMONICS, MotionModel1D, _position

PERIOD_BAND = (1500.0, 10000.0)
MIN_SAMPLES_PER_PERIOD = 8
FIT_WINDOW = 20000.0


class FitError(ValueError):
    pass


class PeriodEstimationError(FitError):
    pass


@dataclass
class SampleWindow:
    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.times.shape != self.positions.shape or self.times.ndim != 1:
            raise ValueError("times and positions must be 1-D arrays of equal length")
        if len(self.times) < 2:
            raise ValueError("a window needs at least two samples")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample timestamps must be strictly increasing")

    @property
    def window_length(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def sample_interval(self) -> float:
        return float(np.median(np.diff(self.times)))

    def __len__(self):
        return len(self.times)

    def trailing(self, length: float) -> "SampleWindow":
        keep = self.times >= self.times[-1] - length
        return SampleWindow(self.times[keep], self.positions[keep])


class FitResult(NamedTuple):
    model: MotionModel1D
    residual_rms: float


def _detrended(window: SampleWindow) -> np.ndarray:
    t = window.times - window.times[0]
    slope, icept = np.polyfit(t, window.positions, 1)
    return window.positions - (icept + slope * t)


def is_flat(window: SampleWindow, tol: float = 0.05) -> bool:
    """True if the window shows no oscillation beyond ``tol`` mm (std after detrending)."""
    return float(np.std(_detrended(window))) < tol


def estimate_period(window: SampleWindow, band: tuple[float, float] = PERIOD_BAND) -> float:
    """Dominant breathing period (ms) from the autocorrelation of the detrended window."""
    dt = window.sample_interval
    grid = np.arange(window.times[0], window.times[-1] + 0.5 * dt, dt)
    x = np.interp(grid, window.times, window.positions)
    x = x - np.polyval(np.polyfit(grid - grid[0], x, 1), grid - grid[0])
    var = float(np.dot(x, x)) / len(x)
    if var <= 1e-18 * max(1.0, float(np.max(np.abs(window.positions))) ** 2):
        raise PeriodEstimationError("signal shows no oscillation")

    n = len(x)
    lo = int(math.ceil(band[0] / dt))
    hi = min(int(math.floor(band[1] / dt)), n - 2)
    if hi - lo < 3:
        raise PeriodEstimationError("window too short for the period band")
    full = np.correlate(x, x, mode="full")[n - 1:]
    acf = full / (np.arange(n, 0, -1) * var)

    seg = acf[lo - 1:hi + 2]
    peaks, _ = find_peaks(seg, height=0.2)
    peaks = peaks[(peaks >= 1) & (peaks <= len(seg) - 2)]
    if len(peaks) == 0:
        raise PeriodEstimationError("no autocorrelation peak in the period band")
    best = float(seg[peaks].max())
    # earliest peak comparable to the best one; later ones are period multiples
    idx = int(peaks[np.argmax(seg[peaks] >= 0.85 * best)])
    y0, y1, y2 = seg[idx - 1], seg[idx], seg[idx + 1]
    denom = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
    return float((lo - 1 + idx + shift) * dt)


def _design(t: np.ndarray, period: float, harmonics: int) -> np.ndarray:
    f = 2.0 * math.pi / period
    cols = [np.ones_like(t), t]
    for k in range(1, harmonics + 1):
        cols.append(np.cos(k * f * t))
        cols.append(np.sin(k * f * t))
    return np.column_stack(cols)


def _solve(t, y, period, harmonics):
    design = _design(t, period, harmonics)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef, y - design @ coef


def fit(
    window: SampleWindow,
    period: float,
    origin: float | None = None,
    harmonics: int = N_HARMONICS,
    accuracy: float = 100.0,
    dt: float = DEFAULT_DT,
) -> FitResult:
    """Least-squares fit of base, drift and harmonic coefficients for a known period.

    Model time zero is placed at ``origin`` (default: first sample), so
    ``base`` is the drift line's value there.
    """
    if not period > 0:
        raise FitError(f"invalid period {period}")
    if harmonics > 0:
        if window.window_length < 2 * period - window.sample_interval:
            raise FitError("window must cover at least two periods")
        if period / window.sample_interval < MIN_SAMPLES_PER_PERIOD:
            raise FitError(f"fewer than {MIN_SAMPLES_PER_PERIOD} samples per period")
    t0 = window.times[0] if origin is None else origin
    t = window.times - t0
    coef, resid = _solve(t, window.positions, period, harmonics)
    a = [0.0] * N_HARMONICS
    b = [0.0] * N_HARMONICS
    for k in range(harmonics):
        a[k] = float(coef[2 + 2 * k])
        b[k] = float(coef[3 + 2 * k])
    model = MotionModel1D(
        period=period, drift=float(coef[1]), base=float(coef[0]), a=a, b=b, accuracy=accuracy, dt=dt
    )
    return FitResult(model, float(np.sqrt(np.mean(resid**2))))


def refine_period(window: SampleWindow, period: float, rel_range: float = 0.15) -> float:
    """Polish a coarse period by minimising the harmonic-fit residual."""
    t = window.times - window.times[0]
    y = window.positions
    scale = float(np.std(y)) or 1.0

    def resid(p):
        return _solve(t, y, p[0], N_HARMONICS)[1] / scale

    lo = period * (1 - rel_range)
    hi = min(period * (1 + rel_range), (window.window_length + window.sample_interval) / 2)
    if hi <= lo:
        return period
    x0 = min(max(period, lo), hi)
    sol = least_squares(
        resid, [x0], bounds=([lo], [hi]), x_scale=[period], xtol=1e-15, ftol=1e-15, gtol=1e-15
    )
    return float(sol.x[0])


def fit_window(
    window: SampleWindow,
    origin: float | None = None,
    accuracy: float = 100.0,
    dt: float = DEFAULT_DT,
    flat_tol: float | None = None,
) -> FitResult:
    """Estimate the period, refine it and fit the model in one go.

    With ``flat_tol`` set, a window without oscillation yields a
    zero-harmonic (base + drift) model instead of an estimation failure.
    """
    if flat_tol is not None and is_flat(window, flat_tol):
        return fit(window, 4000.0, origin, harmonics=0, accuracy=accuracy, dt=dt)
    period = refine_period(window, estimate_period(window))
    return fit(window, period, origin, accuracy=accuracy, dt=dt)


def predict(model: MotionModel1D, t_rel) -> np.ndarray:
    """Deterministic model positions at times relative to model creation (may be negative)."""
    t_rel = np.asarray(t_rel, dtype=float)
    return _position(model.base, model.drift, model.a, model.b, model.frequency, t_rel)
