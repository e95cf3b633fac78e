"""One-dimensional respiratory motion model and its stochastic simulation.

Positions follow a drifting base plus four cosine/sine harmonics of a
breathing period.  The stochastic variant perturbs the coefficients, the
base and the frequency at random instants, the amount of perturbation being
controlled by an ``accuracy`` percentage (100 means deterministic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

N_HARMONICS = 4
DEFAULT_DT = 38.0

# modifier rate multipliers, relative to accrate = (100 - accuracy) / 15
TERM_RATE_FACTOR = 0.1
BASE_RATE_FACTOR = 0.25
FREQ_RATE_FACTOR = 0.0001
MIN_WAIT = 10.0
MAX_WAIT = 1000.0


def _as_coeffs(values: Sequence[float], name: str) -> tuple[float, ...]:
    coeffs = tuple(float(v) for v in values)
    if len(coeffs) != N_HARMONICS:
        raise ValueError(f"{name} needs {N_HARMONICS} coefficients, got {len(coeffs)}")
    return coeffs


@dataclass(frozen=True)
class MotionModel1D:
    """Sine-superposition motion model for one spatial axis.

    Times are milliseconds since model creation, positions millimetres.
    """

    period: float
    drift: float
    base: float
    a: tuple[float, ...]
    b: tuple[float, ...]
    accuracy: float = 100.0
    dt: float = DEFAULT_DT

    def __post_init__(self):
        object.__setattr__(self, "a", _as_coeffs(self.a, "a"))
        object.__setattr__(self, "b", _as_coeffs(self.b, "b"))
        for name in ("period", "drift", "base", "accuracy", "dt"):
            object.__setattr__(self, name, float(getattr(self, name)))
        values = (self.period, self.drift, self.base, self.accuracy, self.dt, *self.a, *self.b)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("model parameters must be finite")
        if self.period <= 0:
            raise ValueError(f"period must be positive, got {self.period}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 0.0 <= self.accuracy <= 100.0:
            raise ValueError(f"accuracy must lie in [0, 100], got {self.accuracy}")

    @property
    def frequency(self) -> float:
        """Angular frequency in rad/ms."""
        return 2.0 * math.pi / self.period

    @property
    def amplitude_bound(self) -> float:
        """Upper bound of |position - base| for a drift-free model."""
        return sum(math.hypot(ak, bk) for ak, bk in zip(self.a, self.b))

    def evaluate(self, t):
        return evaluate(self, t)

    def with_accuracy(self, accuracy: float) -> "MotionModel1D":
        return replace(self, accuracy=accuracy)


def zero_model(base: float = 0.0, period: float = 4000.0, **kwargs) -> MotionModel1D:
    return MotionModel1D(period=period, drift=0.0, base=base, a=(0.0,) * 4, b=(0.0,) * 4, **kwargs)


def _position(base, drift, a, b, freq, t, extra_phase=None):
    # shared by evaluate(), simulate() and the trace generator so the noise-free paths agree bit for bit
    phase = freq * t
    if extra_phase is not None:
        phase = phase + extra_phase
    pos = base + drift * t
    for k in range(N_HARMONICS):
        pos = pos + a[k] * np.cos((k + 1) * phase) + b[k] * np.sin((k + 1) * phase)
    return pos


def evaluate(model: MotionModel1D, t):
    """Position of ``model`` at time ``t`` (scalar or array, ms since creation)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be non-negative")
    pos = _position(model.base, model.drift, model.a, model.b, model.frequency, t_arr)
    return float(pos) if np.ndim(pos) == 0 else pos


@dataclass(frozen=True)
class PerturbationConfig:
    term_rate: float = 0.0
    base_rate: float = 0.0
    freq_rate: float = 0.0
    min_wait: float = MIN_WAIT
    max_wait: float = MAX_WAIT

    def __post_init__(self):
        if not 0 < self.min_wait <= self.max_wait:
            raise ValueError("waits must satisfy 0 < min_wait <= max_wait")
        if min(self.term_rate, self.base_rate, self.freq_rate) < 0:
            raise ValueError("perturbation rates must be non-negative")

    @property
    def deterministic(self) -> bool:
        return self.term_rate == 0 and self.base_rate == 0 and self.freq_rate == 0


def derive_perturbation(accuracy: float) -> PerturbationConfig:
    if not 0.0 <= accuracy <= 100.0:
        raise ValueError(f"accuracy must lie in [0, 100], got {accuracy}")
    accrate = (100.0 - accuracy) / 15.0
    return PerturbationConfig(
        term_rate=1.0 * accrate * TERM_RATE_FACTOR,
        base_rate=1.0 * accrate * BASE_RATE_FACTOR,
        freq_rate=1.0 * accrate * FREQ_RATE_FACTOR,
    )


@dataclass
class Trajectory:
    """Positions sampled every ``dt`` ms, step ``i`` at ``start_time + i * dt``."""

    start_time: float
    dt: float
    positions: np.ndarray = field(repr=False)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(len(self.positions))

    @property
    def times(self) -> np.ndarray:
        return self.start_time + step_times(self.dt, (len(self.positions) - 1) * self.dt)

    def __len__(self):
        return len(self.positions)


def step_times(dt: float, horizon: float) -> np.ndarray:
    """Model times of the steps 0, dt, 2 dt, ... not exceeding ``horizon``."""
    n = int(math.floor(horizon / dt + 1e-9))
    return np.arange(n + 1) * dt


def _event_offsets(rng, n_runs, horizon, n_values, rate, cfg, t):
    """Accumulated perturbation seen at each step for one modifier process.

    Returns ``n_values`` arrays of shape (n_runs, len(t)).
    """
    mean_wait = 0.5 * (cfg.min_wait + cfg.max_wait)
    m = int(math.ceil(1.5 * horizon / mean_wait)) + 4
    waits = rng.uniform(cfg.min_wait, cfg.max_wait, size=(n_runs, m))
    event_t = np.cumsum(waits, axis=1)
    while np.any(event_t[:, -1] <= horizon):
        extra = rng.uniform(cfg.min_wait, cfg.max_wait, size=(n_runs, m))
        event_t = np.concatenate([event_t, event_t[:, -1:] + np.cumsum(extra, axis=1)], axis=1)
    m = event_t.shape[1]
    deltas = rng.uniform(-rate, rate, size=(n_values, n_runs, m))

    # count events at or before each step, row by row, via one flat search
    span = float(event_t[:, -1].max()) + float(t[-1]) + 1.0
    shift = (np.arange(n_runs) * span)[:, None]
    flat = (event_t + shift).ravel()
    queries = (t[None, :] + shift).ravel()
    counts = np.searchsorted(flat, queries, side="right").reshape(n_runs, len(t))
    counts -= (np.arange(n_runs) * m)[:, None]

    out = []
    for d in deltas:
        acc = np.concatenate([np.zeros((n_runs, 1)), np.cumsum(d, axis=1)], axis=1)
        out.append(np.take_along_axis(acc, counts, axis=1))
    return out


def simulate_runs(
    model: MotionModel1D,
    cfg: PerturbationConfig | None,
    horizon: float,
    n_runs: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Simulate ``n_runs`` independent trajectories; returns (n_runs, n_steps)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if cfg is None:
        cfg = derive_perturbation(model.accuracy)
    t = step_times(model.dt, horizon)
    if cfg.deterministic:
        row = _position(model.base, model.drift, model.a, model.b, model.frequency, t)
        return np.broadcast_to(row, (n_runs, len(t))).copy()

    a = [np.full((n_runs, len(t)), ak) for ak in model.a]
    b = [np.full((n_runs, len(t)), bk) for bk in model.b]
    for k in range(N_HARMONICS):
        da, db = _event_offsets(rng, n_runs, horizon, 2, cfg.term_rate, cfg, t)
        a[k] = a[k] + da
        b[k] = b[k] + db
    (dbase,) = _event_offsets(rng, n_runs, horizon, 1, cfg.base_rate, cfg, t)
    (dfreq,) = _event_offsets(rng, n_runs, horizon, 1, cfg.freq_rate, cfg, t)
    return _position(model.base + dbase, model.drift, a, b, model.frequency + dfreq, t)


def simulate(
    model: MotionModel1D,
    cfg: PerturbationConfig | None = None,
    horizon: float = 3000.0,
    seed: int | None = None,
) -> Trajectory:
    """One stochastic trajectory over ``[0, horizon]``, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    positions = simulate_runs(model, cfg, horizon, 1, rng)[0]
    return Trajectory(start_time=0.0, dt=model.dt, positions=positions)
