"""Geometry, pulses, trajectories and discretizations shared by all stages.

Everything in this module is immutable after construction and safe to share
across threads. All operations are pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Minimum allowed separation between a sensor and any point where the
# 1/||x - y|| kernel is evaluated (lattice points, source positions).
EPS_SEP = 1e-6

SENSOR_RADIUS = 7.0
SENSOR_SET_LABELS = ("S1", "S2", "S3")

# Time samples per pulse period associated with each built-in sensor set.
SAMPLES_PER_PERIOD = {"S1": 12, "S2": 10, "S3": 7}


def as_point(p) -> np.ndarray:
    """Coerce ``p`` to a finite float 3-vector."""
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"point coordinates must be finite, got {arr}")
    return arr


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Pulse
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pulse:
    """Causal-periodic Ricker pulse.

    The pulse vanishes for t < 0 and repeats with period ``period`` for
    t >= 0. Within one period the shape is the Ricker wavelet with central
    frequency ``f0``, peaking at half period with value ``amplitude``.
    """

    f0: float = 100.0
    period: float = 0.1
    amplitude: float = 1.0

    def __post_init__(self):
        if not (self.f0 > 0 and math.isfinite(self.f0)):
            raise ValueError(f"central frequency must be positive, got {self.f0}")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError(f"period must be positive, got {self.period}")
        if not math.isfinite(self.amplitude):
            raise ValueError(f"amplitude must be finite, got {self.amplitude}")

    def eval(self, t):
        """Pulse value at time(s) ``t``; scalar in, scalar out."""
        t_arr = np.asarray(t, dtype=float)
        s = np.mod(t_arr, self.period) - 0.5 * self.period
        a = (math.pi * self.f0) ** 2
        ss = a * s * s
        out = np.where(t_arr < 0.0, 0.0, self.amplitude * (1.0 - 2.0 * ss) * np.exp(-ss))
        return float(out) if np.ndim(t) == 0 else out

    __call__ = eval

    def derivative(self, t):
        """Exact time derivative of the causal-periodic pulse."""
        t_arr = np.asarray(t, dtype=float)
        s = np.mod(t_arr, self.period) - 0.5 * self.period
        a = (math.pi * self.f0) ** 2
        ss = a * s * s
        out = np.where(
            t_arr < 0.0, 0.0, -2.0 * a * s * (3.0 - 2.0 * ss) * np.exp(-ss) * self.amplitude
        )
        return float(out) if np.ndim(t) == 0 else out

    def peak_time(self) -> float:
        return 0.5 * self.period


def ricker(t, pulse: Pulse):
    """Evaluate the causal-periodic Ricker pulse at time(s) ``t``."""
    return pulse.eval(t)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

_CHANNEL_FORMS = ("const", "linear", "sin", "cos")


@dataclass(frozen=True)
class _Channel:
    """One coordinate of an analytic path: base + amp * form(phase + rate*t)."""

    base: float
    amp: float = 0.0
    form: str = "const"
    phase: float = 0.0
    rate: float = 0.0

    def __post_init__(self):
        if self.form not in _CHANNEL_FORMS:
            raise ValueError(f"unknown channel form {self.form!r}")

    def value(self, t):
        if self.form == "const":
            return self.base + 0.0 * t
        if self.form == "linear":
            return self.base + self.amp * t
        if self.form == "sin":
            return self.base + self.amp * np.sin(self.phase + self.rate * t)
        return self.base + self.amp * np.cos(self.phase + self.rate * t)

    def slope(self, t):
        if self.form == "const":
            return 0.0 * t
        if self.form == "linear":
            return self.amp + 0.0 * t
        if self.form == "sin":
            return self.amp * self.rate * np.cos(self.phase + self.rate * t)
        return -self.amp * self.rate * np.sin(self.phase + self.rate * t)


class Trajectory:
    """A moving-source path z(t) together with its velocity dz/dt.

    ``position`` and ``velocity`` accept scalars or arrays of any shape and
    return arrays with a trailing axis of length 3. Analytic paths evaluate
    their closed form for any real t (the retarded-time solver may probe
    t < 0, where the pulse is silent anyway); piecewise-linear paths clamp
    to their end points outside the sampled range.
    """

    kind: str = "abstract"

    def position(self, t) -> np.ndarray:
        raise NotImplementedError

    def velocity(self, t) -> np.ndarray:
        raise NotImplementedError

    def max_speed(self, t_max: float, n_samples: int = 4001) -> float:
        """Largest sampled speed on [0, t_max]."""
        ts = np.linspace(0.0, t_max, n_samples)
        return float(np.linalg.norm(self.velocity(ts), axis=-1).max())

    # -- built-in path shapes ------------------------------------------------

    @staticmethod
    def static(position) -> "Trajectory":
        z0 = as_point(position)
        return AnalyticTrajectory(
            tuple(_Channel(base=float(v)) for v in z0), kind="static"
        )

    @staticmethod
    def c_shape() -> "Trajectory":
        return AnalyticTrajectory(
            (
                _Channel(1.5, 3.0, "cos", 4.0, -1.0),
                _Channel(2.0, 3.0, "sin", 2.0, 1.0),
                _Channel(1.2, -4.0, "sin", 0.0, 0.5),
            ),
            kind="analytic-c-shape",
        )

    @staticmethod
    def bow_shape() -> "Trajectory":
        return AnalyticTrajectory(
            (
                _Channel(3.0, -1.6, "linear"),
                _Channel(0.2, 2.6, "sin", 0.0, 1.25),
                _Channel(-0.3, -2.1, "sin", 0.0, 1.75),
            ),
            kind="analytic-bow-shape",
        )

    @staticmethod
    def circle_arc() -> "Trajectory":
        return AnalyticTrajectory(
            (
                _Channel(2.0, -2.0, "cos", 4.0, -0.5),
                _Channel(1.0, 3.0, "sin", 2.0, 1.0),
                _Channel(2.0),
            ),
            kind="analytic-circle-arc",
        )

    @staticmethod
    def line(origin, velocity) -> "Trajectory":
        o = as_point(origin)
        v = as_point(velocity)
        return AnalyticTrajectory(
            tuple(_Channel(float(oi), float(vi), "linear") for oi, vi in zip(o, v)),
            kind="analytic-line",
        )

    @staticmethod
    def piecewise_linear(times, points) -> "Trajectory":
        return PiecewiseLinearTrajectory(times, points)


@dataclass(frozen=True)
class AnalyticTrajectory(Trajectory):
    channels: tuple
    kind: str = "analytic"

    def __post_init__(self):
        if len(self.channels) != 3:
            raise ValueError("an analytic trajectory needs exactly 3 channels")

    def position(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([ch.value(t) for ch in self.channels], axis=-1)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        return np.stack([ch.slope(t) for ch in self.channels], axis=-1)


@dataclass(frozen=True)
class PiecewiseLinearTrajectory(Trajectory):
    """Linear interpolation through (t, point) samples.

    Velocity is the chord slope of the containing segment, one-sided at the
    boundary samples, and zero outside the sampled time range (where the
    position is clamped).
    """

    times: np.ndarray
    points: np.ndarray
    kind: str = "piecewise-linear"

    def __post_init__(self):
        ts = np.asarray(self.times, dtype=float)
        ps = np.asarray(self.points, dtype=float)
        if ts.ndim != 1 or ts.size < 2:
            raise ValueError("need at least two (t, point) samples")
        if ps.shape != (ts.size, 3):
            raise ValueError(f"points must have shape ({ts.size}, 3), got {ps.shape}")
        if not np.all(np.diff(ts) > 0):
            raise ValueError("sample times must be strictly increasing")
        if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(ps))):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "times", _readonly(ts))
        object.__setattr__(self, "points", _readonly(ps))

    def position(self, t):
        t = np.asarray(t, dtype=float)
        coords = [np.interp(t, self.times, self.points[:, i]) for i in range(3)]
        return np.stack(coords, axis=-1)

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        seg = np.clip(
            np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2
        )
        dt = self.times[seg + 1] - self.times[seg]
        slopes = (self.points[seg + 1] - self.points[seg]) / dt[..., None]
        inside = (t >= self.times[0]) & (t <= self.times[-1])
        return np.where(inside[..., None], slopes, 0.0)


def trajectory_eval(traj: Trajectory, t: float, t_max: float):
    """Position and velocity at a single time in [0, t_max]."""
    if not 0.0 <= t <= t_max:
        raise ValueError(f"time {t} outside [0, {t_max}]")
    return traj.position(t), traj.velocity(t)


# ---------------------------------------------------------------------------
# Sensors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorArray:
    """Measurement positions, stored as an (N_x, 3) array."""

    positions: np.ndarray
    label: str = ""

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must be (N_x, 3) with N_x >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("sensor positions must be finite")
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        np.fill_diagonal(dist, np.inf)
        if dist.min() == 0.0:
            raise ValueError("sensor positions must be pairwise distinct")
        object.__setattr__(self, "positions", _readonly(pos))

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]


def _sphere_point(theta: float, eta: float, radius: float) -> tuple:
    return (
        radius * math.sin(eta) * math.cos(theta),
        radius * math.sin(eta) * math.sin(theta),
        radius * math.cos(eta),
    )


def build_sensor_set(label: str) -> SensorArray:
    """One of the built-in sphere-patch apertures S1 (full), S2, S3 (sparse)."""
    if label == "S1":
        thetas = [math.pi * l / 16 for l in range(1, 33)]
        etas = [math.pi * s / 5 for s in range(1, 5)]
    elif label == "S2":
        thetas = [math.pi + math.pi * l / 8 for l in range(0, 9)]
        etas = [math.pi / 4, math.pi / 2]
    elif label == "S3":
        thetas = [math.pi, 5 * math.pi / 4, 3 * math.pi / 2]
        etas = [math.pi / 4, math.pi / 2]
    else:
        raise ValueError(f"unknown sensor set {label!r}; expected one of {SENSOR_SET_LABELS}")
    positions = [_sphere_point(th, et, SENSOR_RADIUS) for th in thetas for et in etas]
    return SensorArray(np.array(positions), label=label)


# ---------------------------------------------------------------------------
# Time discretization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Period-partitioned sampling of (0, T].

    The terminal time must be an integer number of pulse periods. Sample
    times are t = k * dt for k = 1 .. J * samples_per_period, so period j
    covers samples (j-1)*N_p + 1 .. j*N_p.
    """

    t_final: float
    period: float
    samples_per_period: int
    n_periods: int = field(init=False)
    dt: float = field(init=False)
    n_samples: int = field(init=False)
    times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.t_final <= 0 or self.period <= 0:
            raise ValueError("terminal time and period must be positive")
        if self.samples_per_period < 1:
            raise ValueError("samples_per_period must be >= 1")
        ratio = self.t_final / self.period
        n_periods = round(ratio)
        if n_periods < 1 or abs(ratio - n_periods) > 1e-9 * max(1.0, ratio):
            raise ValueError(
                f"terminal time {self.t_final} is not an integer number of periods {self.period}"
            )
        dt = self.period / self.samples_per_period
        n_samples = n_periods * self.samples_per_period
        object.__setattr__(self, "n_periods", int(n_periods))
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "n_samples", int(n_samples))
        object.__setattr__(self, "times", _readonly(dt * np.arange(1, n_samples + 1)))

    def period_slice(self, j: int) -> slice:
        """Column slice of period j (1-based) in an (N_x, N_T) record."""
        if not 1 <= j <= self.n_periods:
            raise ValueError(f"period index {j} outside 1..{self.n_periods}")
        np_ = self.samples_per_period
        return slice((j - 1) * np_, j * np_)

    def period_times(self, j: int) -> np.ndarray:
        return self.times[self.period_slice(j)]

    def midpoint(self, j: int) -> float:
        """Mid-period reference time used for ground-truth comparison."""
        if not 1 <= j <= self.n_periods:
            raise ValueError(f"period index {j} outside 1..{self.n_periods}")
        return (j - 0.5) * self.period


# ---------------------------------------------------------------------------
# Sampling lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingGrid:
    """Uniform n^3 lattice on an axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray
    n_per_axis: int

    def __post_init__(self):
        lo = as_point(self.lower)
        hi = as_point(self.upper)
        if not np.all(lo < hi):
            raise ValueError(f"lower {lo} must be componentwise below upper {hi}")
        if self.n_per_axis < 2:
            raise ValueError("n_per_axis must be >= 2")
        object.__setattr__(self, "lower", _readonly(lo))
        object.__setattr__(self, "upper", _readonly(hi))

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (self.n_per_axis - 1)

    @property
    def n_points(self) -> int:
        return self.n_per_axis ** 3

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.lower[i], self.upper[i], self.n_per_axis)

    def points(self) -> np.ndarray:
        """All lattice points as an (n^3, 3) array in C (lexicographic) order."""
        ax = [self.axis(i) for i in range(3)]
        xx, yy, zz = np.meshgrid(*ax, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)

    def flat_to_point(self, flat_index: int) -> np.ndarray:
        n = self.n_per_axis
        ix, rem = divmod(int(flat_index), n * n)
        iy, iz = divmod(rem, n)
        return self.index_to_point((ix, iy, iz))

    def index_to_point(self, idx) -> np.ndarray:
        return np.array([self.axis(i)[idx[i]] for i in range(3)])

    def nearest_index(self, p) -> tuple:
        p = as_point(p)
        h = self.spacing
        raw = np.rint((p - self.lower) / h).astype(int)
        return tuple(int(v) for v in np.clip(raw, 0, self.n_per_axis - 1))

    def contains(self, p, pad: float = 0.0) -> bool:
        p = as_point(p)
        return bool(np.all(p >= self.lower - pad) and np.all(p <= self.upper + pad))


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdsmOptions:
    peak_count: int = 1
    min_separation: float = 1.0
    # Relative denominator floor: indicator set to 0 where a norm factor
    # falls below this fraction of its maximum over the lattice.
    denominator_floor: float = 1e-14


@dataclass(frozen=True)
class McmcOptions:
    samples: int = 5000          # chain length K per period
    beta: float = 1.0            # proposal anchor mix; 1 trusts the per-period seed
    sigma_prop: float = 0.1
    prior_sigma2: float = 0.2    # prior covariance is prior_sigma2 * identity
    w_mean: float = 1e-4         # modelling-error mean, per record entry
    w_var: float = 1e-3          # modelling-error variance, per record entry
    prior_family: str = "normal"  # "normal" or "uniform-box"
    corrected: bool = False      # apply the proposal-density correction


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one synthetic experiment."""

    wave_speed: float
    sources: tuple              # tuple of (Trajectory, Pulse) pairs
    sensors: SensorArray
    time_grid: TimeGrid
    grid: SamplingGrid
    noise_level: float = 0.0
    seed: int = 0
    adsm: AdsmOptions = AdsmOptions()
    mcmc: McmcOptions = McmcOptions()

    def __post_init__(self):
        if not (self.wave_speed > 0 and math.isfinite(self.wave_speed)):
            raise ValueError(f"wave speed must be positive, got {self.wave_speed}")
        if self.noise_level < 0:
            raise ValueError(f"noise level must be >= 0, got {self.noise_level}")
        if not self.sources:
            raise ValueError("scenario needs at least one source")
        if self.adsm.peak_count < 1:
            raise ValueError("adsm.peak_count must be >= 1")
        if self.adsm.min_separation <= 0:
            raise ValueError("adsm.min_separation must be > 0")
        m = self.mcmc
        if m.samples < 1:
            raise ValueError("mcmc.samples must be >= 1")
        if not 0.0 <= m.beta <= 1.0:
            raise ValueError(f"mcmc.beta must be in [0, 1], got {m.beta}")
        if m.sigma_prop <= 0:
            raise ValueError("mcmc.sigma_prop must be > 0")
        if m.prior_sigma2 <= 0:
            raise ValueError("mcmc.prior_sigma2 must be > 0")
        if m.w_var <= 0:
            raise ValueError("mcmc.w_var must be > 0")
        if m.prior_family not in ("normal", "uniform-box"):
            raise ValueError(f"unknown prior family {m.prior_family!r}")
        for i, (_, pulse) in enumerate(self.sources, start=1):
            if abs(pulse.period - self.time_grid.period) > 1e-12 * self.time_grid.period:
                raise ValueError(
                    f"source {i} pulse period {pulse.period} does not match the "
                    f"time grid period {self.time_grid.period}"
                )
        self._check_speeds()
        self._check_separation()

    def _check_speeds(self):
        for i, (traj, _) in enumerate(self.sources, start=1):
            v = traj.max_speed(self.time_grid.t_final)
            if v >= self.wave_speed:
                raise ValueError(
                    f"source {i} reaches speed {v:.3g} >= wave speed {self.wave_speed:.3g}"
                )

    def _check_separation(self):
        sensors = self.sensors.positions
        # Nearest lattice point per sensor, found per axis.
        h = self.grid.spacing
        idx = np.clip(
            np.rint((sensors - self.grid.lower) / h).astype(int), 0, self.grid.n_per_axis - 1
        )
        nearest = self.grid.lower + idx * h
        d_lattice = np.linalg.norm(sensors - nearest, axis=1).min()
        if d_lattice < EPS_SEP:
            raise ValueError(
                f"a sensor lies within {EPS_SEP} of a lattice point (distance {d_lattice:.3g})"
            )
        ts = np.linspace(0.0, self.time_grid.t_final, 2001)
        for i, (traj, _) in enumerate(self.sources, start=1):
            path = traj.position(ts)
            d = np.linalg.norm(sensors[:, None, :] - path[None, :, :], axis=2).min()
            if d < EPS_SEP:
                raise ValueError(f"source {i} passes within {EPS_SEP} of a sensor")

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    def min_sensor_source_distance(self, n_samples: int = 2001) -> float:
        """Smallest sampled distance between any sensor and any source path."""
        ts = np.linspace(0.0, self.time_grid.t_final, n_samples)
        best = math.inf
        for traj, _ in self.sources:
            path = traj.position(ts)
            d = np.linalg.norm(
                self.sensors.positions[:, None, :] - path[None, :, :], axis=2
            ).min()
            best = min(best, float(d))
        return best


# ---------------------------------------------------------------------------
# Scenario config file format
# ---------------------------------------------------------------------------
#
# Flat text, one "key = value" per line, '#' starts a comment. Values are
# decimal literals; vector values are three space-separated literals.
# Recognized keys:
#
#   wave_speed, terminal_time, samples_per_period, geometry, seed,
#   pulse.f0, pulse.period, pulse.amplitude,
#   grid.n, grid.lower, grid.upper,
#   noise.level,
#   adsm.peak_count, adsm.min_separation, adsm.denominator_floor,
#   mcmc.samples, mcmc.beta, mcmc.sigma_prop, mcmc.prior,
#   mcmc.prior_sigma2, mcmc.w_mean, mcmc.w_var, mcmc.corrected,
#   source.<i>.kind                     (c-shape | bow-shape | circle-arc |
#                                        line | static)
#   source.<i>.position                 (static only)
#   source.<i>.origin, source.<i>.velocity   (line only)
#
# Unknown keys are an error.

_SCALAR_KEYS = {
    "wave_speed", "terminal_time", "samples_per_period", "geometry", "seed",
    "pulse.f0", "pulse.period", "pulse.amplitude",
    "grid.n", "grid.lower", "grid.upper",
    "noise.level",
    "adsm.peak_count", "adsm.min_separation", "adsm.denominator_floor",
    "mcmc.samples", "mcmc.beta", "mcmc.sigma_prop", "mcmc.prior",
    "mcmc.prior_sigma2", "mcmc.w_mean", "mcmc.w_var", "mcmc.corrected",
}
_SOURCE_KEYS = {"kind", "position", "origin", "velocity"}

_FMT = "%.17g"


def _fmt_float(x: float) -> str:
    return _FMT % float(x)


def _fmt_vec(v) -> str:
    return " ".join(_fmt_float(x) for x in np.asarray(v, dtype=float))


def write_config(config: ScenarioConfig, path) -> None:
    """Serialize a scenario to the flat key-value format."""
    lines = []
    tg = config.time_grid
    pulse = config.sources[0][1]
    for traj, pl in config.sources:
        if pl != pulse:
            raise ValueError("config files support a single shared pulse")
    lines.append(f"wave_speed = {_fmt_float(config.wave_speed)}")
    lines.append(f"terminal_time = {_fmt_float(tg.t_final)}")
    lines.append(f"samples_per_period = {tg.samples_per_period}")
    if not config.sensors.label:
        raise ValueError("config files require a labelled sensor set (S1/S2/S3)")
    lines.append(f"geometry = {config.sensors.label}")
    lines.append(f"seed = {config.seed}")
    lines.append(f"pulse.f0 = {_fmt_float(pulse.f0)}")
    lines.append(f"pulse.period = {_fmt_float(pulse.period)}")
    lines.append(f"pulse.amplitude = {_fmt_float(pulse.amplitude)}")
    lines.append(f"grid.n = {config.grid.n_per_axis}")
    lines.append(f"grid.lower = {_fmt_vec(config.grid.lower)}")
    lines.append(f"grid.upper = {_fmt_vec(config.grid.upper)}")
    lines.append(f"noise.level = {_fmt_float(config.noise_level)}")
    lines.append(f"adsm.peak_count = {config.adsm.peak_count}")
    lines.append(f"adsm.min_separation = {_fmt_float(config.adsm.min_separation)}")
    lines.append(f"adsm.denominator_floor = {_fmt_float(config.adsm.denominator_floor)}")
    m = config.mcmc
    lines.append(f"mcmc.samples = {m.samples}")
    lines.append(f"mcmc.beta = {_fmt_float(m.beta)}")
    lines.append(f"mcmc.sigma_prop = {_fmt_float(m.sigma_prop)}")
    lines.append(f"mcmc.prior = {m.prior_family}")
    lines.append(f"mcmc.prior_sigma2 = {_fmt_float(m.prior_sigma2)}")
    lines.append(f"mcmc.w_mean = {_fmt_float(m.w_mean)}")
    lines.append(f"mcmc.w_var = {_fmt_float(m.w_var)}")
    lines.append(f"mcmc.corrected = {'true' if m.corrected else 'false'}")
    for i, (traj, _) in enumerate(config.sources, start=1):
        if traj.kind == "static":
            lines.append(f"source.{i}.kind = static")
            lines.append(f"source.{i}.position = {_fmt_vec(traj.position(0.0))}")
        elif traj.kind == "analytic-line":
            lines.append(f"source.{i}.kind = line")
            lines.append(f"source.{i}.origin = {_fmt_vec(traj.position(0.0))}")
            lines.append(f"source.{i}.velocity = {_fmt_vec(traj.velocity(0.0))}")
        elif traj.kind == "analytic-c-shape":
            lines.append(f"source.{i}.kind = c-shape")
        elif traj.kind == "analytic-bow-shape":
            lines.append(f"source.{i}.kind = bow-shape")
        elif traj.kind == "analytic-circle-arc":
            lines.append(f"source.{i}.kind = circle-arc")
        else:
            raise ValueError(f"trajectory kind {traj.kind!r} is not representable in a config file")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_lines(path) -> dict:
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"{path}:{lineno}: empty key or value")
        if key in entries:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _parse_vec(value: str, key: str) -> np.ndarray:
    parts = value.split()
    if len(parts) != 3:
        raise ValueError(f"key {key!r} needs three numbers, got {value!r}")
    return np.array([float(p) for p in parts])


def _build_source(kind: str, fields: dict, index: int) -> Trajectory:
    def need(name):
        if name not in fields:
            raise ValueError(f"source.{index}.{name} is required for kind {kind!r}")
        return fields[name]

    def forbid(*names):
        for name in names:
            if name in fields:
                raise ValueError(f"source.{index}.{name} is not valid for kind {kind!r}")

    if kind == "static":
        forbid("origin", "velocity")
        return Trajectory.static(_parse_vec(need("position"), f"source.{index}.position"))
    if kind == "line":
        forbid("position")
        return Trajectory.line(
            _parse_vec(need("origin"), f"source.{index}.origin"),
            _parse_vec(need("velocity"), f"source.{index}.velocity"),
        )
    forbid("position", "origin", "velocity")
    builders = {
        "c-shape": Trajectory.c_shape,
        "bow-shape": Trajectory.bow_shape,
        "circle-arc": Trajectory.circle_arc,
    }
    if kind not in builders:
        raise ValueError(f"unknown source kind {kind!r}")
    return builders[kind]()


def read_config(path) -> ScenarioConfig:
    """Parse a scenario config file; unknown keys are an error."""
    entries = _parse_lines(path)
    sources_raw: dict = {}
    plain: dict = {}
    for key, value in entries.items():
        if key.startswith("source."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in _SOURCE_KEYS:
                raise ValueError(f"unknown key {key!r}")
            sources_raw.setdefault(int(parts[1]), {})[parts[2]] = value
        elif key in _SCALAR_KEYS:
            plain[key] = value
        else:
            raise ValueError(f"unknown key {key!r}")

    def need(key):
        if key not in plain:
            raise ValueError(f"missing required key {key!r}")
        return plain[key]

    geometry = need("geometry")
    sensors = build_sensor_set(geometry)
    n_p = int(plain.get("samples_per_period", SAMPLES_PER_PERIOD[geometry]))
    time_grid = TimeGrid(float(need("terminal_time")), float(need("pulse.period")), n_p)
    pulse = Pulse(
        f0=float(need("pulse.f0")),
        period=float(need("pulse.period")),
        amplitude=float(plain.get("pulse.amplitude", 1.0)),
    )
    grid = SamplingGrid(
        _parse_vec(need("grid.lower"), "grid.lower"),
        _parse_vec(need("grid.upper"), "grid.upper"),
        int(need("grid.n")),
    )
    if not sources_raw:
        raise ValueError("config defines no sources")
    sources = []
    for index in sorted(sources_raw):
        fields = sources_raw[index]
        if "kind" not in fields:
            raise ValueError(f"source.{index}.kind is required")
        sources.append((_build_source(fields["kind"], fields, index), pulse))

    adsm = AdsmOptions(
        peak_count=int(plain.get("adsm.peak_count", AdsmOptions.peak_count)),
        min_separation=float(plain.get("adsm.min_separation", AdsmOptions.min_separation)),
        denominator_floor=float(
            plain.get("adsm.denominator_floor", AdsmOptions.denominator_floor)
        ),
    )
    corrected = plain.get("mcmc.corrected", "false").lower()
    if corrected not in ("true", "false"):
        raise ValueError(f"mcmc.corrected must be true or false, got {corrected!r}")
    mcmc = McmcOptions(
        samples=int(plain.get("mcmc.samples", McmcOptions.samples)),
        beta=float(plain.get("mcmc.beta", McmcOptions.beta)),
        sigma_prop=float(plain.get("mcmc.sigma_prop", McmcOptions.sigma_prop)),
        prior_family=plain.get("mcmc.prior", McmcOptions.prior_family),
        prior_sigma2=float(plain.get("mcmc.prior_sigma2", McmcOptions.prior_sigma2)),
        w_mean=float(plain.get("mcmc.w_mean", McmcOptions.w_mean)),
        w_var=float(plain.get("mcmc.w_var", McmcOptions.w_var)),
        corrected=corrected == "true",
    )
    return ScenarioConfig(
        wave_speed=float(need("wave_speed")),
        sources=tuple(sources),
        sensors=sensors,
        time_grid=time_grid,
        grid=grid,
        noise_level=float(plain.get("noise.level", 0.0)),
        seed=int(plain.get("seed", 0)),
        adsm=adsm,
        mcmc=mcmc,
    )


def write_trajectory_csv(traj: Trajectory, time_grid: TimeGrid, path) -> None:
    """One row per period: the path sampled at period midpoints."""
    with open(path, "w") as f:
        f.write("j,t_mid,x,y,z\n")
        for j in range(1, time_grid.n_periods + 1):
            t = time_grid.midpoint(j)
            p = traj.position(t)
            f.write(f"{j},{_fmt_float(t)},{_fmt_float(p[0])},{_fmt_float(p[1])},{_fmt_float(p[2])}\n")
