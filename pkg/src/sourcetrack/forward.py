"""Forward solvers for a moving point source in a homogeneous medium.

Two explicit solutions are provided: the full moving-source field evaluated
at the retarded time (including the Doppler factor) and the quasi-static
field that freezes the source at its instantaneous position. The second is
the default data-generation model; the first exists to stress-test the
modelling error between the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    EPS_SEP,
    Pulse,
    SAMPLES_PER_PERIOD,
    ScenarioConfig,
    SensorArray,
    TimeGrid,
    Trajectory,
    as_point,
    build_sensor_set,
)

FOUR_PI = 4.0 * math.pi

PROVENANCES = ("lw", "quasistatic", "file")

_FMT = "%.17g"


# ---------------------------------------------------------------------------
# Point evaluations
# ---------------------------------------------------------------------------

def point_source_field(x, t, y, pulse: Pulse, c: float):
    """Field of a static point source at ``y``: pulse(t - r/c) / (4 pi r).

    Accepts scalar or array ``t``; raises if the source sits within EPS_SEP
    of the evaluation point.
    """
    x = as_point(x)
    y = as_point(y)
    r = float(np.linalg.norm(x - y))
    if r < EPS_SEP:
        raise ValueError(f"evaluation point within {EPS_SEP} of the source (r={r:.3g})")
    t = np.asarray(t, dtype=float)
    out = pulse.eval(t - r / c) / (FOUR_PI * r)
    return float(out) if np.ndim(out) == 0 else out


def retarded_time(
    x,
    traj: Trajectory,
    t: float,
    c: float,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> float:
    """Solve t = tau + ||x - z(tau)|| / c by fixed-point iteration.

    Starting from tau = t, the map tau -> t - ||x - z(tau)||/c contracts
    with factor max||v||/c < 1, so convergence is geometric.
    """
    x = as_point(x)
    tau = float(t)
    for _ in range(max_iter):
        r = float(np.linalg.norm(x - traj.position(tau)))
        nxt = t - r / c
        if abs(nxt - tau) <= tol:
            tau = nxt
            break
        tau = nxt
    residual = abs(t - tau - float(np.linalg.norm(x - traj.position(tau))) / c)
    if residual > tol:
        raise RuntimeError(
            f"retarded-time iteration did not reach tolerance {tol:g} "
            f"(residual {residual:.3g}); trajectory may be too fast"
        )
    return tau


def _retarded_times_grid(
    sensors: np.ndarray,
    traj: Trajectory,
    times: np.ndarray,
    c: float,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> np.ndarray:
    """Retarded times for every (sensor, sample) pair, shape (N_x, N_T)."""
    tau = np.broadcast_to(times[None, :], (sensors.shape[0], times.size)).copy()
    target = tau.copy()
    for _ in range(max_iter):
        r = np.linalg.norm(sensors[:, None, :] - traj.position(tau), axis=2)
        nxt = target - r / c
        delta = np.abs(nxt - tau).max()
        tau = nxt
        if delta <= tol:
            break
    r = np.linalg.norm(sensors[:, None, :] - traj.position(tau), axis=2)
    residual = np.abs(target - tau - r / c).max()
    if residual > tol:
        raise RuntimeError(
            f"retarded-time iteration did not reach tolerance {tol:g} (residual {residual:.3g})"
        )
    return tau


def lw_field(x, t: float, traj: Trajectory, pulse: Pulse, c: float) -> float:
    """Moving-source field at (x, t): the retarded-time solution with the
    Doppler factor 1 - v.(x-z)/(c ||x-z||)."""
    x = as_point(x)
    tau = retarded_time(x, traj, t, c)
    z = traj.position(tau)
    v = traj.velocity(tau)
    rvec = x - z
    r = float(np.linalg.norm(rvec))
    if r < EPS_SEP:
        raise ValueError(f"sensor within {EPS_SEP} of the source at the retarded time")
    doppler = 1.0 - float(np.dot(v, rvec)) / (c * r)
    if doppler <= 0.0:
        raise RuntimeError("non-positive Doppler factor; source speed must stay below c")
    return pulse.eval(tau) / (FOUR_PI * r * doppler)


def quasistatic_field(x, t, traj: Trajectory, pulse: Pulse, c: float):
    """Static-source formula applied at the instantaneous position z(t)."""
    t = np.asarray(t, dtype=float)
    x = as_point(x)
    z = traj.position(t)
    r = np.linalg.norm(x - z, axis=-1)
    if np.any(r < EPS_SEP):
        raise ValueError(f"evaluation point within {EPS_SEP} of the source")
    out = pulse.eval(t - r / c) / (FOUR_PI * r)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldRecord:
    """Measured or simulated field values, one row per sensor.

    ``values`` has shape (N_x, N_T) where N_T is the total number of time
    samples of ``time_grid``. The record also remembers the pulse and wave
    speed of the medium it was recorded in, so downstream stages can build
    probe fields from the record alone.
    """

    values: np.ndarray
    sensors: SensorArray
    time_grid: TimeGrid
    pulse: Pulse
    wave_speed: float
    provenance: str
    noise_level: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not (self.wave_speed > 0 and math.isfinite(self.wave_speed)):
            raise ValueError(f"wave speed must be positive, got {self.wave_speed}")
        vals = np.asarray(self.values, dtype=float)
        expected = (self.sensors.n_sensors, self.time_grid.n_samples)
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} does not match {expected}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("record contains non-finite values")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        arr = vals.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def period_block(self, j: int) -> np.ndarray:
        """The (N_x, N_p) block of period j (1-based)."""
        return self.values[:, self.time_grid.period_slice(j)]


def simulate_record(config: ScenarioConfig, model: str = "quasistatic") -> FieldRecord:
    """Noise-free record: superposition of all sources under ``model``."""
    if model not in ("lw", "quasistatic"):
        raise ValueError(f"unknown forward model {model!r}")
    sensors = config.sensors.positions
    times = config.time_grid.times
    c = config.wave_speed
    values = np.zeros((sensors.shape[0], times.size))
    for traj, pulse in config.sources:
        if model == "quasistatic":
            z = traj.position(times)                             # (N_T, 3)
            r = np.linalg.norm(sensors[:, None, :] - z[None, :, :], axis=2)
            if r.min() < EPS_SEP:
                raise ValueError("a source passes within EPS_SEP of a sensor")
            values += pulse.eval(times[None, :] - r / c) / (FOUR_PI * r)
        else:
            tau = _retarded_times_grid(sensors, traj, times, c)
            z = traj.position(tau)                               # (N_x, N_T, 3)
            v = traj.velocity(tau)
            rvec = sensors[:, None, :] - z
            r = np.linalg.norm(rvec, axis=2)
            if r.min() < EPS_SEP:
                raise ValueError("a source passes within EPS_SEP of a sensor")
            doppler = 1.0 - np.einsum("ijk,ijk->ij", v, rvec) / (c * r)
            if doppler.min() <= 0.0:
                raise RuntimeError("non-positive Doppler factor in simulation")
            values += pulse.eval(tau) / (FOUR_PI * r * doppler)
    # Downstream probing uses the first source's pulse (the built-in
    # scenarios share a single pulse across sources).
    return FieldRecord(
        values=values,
        sensors=config.sensors,
        time_grid=config.time_grid,
        pulse=config.sources[0][1],
        wave_speed=config.wave_speed,
        provenance=model,
    )


def add_noise(record: FieldRecord, noise_level: float, seed: int) -> FieldRecord:
    """Multiplicative uniform noise: u * (1 + eps * r), r ~ U[-1, 1] per entry."""
    if noise_level < 0:
        raise ValueError(f"noise level must be >= 0, got {noise_level}")
    if noise_level == 0:
        return replace(record, noise_level=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1.0, 1.0, size=record.values.shape)
    return replace(
        record,
        values=record.values * (1.0 + noise_level * r),
        noise_level=noise_level,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Record persistence: <stem>.meta sidecar plus <stem>.csv matrix
# ---------------------------------------------------------------------------
#
# The CSV matrix holds N_T rows of N_x comma-separated values (row k is time
# sample k); floats are written with 17 significant digits so the round trip
# is bit exact. The sidecar is "key = value" text.

def write_record(record: FieldRecord, directory, stem: str = "record") -> tuple:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not record.sensors.label:
        raise ValueError("record persistence requires a labelled sensor set")
    tg = record.time_grid
    meta_path = directory / f"{stem}.meta"
    csv_path = directory / f"{stem}.csv"
    lines = [
        f"geometry = {record.sensors.label}",
        f"n_sensors = {record.sensors.n_sensors}",
        f"samples_per_period = {tg.samples_per_period}",
        f"n_periods = {tg.n_periods}",
        f"terminal_time = {_FMT % tg.t_final}",
        f"period = {_FMT % tg.period}",
        f"wave_speed = {_FMT % record.wave_speed}",
        f"pulse_f0 = {_FMT % record.pulse.f0}",
        f"pulse_amplitude = {_FMT % record.pulse.amplitude}",
        f"noise_level = {_FMT % record.noise_level}",
        f"seed = {'' if record.seed is None else record.seed}",
        f"model = {record.provenance}",
    ]
    meta_path.write_text("\n".join(lines) + "\n")
    np.savetxt(csv_path, record.values.T, fmt=_FMT, delimiter=",")
    return meta_path, csv_path


def read_record(directory, stem: str = "record") -> FieldRecord:
    """Load a persisted record, validating the matrix against the sidecar."""
    directory = Path(directory)
    meta_path = directory / f"{stem}.meta"
    csv_path = directory / f"{stem}.csv"
    meta = {}
    for lineno, raw in enumerate(meta_path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{meta_path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        meta[key] = value
    sensors = build_sensor_set(meta["geometry"])
    time_grid = TimeGrid(
        float(meta["terminal_time"]),
        float(meta["period"]),
        int(meta["samples_per_period"]),
    )
    if sensors.n_sensors != int(meta["n_sensors"]):
        raise ValueError(
            f"{meta_path}: n_sensors {meta['n_sensors']} does not match geometry "
            f"{meta['geometry']} ({sensors.n_sensors})"
        )
    if time_grid.n_periods != int(meta["n_periods"]):
        raise ValueError(f"{meta_path}: inconsistent n_periods")
    values = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    expected = (time_grid.n_samples, sensors.n_sensors)
    if values.shape != expected:
        raise ValueError(
            f"{csv_path}: matrix shape {values.shape} does not match sidecar {expected}"
        )
    seed_text = meta.get("seed", "")
    return FieldRecord(
        values=values.T,
        sensors=sensors,
        time_grid=time_grid,
        pulse=Pulse(
            f0=float(meta["pulse_f0"]),
            period=float(meta["period"]),
            amplitude=float(meta.get("pulse_amplitude", 1.0)),
        ),
        wave_speed=float(meta["wave_speed"]),
        provenance="file",
        noise_level=float(meta.get("noise_level", 0.0)),
        seed=int(seed_text) if seed_text else None,
    )
