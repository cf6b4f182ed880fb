"""Approximate direct sampling: per-period indicator sweeps and peak tracking.

For each pulse period the measured record is correlated against the field of
a hypothetical static source at every lattice point. The normalized
correlation lies in [0, 1] and peaks near the true instantaneous source
location; the per-period maxima assemble into a coarse path.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .core import EPS_SEP, Pulse, SamplingGrid, as_point
from .forward import FOUR_PI, FieldRecord, point_source_field

_FMT = "%.17g"

DEFAULT_FLOOR = 1e-14


def probe_field(x, t, y, pulse: Pulse, c: float):
    """Probe field of a static source at sampling point ``y``."""
    return point_source_field(x, t, y, pulse, c)


@dataclass(frozen=True)
class IndicatorField:
    """Indicator values over a sampling lattice for one period."""

    period_index: int
    grid: SamplingGrid
    values: np.ndarray  # (n, n, n), each entry in [0, 1]

    def __post_init__(self):
        n = self.grid.n_per_axis
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (n, n, n):
            raise ValueError(f"values shape {vals.shape} does not match grid {n}^3")
        if not np.all(np.isfinite(vals)):
            raise ValueError("indicator values must be finite")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError("indicator values must lie in [0, 1]")
        arr = vals.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def argmax_flat(self) -> int:
        """First (lexicographically smallest) index attaining the maximum."""
        return int(np.argmax(self.values))


def _norm_factors(u: np.ndarray) -> float:
    # sum over time samples of the per-sample sensor-space norm
    return float(np.sqrt((u * u).sum(axis=0)).sum())


def indicator(record: FieldRecord, j: int, y) -> float:
    """Discrete indicator at a single sampling point.

    Numerator: sum of |u * phi| over all sensors and period-j samples.
    Denominator: summed sensor-space norms of u and of phi. Returns 0 when
    either norm vanishes.
    """
    y = as_point(y)
    u = record.period_block(j)
    times = record.time_grid.period_times(j)
    x = record.sensors.positions
    r = np.linalg.norm(x - y[None, :], axis=1)
    if r.min() < EPS_SEP:
        raise ValueError(f"sampling point within {EPS_SEP} of a sensor")
    phi = record.pulse.eval(times[None, :] - r[:, None] / record.wave_speed) / (
        FOUR_PI * r[:, None]
    )
    u_factor = _norm_factors(u)
    phi_factor = _norm_factors(phi)
    if u_factor <= 0.0 or phi_factor <= 0.0:
        return 0.0
    num = float(np.abs(u * phi).sum())
    return min(num / (u_factor * phi_factor), 1.0)


@numba.njit(cache=True, parallel=True)
def _sweep_kernel(points, sensors, times, u_abs, period, half_period, a_coef, amplitude, c):
    """Fused per-point probe correlation.

    For every lattice point: distances to all sensors, probe values
    pulse(t - r/c) / (4 pi r) for each (sensor, sample), the |u * phi|
    cross sum and the summed per-sample sensor norms of phi. Work per point
    is sequential, so results are bit-identical for any thread count.
    """
    n_points = points.shape[0]
    n_x = sensors.shape[0]
    n_t = times.shape[0]
    num = np.empty(n_points)
    fac = np.empty(n_points)
    min_r = np.empty(n_points)
    for ip in numba.prange(n_points):
        r = np.empty(n_x)
        rmin = np.inf
        for l in range(n_x):
            dx = points[ip, 0] - sensors[l, 0]
            dy = points[ip, 1] - sensors[l, 1]
            dz = points[ip, 2] - sensors[l, 2]
            r[l] = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r[l] < rmin:
                rmin = r[l]
        total = 0.0
        factor = 0.0
        for n in range(n_t):
            s2 = 0.0
            for l in range(n_x):
                arg = times[n] - r[l] / c
                if arg < 0.0:
                    continue
                # causal-periodic pulse; % matches numpy's floor-mod here
                s = arg % period - half_period
                ss = a_coef * s * s
                phi = amplitude * (1.0 - 2.0 * ss) * math.exp(-ss) / (FOUR_PI * r[l])
                s2 += phi * phi
                total += u_abs[l, n] * abs(phi)
            factor += math.sqrt(s2)
        num[ip] = total
        fac[ip] = factor
        min_r[ip] = rmin
    return num, fac, min_r


def sweep(
    record: FieldRecord,
    grid: SamplingGrid,
    j: int,
    floor: float = DEFAULT_FLOOR,
    threads: int = 1,
) -> IndicatorField:
    """Indicator evaluated at every lattice point for period ``j``.

    ``floor`` is relative: points whose probe norm falls below
    floor * (lattice maximum of that norm) are reported as 0. The sweep
    runs lattice points in parallel on ``threads`` workers; results are
    bit-identical regardless of the thread count.
    """
    u = record.period_block(j)
    times = record.time_grid.period_times(j)
    pulse = record.pulse
    u_factor = _norm_factors(u)

    numba.set_num_threads(max(1, min(threads, os.cpu_count() or 1)))
    num, phi_factor, min_r = _sweep_kernel(
        grid.points(),
        record.sensors.positions,
        times,
        np.abs(u),
        pulse.period,
        0.5 * pulse.period,
        (math.pi * pulse.f0) ** 2,
        pulse.amplitude,
        record.wave_speed,
    )
    if min_r.min() < EPS_SEP:
        raise ValueError(f"a lattice point lies within {EPS_SEP} of a sensor")

    values = np.zeros(grid.n_points)
    if u_factor > 0.0:
        keep = phi_factor >= floor * phi_factor.max()
        values[keep] = num[keep] / (u_factor * phi_factor[keep])
        np.clip(values, 0.0, 1.0, out=values)
    n = grid.n_per_axis
    return IndicatorField(j, grid, values.reshape(n, n, n))


def peak_indices(field: IndicatorField, m: int, r_min: float) -> list:
    """Greedy peak flat-indices: global max, suppress a ball, repeat.

    Ties resolve to the lexicographically smallest lattice index. Returns
    fewer than ``m`` entries only if suppression exhausts the lattice.
    """
    if m < 1:
        raise ValueError("peak count must be >= 1")
    if r_min <= 0:
        raise ValueError("minimum separation must be > 0")
    grid = field.grid
    axes = [grid.axis(i) for i in range(3)]
    work = field.values.astype(float, copy=True)
    found = []
    for _ in range(m):
        flat = int(np.argmax(work))
        if not math.isfinite(work.flat[flat]):
            break
        found.append(flat)
        n = grid.n_per_axis
        ix, rem = divmod(flat, n * n)
        iy, iz = divmod(rem, n)
        dx2 = (axes[0] - axes[0][ix]) ** 2
        dy2 = (axes[1] - axes[1][iy]) ** 2
        dz2 = (axes[2] - axes[2][iz]) ** 2
        ball = (
            dx2[:, None, None] + dy2[None, :, None] + dz2[None, None, :]
        ) < r_min * r_min
        work[ball] = -np.inf
    return found


def extract_peaks(field: IndicatorField, m: int, r_min: float) -> list:
    """Peak locations in decreasing indicator value, pairwise >= r_min apart."""
    return [field.grid.flat_to_point(i) for i in peak_indices(field, m, r_min)]


@dataclass(frozen=True)
class CoarsePath:
    """Per-period peak locations threaded into per-source tracks.

    ``points`` has shape (J, S, 3) and ``values`` shape (J, S) where S is the
    number of tracks (detected sources).
    """

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if pts.ndim != 3 or pts.shape[2] != 3 or vals.shape != pts.shape[:2]:
            raise ValueError(
                f"inconsistent path shapes: points {pts.shape}, values {vals.shape}"
            )
        pts = pts.copy()
        vals = vals.copy()
        pts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def n_periods(self) -> int:
        return self.points.shape[0]

    @property
    def n_sources(self) -> int:
        return self.points.shape[1]

    def track(self, s: int) -> np.ndarray:
        """The (J, 3) track of source ``s`` (0-based)."""
        return self.points[:, s, :]


def _select_seeds(pts: list, vals: list, m: int) -> list:
    """Pick m track seeds from the period-1 candidates.

    Sources are assumed well separated, so among the candidate subsets of
    size m the one with the largest minimum pairwise distance is chosen
    (largest summed indicator value on ties). This keeps a bright aperture
    focal artifact, which can outrank the true peaks when several sources
    share the record, from stealing a seed.
    """
    if m == 1 or len(pts) <= m:
        return list(range(min(m, len(pts))))
    best = None
    for subset in itertools.combinations(range(len(pts)), m):
        sep = min(
            float(np.linalg.norm(pts[a] - pts[b]))
            for a, b in itertools.combinations(subset, 2)
        )
        value = sum(vals[i] for i in subset)
        key = (sep, value)
        if best is None or key > best[0]:
            best = (key, subset)
    return list(best[1])


def _associate(prev: np.ndarray, pts: list, vals: list) -> tuple:
    """Greedily match new peaks to the previous period's track positions."""
    s_prev = prev.shape[0]
    new_pts = np.full((s_prev, 3), np.nan)
    new_vals = np.full(s_prev, np.nan)
    if pts:
        cand = np.asarray(pts)
        dist = np.linalg.norm(prev[:, None, :] - cand[None, :, :], axis=2)
        used_rows: set = set()
        used_cols: set = set()
        order = np.dstack(np.unravel_index(np.argsort(dist, axis=None), dist.shape))[0]
        for row, col in order:
            if row in used_rows or col in used_cols:
                continue
            new_pts[row] = cand[col]
            new_vals[row] = vals[col]
            used_rows.add(int(row))
            used_cols.add(int(col))
            if len(used_rows) == s_prev or len(used_cols) == len(pts):
                break
    # Tracks left without a peak keep their previous location.
    for s in range(s_prev):
        if np.isnan(new_vals[s]) and np.isnan(new_pts[s]).all():
            new_pts[s] = prev[s]
    return new_pts, new_vals


def run_adsm(
    record: FieldRecord,
    grid: SamplingGrid,
    m: int = 1,
    r_min: float = 1.0,
    floor: float = DEFAULT_FLOOR,
    threads: int = 1,
) -> CoarsePath:
    """Sweep every period, extract peaks and thread them into tracks.

    With a single source the track is the per-period global maximum. With
    several sources, one extra candidate peak is extracted per period: the
    period-1 seeds are the most dispersed m-subset of the candidates and
    later periods attach each track to the nearest candidate, greedily by
    distance. The slack absorbs aperture artifacts that can outrank a true
    source peak when several sources share the record.
    """
    n_periods = record.time_grid.n_periods
    n_candidates = m if m == 1 else m + 1
    all_points = []
    all_values = []
    prev = None
    for j in range(1, n_periods + 1):
        field = sweep(record, grid, j, floor=floor, threads=threads)
        idx = peak_indices(field, n_candidates, r_min)
        pts = [grid.flat_to_point(i) for i in idx]
        vals = [float(field.values.flat[i]) for i in idx]
        if prev is None:
            seeds = _select_seeds(pts, vals, m)
            prev = np.asarray([pts[i] for i in seeds])
            all_points.append(prev)
            all_values.append(np.asarray([vals[i] for i in seeds]))
        else:
            new_pts, new_vals = _associate(prev, pts, vals)
            all_points.append(new_pts)
            all_values.append(new_vals)
            prev = new_pts
    return CoarsePath(np.stack(all_points), np.stack(all_values))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_coarse_path(path: CoarsePath, dest) -> None:
    with open(dest, "w") as f:
        f.write("j,source_id,x,y,z,indicator_value\n")
        for j in range(path.n_periods):
            for s in range(path.n_sources):
                p = path.points[j, s]
                v = path.values[j, s]
                f.write(
                    f"{j + 1},{s + 1},{_FMT % p[0]},{_FMT % p[1]},{_FMT % p[2]},{_FMT % v}\n"
                )


def write_slice_csv(field: IndicatorField, z_index: int, dest) -> None:
    """Fixed-z cross-section: rows follow the x axis, columns the y axis."""
    grid = field.grid
    if not 0 <= z_index < grid.n_per_axis:
        raise ValueError(f"z_index {z_index} outside 0..{grid.n_per_axis - 1}")
    plane = field.values[:, :, z_index]
    header = [
        f"# period = {field.period_index}",
        f"# z_index = {z_index}",
        f"# z = {_FMT % grid.axis(2)[z_index]}",
        f"# lower = {' '.join(_FMT % v for v in grid.lower)}",
        f"# upper = {' '.join(_FMT % v for v in grid.upper)}",
        f"# n = {grid.n_per_axis}",
    ]
    with open(dest, "w") as f:
        f.write("\n".join(header) + "\n")
        np.savetxt(f, plane, fmt=_FMT, delimiter=",")
