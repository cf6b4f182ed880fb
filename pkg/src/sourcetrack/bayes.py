"""Bayesian refinement of coarse source tracks.

Each pulse period is treated as an independent static-source inference: the
period's record block is explained by the static-kernel forward operator
plus Gaussian noise whose statistics absorb the modelling error between the
moving-source and static-source solutions. Chains are seeded and anchored
at the coarse per-period locations, and each period's posterior mean becomes
the next period's prior mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EPS_SEP, Pulse, as_point
from .forward import FOUR_PI, FieldRecord

_FMT = "%.17g"


# ---------------------------------------------------------------------------
# Gaussian machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianJoint:
    """Joint normal of (zeta, q) given by means and covariance blocks."""

    zeta_mean: np.ndarray
    q_mean: np.ndarray
    cov_zz: np.ndarray
    cov_zq: np.ndarray
    cov_qq: np.ndarray

    def __post_init__(self):
        zm = np.atleast_1d(np.asarray(self.zeta_mean, dtype=float))
        qm = np.atleast_1d(np.asarray(self.q_mean, dtype=float))
        czz = np.asarray(self.cov_zz, dtype=float)
        czq = np.asarray(self.cov_zq, dtype=float)
        cqq = np.asarray(self.cov_qq, dtype=float)
        nz, nq = zm.size, qm.size
        if czz.shape != (nz, nz) or cqq.shape != (nq, nq) or czq.shape != (nz, nq):
            raise ValueError("covariance block shapes are inconsistent with the means")
        full = np.block([[czz, czq], [czq.T, cqq]])
        if not np.allclose(full, full.T, atol=1e-12):
            raise ValueError("joint covariance must be symmetric")
        eigmin = float(np.linalg.eigvalsh(full).min())
        if eigmin < -1e-10 * max(1.0, float(np.abs(full).max())):
            raise ValueError(f"joint covariance must be PSD (min eigenvalue {eigmin:.3g})")
        for name, arr in (("zeta_mean", zm), ("q_mean", qm), ("cov_zz", czz),
                          ("cov_zq", czq), ("cov_qq", cqq)):
            a = arr.copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def gaussian_condition(joint: GaussianJoint, q) -> tuple:
    """Mean and covariance of zeta conditioned on an observed q.

    Raises numpy.linalg.LinAlgError when the q-block is singular.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.shape != joint.q_mean.shape:
        raise ValueError(f"q has shape {q.shape}, expected {joint.q_mean.shape}")
    gain = np.linalg.solve(joint.cov_qq, joint.cov_zq.T).T  # cov_zq @ cov_qq^-1
    mean = joint.zeta_mean + gain @ (q - joint.q_mean)
    cov = joint.cov_zz - gain @ joint.cov_zq.T
    cov = 0.5 * (cov + cov.T)
    return mean, cov


@dataclass(frozen=True)
class NoiseModel:
    """Per-entry statistics of the combined noise w = e + (model error | q)."""

    w_mean: float = 1e-4
    w_var: float = 1e-3

    def __post_init__(self):
        if not self.w_var > 0:
            raise ValueError(f"w_var must be > 0, got {self.w_var}")


@dataclass(frozen=True)
class Prior:
    """Normal or uniform-box prior over the period source position."""

    family: str
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    _cov_inv: np.ndarray | None = None

    @staticmethod
    def normal(mean, cov) -> "Prior":
        mean = as_point(mean)
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (3, 3):
            raise ValueError(f"covariance must be 3x3, got {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        np.linalg.cholesky(cov)  # positive definiteness check
        return Prior("normal", mean=mean, cov=cov, _cov_inv=np.linalg.inv(cov))

    @staticmethod
    def uniform_box(lower, upper) -> "Prior":
        lower = as_point(lower)
        upper = as_point(upper)
        if not np.all(lower < upper):
            raise ValueError("uniform prior needs lower < upper componentwise")
        return Prior("uniform-box", lower=lower, upper=upper)

    def log_density(self, q) -> float:
        """Log density up to an additive constant; -inf outside support."""
        q = np.asarray(q, dtype=float)
        if self.family == "normal":
            d = q - self.mean
            return -0.5 * float(d @ self._cov_inv @ d)
        if np.all(q >= self.lower) and np.all(q <= self.upper):
            return 0.0
        return -math.inf


# ---------------------------------------------------------------------------
# Approximate forward operator and posterior
# ---------------------------------------------------------------------------

def approx_forward(q, sensors: np.ndarray, times: np.ndarray, pulse: Pulse, c: float) -> np.ndarray:
    """Static-kernel prediction for a source at q: shape (N_x, N_p)."""
    q = np.asarray(q, dtype=float)
    r = np.sqrt(((sensors - q[None, :]) ** 2).sum(axis=1))
    if r.min() < EPS_SEP:
        raise ValueError(f"source position within {EPS_SEP} of a sensor")
    return pulse.eval(times[None, :] - r[:, None] / c) / (FOUR_PI * r[:, None])


def log_posterior(
    q,
    block: np.ndarray,
    sensors: np.ndarray,
    times: np.ndarray,
    pulse: Pulse,
    c: float,
    noise: NoiseModel,
    prior: Prior,
) -> float:
    """Unnormalized log posterior of a static source position for one period."""
    lp = prior.log_density(q)
    if lp == -math.inf:
        return -math.inf
    resid = block - approx_forward(q, sensors, times, pulse, c) - noise.w_mean
    return -0.5 * float((resid * resid).sum()) / noise.w_var + lp


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Chain:
    """One period's Markov chain and its conditional-mean estimate."""

    samples: np.ndarray   # (K, 3)
    log_post: np.ndarray  # (K,)
    accepted: np.ndarray  # (K,) bool; entry 0 is always False
    cm: np.ndarray        # (3,)

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise ValueError("samples must have shape (K, 3)")
        k = self.samples.shape[0]
        if self.log_post.shape != (k,) or self.accepted.shape != (k,):
            raise ValueError("trace shapes do not match the sample count")
        for name in ("samples", "log_post", "accepted", "cm"):
            arr = getattr(self, name).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def accept_count(self) -> int:
        return int(self.accepted.sum())

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / (self.length - 1) if self.length > 1 else 0.0


def run_chain_from_logpdf(
    logpdf: Callable[[np.ndarray], float],
    start,
    k_samples: int,
    sigma_prop: float,
    seed: int,
    anchor=None,
    corrected: bool = False,
) -> Chain:
    """Metropolis-Hastings with Gaussian steps of scale ``sigma_prop``.

    With ``anchor`` set, proposals are drawn around the fixed anchor
    (independence style); otherwise around the current state (random walk).
    The default acceptance uses the plain density ratio even for anchored
    proposals; ``corrected`` adds the proposal-density ratio, which makes
    the anchored chain a proper independence sampler.

    The random stream is consumed in a fixed order: K-1 standard-normal
    triples, then K-1 uniforms.
    """
    if k_samples < 1:
        raise ValueError("chain length must be >= 1")
    if sigma_prop <= 0:
        raise ValueError("sigma_prop must be > 0")
    start = as_point(start)
    rng = np.random.default_rng(seed)
    steps = sigma_prop * rng.standard_normal((k_samples - 1, 3))
    levels = rng.random(k_samples - 1)

    samples = np.empty((k_samples, 3))
    log_post = np.empty(k_samples)
    accepted = np.zeros(k_samples, dtype=bool)
    q = start
    lp = logpdf(q)
    samples[0] = q
    log_post[0] = lp
    inv_two_var = 0.5 / (sigma_prop * sigma_prop)
    for k in range(1, k_samples):
        center = anchor if anchor is not None else q
        prop = center + steps[k - 1]
        lp_prop = logpdf(prop)
        if lp_prop == -math.inf:
            accept = False
        elif lp == -math.inf:
            accept = True
        else:
            log_alpha = lp_prop - lp
            if corrected and anchor is not None:
                d_prop = prop - anchor
                d_cur = q - anchor
                log_alpha += inv_two_var * (
                    float(d_prop @ d_prop) - float(d_cur @ d_cur)
                )
            if log_alpha >= 0.0:
                accept = True  # alpha = 1 always beats a level drawn from [0, 1)
            else:
                accept = math.exp(log_alpha) > levels[k - 1]
        if accept:
            q = prop
            lp = lp_prop
            accepted[k] = True
        samples[k] = q
        log_post[k] = lp
    return Chain(samples, log_post, accepted, samples.mean(axis=0))


def mh_chain(
    block: np.ndarray,
    y_j,
    q_prev,
    sensors: np.ndarray,
    times: np.ndarray,
    pulse: Pulse,
    c: float,
    prior: Prior,
    noise: NoiseModel,
    k_samples: int,
    beta: float,
    sigma_prop: float,
    seed: int,
    corrected: bool = False,
) -> Chain:
    """One period's anchored chain: starts at the coarse location y_j and
    proposes around beta * y_j + (1 - beta) * q_prev (beta forced to 1 when
    there is no previous period)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    y = as_point(y_j)
    if q_prev is None:
        anchor = y
    else:
        anchor = beta * y + (1.0 - beta) * as_point(q_prev)

    def logpdf(q):
        return log_posterior(q, block, sensors, times, pulse, c, noise, prior)

    return run_chain_from_logpdf(
        logpdf, y, k_samples, sigma_prop, seed, anchor=anchor, corrected=corrected
    )


def chain_seed(master_seed: int, source_index: int, period_index: int) -> int:
    """Per-(source, period) chain seed; the master seed itself is reserved
    for noise injection."""
    return master_seed + 1 + 10000 * source_index + period_index


def run_adsm_mcmc(
    record: FieldRecord,
    coarse,
    prior_sigma2: float,
    k_samples: int,
    beta: float,
    sigma_prop: float,
    noise: NoiseModel,
    master_seed: int,
    corrected: bool = False,
) -> tuple:
    """Refine every coarse track period by period.

    The prior mean is the period-1 coarse location at j = 1 and the previous
    period's conditional mean afterwards; the prior covariance stays
    prior_sigma2 * identity. Returns (points, chains) where points has shape
    (J, S, 3) and chains[s][j-1] is the per-period Chain for source s.
    """
    sensors = record.sensors.positions
    tg = record.time_grid
    n_periods = coarse.n_periods
    if n_periods != tg.n_periods:
        raise ValueError(
            f"coarse path has {n_periods} periods, record has {tg.n_periods}"
        )
    points = np.empty((n_periods, coarse.n_sources, 3))
    all_chains = []
    for s in range(coarse.n_sources):
        q_prev = None
        prior_mean = coarse.points[0, s]
        chains = []
        for j in range(1, n_periods + 1):
            prior = Prior.normal(prior_mean, prior_sigma2 * np.eye(3))
            chain = mh_chain(
                record.period_block(j),
                coarse.points[j - 1, s],
                q_prev,
                sensors,
                tg.period_times(j),
                record.pulse,
                record.wave_speed,
                prior,
                noise,
                k_samples,
                beta,
                sigma_prop,
                chain_seed(master_seed, s, j),
                corrected=corrected,
            )
            points[j - 1, s] = chain.cm
            q_prev = chain.cm
            prior_mean = chain.cm
            chains.append(chain)
        all_chains.append(chains)
    return points, all_chains


def run_uniform_mcmc(
    record: FieldRecord,
    lower,
    upper,
    k_samples: int,
    sigma_prop: float,
    noise: NoiseModel,
    master_seed: int,
) -> tuple:
    """Plain random-walk MCMC under a uniform box prior, with no coarse
    seeding: period 1 starts at the box center, later periods at the
    previous conditional mean. Single source."""
    prior = Prior.uniform_box(lower, upper)
    sensors = record.sensors.positions
    tg = record.time_grid
    start = 0.5 * (prior.lower + prior.upper)
    points = np.empty((tg.n_periods, 1, 3))
    chains = []
    for j in range(1, tg.n_periods + 1):
        block = record.period_block(j)
        times = tg.period_times(j)

        def logpdf(q, block=block, times=times):
            return log_posterior(
                q, block, sensors, times, record.pulse, record.wave_speed, noise, prior
            )

        chain = run_chain_from_logpdf(
            logpdf,
            start,
            k_samples,
            sigma_prop,
            chain_seed(master_seed, 0, j),
            anchor=None,
        )
        points[j - 1, 0] = chain.cm
        start = chain.cm
        chains.append(chain)
    return points, [chains]


def batch_means_se(values: np.ndarray, n_batches: int | None = None) -> float:
    """Batch-means standard error of the mean of a 1-D chain trace."""
    values = np.asarray(values, dtype=float)
    k = values.size
    if n_batches is None:
        n_batches = max(2, int(math.sqrt(k)))
    size = k // n_batches
    if size < 1:
        raise ValueError("chain too short for the requested batch count")
    trimmed = values[: n_batches * size].reshape(n_batches, size)
    means = trimmed.mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_refined_path(points: np.ndarray, dest) -> None:
    """Refined path CSV: one row per (period, source)."""
    with open(dest, "w") as f:
        f.write("j,source_id,x,y,z\n")
        for j in range(points.shape[0]):
            for s in range(points.shape[1]):
                p = points[j, s]
                f.write(f"{j + 1},{s + 1},{_FMT % p[0]},{_FMT % p[1]},{_FMT % p[2]}\n")


def write_chain_csv(chain: Chain, dest) -> None:
    with open(dest, "w") as f:
        f.write("k,x,y,z,log_post,accepted\n")
        for k in range(chain.length):
            p = chain.samples[k]
            f.write(
                f"{k + 1},{_FMT % p[0]},{_FMT % p[1]},{_FMT % p[2]},"
                f"{_FMT % chain.log_post[k]},{int(chain.accepted[k])}\n"
            )
