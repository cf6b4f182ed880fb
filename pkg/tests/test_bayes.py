"""Bayesian stage: conditioning, posterior, chains, refinement."""

import math

import numpy as np
import pytest

from sourcetrack.adsm import run_adsm
from sourcetrack.bayes import (
    Chain,
    GaussianJoint,
    NoiseModel,
    Prior,
    approx_forward,
    batch_means_se,
    chain_seed,
    gaussian_condition,
    log_posterior,
    mh_chain,
    run_adsm_mcmc,
    run_chain_from_logpdf,
    run_uniform_mcmc,
    write_chain_csv,
)
from sourcetrack.core import (
    Pulse,
    SamplingGrid,
    ScenarioConfig,
    TimeGrid,
    Trajectory,
    build_sensor_set,
)
from sourcetrack.forward import simulate_record

C = 330.0
PULSE = Pulse(f0=100.0, period=0.1)


# ---------------------------------------------------------------------------
# Gaussian conditioning
# ---------------------------------------------------------------------------

class TestGaussianCondition:
    def _joint(self, seed=0):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(4, 4))
        cov = a @ a.T + 0.5 * np.eye(4)
        return GaussianJoint(
            zeta_mean=rng.normal(size=2),
            q_mean=rng.normal(size=2),
            cov_zz=cov[:2, :2],
            cov_zq=cov[:2, 2:],
            cov_qq=cov[2:, 2:],
        )

    def test_independent_blocks(self):
        joint = GaussianJoint(
            zeta_mean=[1.0, -2.0],
            q_mean=[0.5, 0.5],
            cov_zz=np.diag([2.0, 3.0]),
            cov_zq=np.zeros((2, 2)),
            cov_qq=np.eye(2),
        )
        mean, cov = gaussian_condition(joint, [4.0, -4.0])
        np.testing.assert_allclose(mean, [1.0, -2.0])
        np.testing.assert_allclose(cov, np.diag([2.0, 3.0]))

    def test_at_the_mean(self):
        joint = self._joint()
        mean, _ = gaussian_condition(joint, joint.q_mean)
        np.testing.assert_allclose(mean, joint.zeta_mean)

    def test_monte_carlo_oracle(self):
        # Conditioning formulas against window-rejection moments of 1e6
        # joint draws. The conditional mean is linear in q, so the window
        # average is unbiased; covariance picks up only an O(window^2) bias
        # far below the Monte Carlo noise.
        joint = self._joint(seed=3)
        rng = np.random.default_rng(2024)
        full_cov = np.block([[joint.cov_zz, joint.cov_zq], [joint.cov_zq.T, joint.cov_qq]])
        full_mean = np.concatenate([joint.zeta_mean, joint.q_mean])
        draws = rng.multivariate_normal(full_mean, full_cov, size=1_000_000)
        q0 = joint.q_mean + np.array([0.4, -0.3])
        delta = 0.1 * np.sqrt(np.diag(joint.cov_qq))
        inside = np.all(np.abs(draws[:, 2:] - q0) <= delta, axis=1)
        kept = draws[inside, :2]
        assert kept.shape[0] > 3000
        emp_mean = kept.mean(axis=0)
        emp_cov = np.cov(kept.T)
        mean, cov = gaussian_condition(joint, q0)
        se_mean = kept.std(axis=0, ddof=1) / math.sqrt(kept.shape[0])
        np.testing.assert_array_less(np.abs(mean - emp_mean), 3.0 * se_mean)
        n = kept.shape[0]
        for i in range(2):
            for k in range(2):
                se_cov = math.sqrt((cov[i, i] * cov[k, k] + cov[i, k] ** 2) / n)
                assert abs(cov[i, k] - emp_cov[i, k]) < 3.0 * se_cov

    def test_conditional_cov_is_symmetric_psd(self):
        joint = self._joint(seed=9)
        _, cov = gaussian_condition(joint, [0.3, 0.1])
        np.testing.assert_allclose(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > -1e-12

    def test_singular_q_block(self):
        joint = GaussianJoint(
            zeta_mean=[0.0],
            q_mean=[0.0, 0.0],
            cov_zz=np.eye(1),
            cov_zq=np.zeros((1, 2)),
            cov_qq=np.zeros((2, 2)),
        )
        with pytest.raises(np.linalg.LinAlgError):
            gaussian_condition(joint, [1.0, 1.0])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            GaussianJoint(
                zeta_mean=[0.0],
                q_mean=[0.0],
                cov_zz=np.eye(1),
                cov_zq=np.array([[0.5]]),
                cov_qq=-np.eye(1),
            )


# ---------------------------------------------------------------------------
# Posterior pieces
# ---------------------------------------------------------------------------

def _static_setup(truth=(0.5, -1.0, 1.0), geometry="S3"):
    config = ScenarioConfig(
        wave_speed=C,
        sources=((Trajectory.static(truth), PULSE),),
        sensors=build_sensor_set(geometry),
        time_grid=TimeGrid(0.5, 0.1, 7 if geometry == "S3" else 12),
        grid=SamplingGrid((-5, -5, -5), (5, 5, 5), 11),
        noise_level=0.0,
        seed=0,
    )
    record = simulate_record(config)
    return config, record


class TestLogPosterior:
    def test_zero_misfit_reduces_to_prior(self):
        config, record = _static_setup()
        times = config.time_grid.period_times(2)
        sensors = config.sensors.positions
        q = np.array([0.5, -1.0, 1.0])
        noise = NoiseModel(w_mean=1e-4, w_var=1e-3)
        block = approx_forward(q, sensors, times, PULSE, C) + noise.w_mean
        prior = Prior.normal((0.0, 0.0, 0.0), 0.2 * np.eye(3))
        lp = log_posterior(q, block, sensors, times, PULSE, C, noise, prior)
        assert lp == pytest.approx(prior.log_density(q), abs=1e-12)

    def test_difference_matches_manual_misfit(self):
        config, record = _static_setup()
        times = config.time_grid.period_times(2)
        sensors = config.sensors.positions
        block = record.period_block(2)
        noise = NoiseModel(w_mean=1e-4, w_var=1e-3)
        prior = Prior.normal((0.0, 0.0, 0.0), 0.2 * np.eye(3))
        q1 = np.array([0.4, -1.0, 0.9])
        q2 = np.array([1.5, 0.0, 0.0])

        def manual(q):
            resid = block - approx_forward(q, sensors, times, PULSE, C) - noise.w_mean
            return -0.5 * (resid ** 2).sum() / noise.w_var + prior.log_density(q)

        got = log_posterior(q1, block, sensors, times, PULSE, C, noise, prior) - log_posterior(
            q2, block, sensors, times, PULSE, C, noise, prior
        )
        assert got == pytest.approx(manual(q1) - manual(q2), rel=1e-12)

    def test_truth_beats_offset(self):
        truth = np.array([0.5, -1.0, 1.0])
        config, record = _static_setup(truth)
        times = config.time_grid.period_times(3)
        sensors = config.sensors.positions
        block = record.period_block(3)
        noise = NoiseModel(w_mean=1e-4, w_var=1e-3)
        prior = Prior.normal(truth, 0.2 * np.eye(3))
        lp_truth = log_posterior(truth, block, sensors, times, PULSE, C, noise, prior)
        lp_off = log_posterior(truth + 1.0, block, sensors, times, PULSE, C, noise, prior)
        assert lp_truth > lp_off

    def test_uniform_prior_support(self):
        prior = Prior.uniform_box((-5, -5, -5), (5, 5, 5))
        assert prior.log_density((0.0, 0.0, 0.0)) == 0.0
        assert prior.log_density((5.0, 5.0, 5.0)) == 0.0
        assert prior.log_density((5.1, 0.0, 0.0)) == -math.inf

    def test_flat_likelihood_limit(self):
        config, record = _static_setup()
        times = config.time_grid.period_times(1)
        sensors = config.sensors.positions
        block = record.period_block(1)
        noise = NoiseModel(w_mean=0.0, w_var=math.inf)
        prior = Prior.normal((0.0, 0.0, 0.0), 0.2 * np.eye(3))
        q = np.array([1.0, 2.0, -1.0])
        lp = log_posterior(q, block, sensors, times, PULSE, C, noise, prior)
        assert lp == pytest.approx(prior.log_density(q))

    def test_sensor_collision_rejected(self):
        config, record = _static_setup()
        times = config.time_grid.period_times(1)
        sensors = config.sensors.positions
        noise = NoiseModel()
        prior = Prior.uniform_box((-10, -10, -10), (10, 10, 10))
        with pytest.raises(ValueError):
            log_posterior(
                sensors[0], record.period_block(1), sensors, times, PULSE, C, noise, prior
            )


# ---------------------------------------------------------------------------
# Lemma-style numeric properties of the approximate forward operator
# ---------------------------------------------------------------------------

class TestOperatorProperties:
    def _setup(self):
        config, record = _static_setup(geometry="S3")
        sensors = config.sensors.positions
        times = config.time_grid.period_times(1)
        rng = np.random.default_rng(11)
        qs = rng.uniform(-5.0, 5.0, size=(2000, 3))
        dists = np.linalg.norm(qs[:, None, :] - sensors[None, :, :], axis=2)
        return sensors, times, qs, float(dists.min()), float(dists.max())

    def test_boundedness(self):
        sensors, times, qs, d_min, _ = self._setup()
        c1 = np.abs(PULSE.eval(np.linspace(0.0, 0.1, 200001))).max()
        bound = c1 / (4.0 * math.pi * d_min)
        worst = max(
            np.abs(approx_forward(q, sensors, times, PULSE, C)).max() for q in qs[:500]
        )
        assert worst <= bound * (1.0 + 1e-12)

    def test_lipschitz_ratio(self):
        sensors, times, qs, d_min, d_max = self._setup()
        grid_t = np.linspace(0.0, 0.1, 200001)
        c1 = np.abs(PULSE.eval(grid_t)).max()
        c2 = np.abs(PULSE.derivative(grid_t)).max()
        n_x, n_p = sensors.shape[0], times.size
        bound = math.sqrt(n_x * n_p) * (c1 + c2 * d_max / C) / (4.0 * math.pi * d_min ** 2)
        pairs = qs.reshape(1000, 2, 3)
        worst = 0.0
        for q1, q2 in pairs:
            num = np.linalg.norm(
                approx_forward(q1, sensors, times, PULSE, C)
                - approx_forward(q2, sensors, times, PULSE, C)
            )
            worst = max(worst, num / np.linalg.norm(q1 - q2))
        assert worst <= bound


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------

class TestChains:
    def test_single_sample_chain(self):
        chain = run_chain_from_logpdf(lambda q: 0.0, (1.0, 2.0, 3.0), 1, 0.1, seed=0)
        assert chain.length == 1
        np.testing.assert_allclose(chain.samples[0], [1.0, 2.0, 3.0])
        np.testing.assert_allclose(chain.cm, [1.0, 2.0, 3.0])
        assert chain.accept_count == 0

    def test_flat_target_accepts_everything(self):
        chain = run_chain_from_logpdf(lambda q: 5.0, (0.0, 0.0, 0.0), 500, 0.2, seed=1)
        assert chain.accept_count == 499
        assert chain.acceptance_rate == 1.0

    def test_proposal_stream_order(self):
        # proposals are anchor + sigma * eta with the normals drawn first,
        # then the acceptance levels
        anchor = np.array([1.0, -1.0, 0.5])
        chain = run_chain_from_logpdf(lambda q: 0.0, anchor, 50, 0.3, seed=77, anchor=anchor)
        rng = np.random.default_rng(77)
        steps = 0.3 * rng.standard_normal((49, 3))
        np.testing.assert_allclose(chain.samples[1:], anchor + steps, atol=1e-15)

    def test_shift_invariance(self):
        # adding a constant to the log density leaves the chain unchanged
        def logpdf(q):
            return -0.5 * float(q @ q)

        a = run_chain_from_logpdf(logpdf, (0.5, 0.5, 0.5), 400, 0.4, seed=5)
        b = run_chain_from_logpdf(lambda q: logpdf(q) + 123.4, (0.5, 0.5, 0.5), 400, 0.4, seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.accepted, b.accepted)

    def test_determinism(self):
        def logpdf(q):
            return -0.5 * float(q @ q)

        a = run_chain_from_logpdf(logpdf, (1.0, 0.0, 0.0), 300, 0.3, seed=9)
        b = run_chain_from_logpdf(logpdf, (1.0, 0.0, 0.0), 300, 0.3, seed=9)
        np.testing.assert_array_equal(a.samples, b.samples)
        c = run_chain_from_logpdf(logpdf, (1.0, 0.0, 0.0), 300, 0.3, seed=10)
        assert not np.array_equal(a.samples, c.samples)

    def test_cm_is_sample_mean(self):
        def logpdf(q):
            return -0.5 * float(q @ q)

        chain = run_chain_from_logpdf(logpdf, (1.0, 1.0, 1.0), 600, 0.5, seed=3)
        np.testing.assert_allclose(chain.cm, chain.samples.mean(axis=0), atol=1e-14)

    def test_prior_recovery_with_anchored_proposal(self):
        # Flat likelihood, proposal anchored at the prior mean: the chain's
        # stationary law is symmetric about the mean, so the sample mean
        # recovers it within batch-means error.
        mean = np.array([0.4, -0.7, 1.1])
        prior = Prior.normal(mean, 0.2 * np.eye(3))
        chain = run_chain_from_logpdf(
            prior.log_density, mean, 3000, 0.25, seed=21, anchor=mean
        )
        for i in range(3):
            se = batch_means_se(chain.samples[:, i])
            assert abs(chain.cm[i] - mean[i]) <= 4.0 * se

    def test_corrected_mode_recovers_offset_anchor(self):
        # With the proposal-density correction the independence sampler
        # targets the prior exactly even when anchored off the mean.
        mean = np.array([0.0, 0.0, 0.0])
        prior = Prior.normal(mean, 0.04 * np.eye(3))
        anchor = np.array([0.15, -0.1, 0.05])
        chain = run_chain_from_logpdf(
            prior.log_density, anchor, 4000, 0.25, seed=13, anchor=anchor, corrected=True
        )
        for i in range(3):
            se = batch_means_se(chain.samples[:, i])
            assert abs(chain.cm[i] - mean[i]) <= 4.0 * se

    def test_mh_chain_beta_mixes_anchor(self):
        config, record = _static_setup()
        times = config.time_grid.period_times(1)
        sensors = config.sensors.positions
        block = record.period_block(1)
        noise = NoiseModel(w_mean=0.0, w_var=math.inf)
        prior = Prior.uniform_box((-20, -20, -20), (20, 20, 20))
        y = np.array([1.0, 0.0, 0.0])
        q_prev = np.array([0.0, 1.0, 0.0])
        beta = 0.25
        chain = mh_chain(
            block, y, q_prev, sensors, times, PULSE, C, prior, noise,
            k_samples=40, beta=beta, sigma_prop=0.3, seed=4,
        )
        anchor = beta * y + (1 - beta) * q_prev
        rng = np.random.default_rng(4)
        steps = 0.3 * rng.standard_normal((39, 3))
        np.testing.assert_allclose(chain.samples[1:], anchor + steps, atol=1e-15)

    def test_mh_chain_validation(self):
        config, record = _static_setup()
        times = config.time_grid.period_times(1)
        with pytest.raises(ValueError):
            mh_chain(
                record.period_block(1), (0, 0, 0), None, config.sensors.positions,
                times, PULSE, C, Prior.uniform_box((-5,) * 3, (5,) * 3), NoiseModel(),
                k_samples=10, beta=1.5, sigma_prop=0.1, seed=0,
            )

    def test_chain_csv(self, tmp_path):
        chain = run_chain_from_logpdf(lambda q: -float(q @ q), (0.2, 0.2, 0.2), 5, 0.1, seed=0)
        dest = tmp_path / "period_1.csv"
        write_chain_csv(chain, dest)
        lines = dest.read_text().splitlines()
        assert lines[0] == "k,x,y,z,log_post,accepted"
        assert len(lines) == 6
        first = lines[1].split(",")
        assert first[0] == "1" and first[5] == "0"


class TestBatchMeans:
    def test_iid_scale(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=4096)
        se = batch_means_se(x)
        assert 0.3 / math.sqrt(4096) < se < 3.0 / math.sqrt(4096)

    def test_too_short(self):
        with pytest.raises(ValueError):
            batch_means_se(np.ones(3), n_batches=5)


# ---------------------------------------------------------------------------
# Refinement drivers
# ---------------------------------------------------------------------------

class TestRefinement:
    def _static_run(self, k_samples=400):
        truth = np.array([0.5, -1.0, 1.0])
        config = ScenarioConfig(
            wave_speed=C,
            sources=((Trajectory.static(truth), PULSE),),
            sensors=build_sensor_set("S1"),
            time_grid=TimeGrid(0.5, 0.1, 12),
            grid=SamplingGrid((-5, -5, -5), (5, 5, 5), 21),
            noise_level=0.0,
            seed=0,
        )
        record = simulate_record(config)
        coarse = run_adsm(record, config.grid, m=1, r_min=1.0, threads=2)
        noise = NoiseModel(w_mean=1e-4, w_var=1e-3)
        refined, chains = run_adsm_mcmc(
            record, coarse, prior_sigma2=0.2, k_samples=k_samples, beta=1.0,
            sigma_prop=0.1, noise=noise, master_seed=42,
        )
        return truth, config, record, coarse, refined, chains

    def test_static_refinement_within_lattice_spacing(self):
        truth, config, record, coarse, refined, chains = self._static_run()
        spacing = float(config.grid.spacing[0])
        errors = np.linalg.norm(refined[:, 0, :] - truth, axis=1)
        assert errors.max() <= spacing
        assert refined.shape == (5, 1, 3)
        assert len(chains) == 1 and len(chains[0]) == 5
        assert all(ch.length == 400 for ch in chains[0])

    def test_deterministic(self):
        _, config, record, coarse, refined_a, _ = self._static_run(k_samples=100)
        noise = NoiseModel(w_mean=1e-4, w_var=1e-3)
        refined_b, _ = run_adsm_mcmc(
            record, coarse, prior_sigma2=0.2, k_samples=100, beta=1.0,
            sigma_prop=0.1, noise=noise, master_seed=42,
        )
        refined_c, _ = run_adsm_mcmc(
            record, coarse, prior_sigma2=0.2, k_samples=100, beta=1.0,
            sigma_prop=0.1, noise=noise, master_seed=43,
        )
        np.testing.assert_array_equal(refined_b, refined_a)
        assert not np.array_equal(refined_b, refined_c)

    def test_mismatched_period_count_rejected(self):
        truth, config, record, coarse, _, _ = self._static_run(k_samples=10)
        from sourcetrack.adsm import CoarsePath

        short = CoarsePath(coarse.points[:3], coarse.values[:3])
        with pytest.raises(ValueError):
            run_adsm_mcmc(
                record, short, prior_sigma2=0.2, k_samples=10, beta=1.0,
                sigma_prop=0.1, noise=NoiseModel(), master_seed=1,
            )

    def test_uniform_driver_shapes(self):
        config, record = _static_setup()
        points, chains = run_uniform_mcmc(
            record, (-5, -5, -5), (5, 5, 5), k_samples=50, sigma_prop=0.5,
            noise=NoiseModel(), master_seed=3,
        )
        assert points.shape == (config.time_grid.n_periods, 1, 3)
        assert len(chains) == 1
        assert all(np.all(np.abs(p) <= 5.0) for p in points[:, 0, :])

    def test_chain_seed_scheme(self):
        seeds = {chain_seed(7, s, j) for s in range(3) for j in range(1, 41)}
        assert len(seeds) == 120
        assert 7 not in seeds
