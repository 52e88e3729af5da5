"""Scenario generator: covariates, truth placement, errors, censoring."""

import numpy as np
import pytest

from gxescan.sim import (CalibrationError, GenerationError, ScenarioConfig,
                         calibrate_censoring, gen_covariates, gen_dataset,
                         gen_error, gen_truth)


def big_cov_config(**kw):
    base = dict(n=100_000, p=10, q=3, seed=1)
    base.update(kw)
    return ScenarioConfig(**base)


class TestGenCovariates:
    def test_independent_columns_uncorrelated(self):
        cfg = big_cov_config()
        rng = np.random.default_rng(0)
        _, Z = gen_covariates(cfg, rng)
        r = np.corrcoef(Z[:, 0], Z[:, 1])[0, 1]
        assert abs(r) <= 0.01

    def test_ar_lag3_correlation(self):
        cfg = big_cov_config(correlation="ar", rho=0.8)
        rng = np.random.default_rng(1)
        _, Z = gen_covariates(cfg, rng)
        r = np.corrcoef(Z[:, 0], Z[:, 3])[0, 1]
        assert r == pytest.approx(0.8 ** 3, abs=0.02)

    def test_band_lag3_cutoff(self):
        cfg = big_cov_config(correlation="band", rho=0.3)
        rng = np.random.default_rng(2)
        _, Z = gen_covariates(cfg, rng)
        assert abs(np.corrcoef(Z[:, 0], Z[:, 3])[0, 1]) <= 0.02
        assert np.corrcoef(Z[:, 0], Z[:, 2])[0, 1] == pytest.approx(0.3, abs=0.02)

    def test_unit_marginal_variance(self):
        cfg = big_cov_config(correlation="ar", rho=0.6)
        rng = np.random.default_rng(3)
        X, Z = gen_covariates(cfg, rng)
        assert np.allclose(X.var(axis=0), 1.0, atol=0.02)
        assert np.allclose(Z.var(axis=0), 1.0, atol=0.02)

    def test_band_06_not_positive_definite(self):
        # the banded matrix with rho=0.6 has negative eigenvalues once
        # p >= 6; the factorization check must refuse to sample it
        cfg = ScenarioConfig(n=50, p=10, q=3, correlation="band", rho=0.6, seed=4)
        with pytest.raises(GenerationError, match="positive definite"):
            gen_covariates(cfg, np.random.default_rng(0))


class TestGenTruth:
    def test_positions_p500(self):
        cfg = ScenarioConfig(n=300, p=500, q=3, seed=5)
        truth = gen_truth(cfg, np.random.default_rng(0))
        assert [g for g, _ in truth.gene_main] == [50, 150, 250, 350, 450]
        assert [g for g, _, _ in truth.interactions] \
            == [25, 75, 125, 175, 225, 275, 325, 375, 425, 475]

    def test_coefficients_in_range_and_count(self):
        cfg = ScenarioConfig(n=300, p=200, q=3, seed=6)
        truth = gen_truth(cfg, np.random.default_rng(1))
        coefs = list(truth.env_main) + [c for _, c in truth.gene_main] \
            + [c for _, _, c in truth.interactions]
        assert len(coefs) == 18
        assert all(0.5 <= c <= 1.5 for c in coefs)

    def test_env_indices_cycle(self):
        cfg = ScenarioConfig(n=300, p=100, q=3, seed=7)
        truth = gen_truth(cfg, np.random.default_rng(2))
        assert [e for _, e, _ in truth.interactions] \
            == [1, 2, 3, 1, 2, 3, 1, 2, 3, 1]

    def test_distinct_positions_and_pairs(self):
        for p in (10, 37, 100, 1000):
            cfg = ScenarioConfig(n=300, p=p, q=3, seed=8)
            truth = gen_truth(cfg, np.random.default_rng(3))
            mains = [g for g, _ in truth.gene_main]
            assert len(set(mains)) == 5
            pairs = [(g, e) for g, e, _ in truth.interactions]
            assert len(set(pairs)) == 10


class TestGenError:
    def test_pure_gaussian_variance(self):
        cfg = ScenarioConfig(n=300, p=10, q=3, seed=9)
        eps = gen_error(cfg, 10_000, np.random.default_rng(4))
        assert eps.var() == pytest.approx(1.0, abs=0.05)

    def test_cauchy_contamination_median_stable_mean_not(self):
        cfg = ScenarioConfig(n=300, p=10, q=3, error="cauchy",
                             contamination=0.3, seed=10)
        medians, means = [], []
        for s in range(40):
            eps = gen_error(cfg, 10_000, np.random.default_rng(s))
            medians.append(np.median(eps))
            means.append(eps.mean())
        assert max(abs(m) for m in medians) <= 0.05
        assert max(abs(m) for m in means) > 0.3  # heavy-tail witness

    def test_t3_label_fraction(self):
        cfg = ScenarioConfig(n=300, p=10, q=3, error="t3",
                             contamination=0.15, seed=11)
        _, labels = gen_error(cfg, 10_000, np.random.default_rng(5),
                              return_labels=True)
        assert labels.mean() == pytest.approx(0.15, abs=0.01)


class TestCalibrateCensoring:
    def test_realized_fraction_near_target(self):
        hits = 0
        for seed in range(20):
            cfg = ScenarioConfig(n=300, p=20, q=3, seed=seed)
            ds, _ = gen_dataset(cfg)
            frac = 1.0 - ds.delta.mean()
            hits += 0.20 - 1e-12 <= frac <= 0.30 + 1e-12
        assert hits >= 19

    def test_tiny_rate_means_no_censoring(self):
        cfg = ScenarioConfig(n=300, p=20, q=3, seed=12)
        truth = gen_truth(cfg, np.random.default_rng(0))
        rng = np.random.default_rng(1)
        T = np.zeros(5000) + rng.normal(size=5000)
        log_c = np.log(rng.standard_exponential(5000)) - np.log(1e-9)
        assert np.mean(log_c < T) == 0.0

    def test_rate_monotone_in_target(self):
        cfg10 = ScenarioConfig(n=300, p=20, q=3, target_censoring=0.10, seed=13)
        cfg40 = ScenarioConfig(n=300, p=20, q=3, target_censoring=0.40, seed=13)
        truth = gen_truth(cfg10, np.random.default_rng(0))
        r10 = calibrate_censoring(cfg10, truth, rng=np.random.default_rng(2))
        r40 = calibrate_censoring(cfg40, truth, rng=np.random.default_rng(2))
        assert r10 < r40

    def test_rescaled_truth_changes_rate(self):
        cfg = ScenarioConfig(n=300, p=20, q=3, seed=14)
        truth = gen_truth(cfg, np.random.default_rng(0))
        r1 = calibrate_censoring(cfg, truth, rng=np.random.default_rng(3))
        r2 = calibrate_censoring(cfg, truth.scaled(2.0), rng=np.random.default_rng(3))
        assert r1 != r2

    def test_unreachable_target_errors(self):
        cfg = ScenarioConfig(n=300, p=20, q=3, target_censoring=0.999999, seed=15)
        truth = gen_truth(cfg, np.random.default_rng(0)).scaled(100.0)
        with pytest.raises(CalibrationError):
            calibrate_censoring(cfg, truth, rng=np.random.default_rng(4), tol=1e-9)


class TestGenDataset:
    def test_deterministic(self):
        cfg = ScenarioConfig(n=120, p=15, q=2, seed=16)
        a, ta = gen_dataset(cfg, replicate=3)
        b, tb = gen_dataset(cfg, replicate=3)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.Z, b.Z)
        np.testing.assert_array_equal(ta.env_main, tb.env_main)
        assert ta.gene_main == tb.gene_main
        assert ta.interactions == tb.interactions

    def test_replicates_differ(self):
        cfg = ScenarioConfig(n=120, p=15, q=2, seed=17)
        a, _ = gen_dataset(cfg, replicate=0)
        b, _ = gen_dataset(cfg, replicate=1)
        assert not np.array_equal(a.y, b.y)
        r = np.corrcoef(np.sort(a.y), np.sort(b.y))[0, 1]  # crude stream check
        assert abs(np.corrcoef(a.y, b.y)[0, 1]) < 0.25 or r < 0.999

    def test_paper_scale_dimensions(self):
        cfg = ScenarioConfig(n=300, p=500, q=3, seed=18)
        ds, truth = gen_dataset(cfg)
        assert (ds.n, ds.q, ds.p) == (300, 3, 500)
        assert 2 * ds.q + 2 == 8
        assert len(truth.interactions) == 10

    def test_null_truth_gives_noise_only_outcome(self):
        # n large enough that the null |corr| baseline sqrt(2/(pi*n))
        # sits below the 0.02 bar
        cfg = ScenarioConfig(n=3000, p=12, q=3, seed=19)
        null = gen_truth(cfg, np.random.default_rng(0)).scaled(0.0)
        corrs = []
        for rep in range(50):
            ds, _ = gen_dataset(cfg, replicate=rep, truth=null)
            j = 1 + rep % ds.p
            corrs.append(abs(np.corrcoef(ds.y, ds.Z[:, j - 1])[0, 1]))
        assert np.mean(corrs) <= 0.02

    def test_marginal_variances_at_sample_scale(self):
        cfg = ScenarioConfig(n=300, p=30, q=3, correlation="ar", rho=0.2, seed=20)
        ds, _ = gen_dataset(cfg)
        assert np.allclose(ds.X.var(axis=0), 1.0, atol=0.15 * 3)
        assert np.abs(ds.Z.var(axis=0) - 1.0).mean() <= 0.15

    def test_censoring_within_band_across_seeds(self):
        fracs = []
        for seed in range(15):
            cfg = ScenarioConfig(n=300, p=15, q=3, error="t3",
                                 contamination=0.15, seed=seed)
            ds, _ = gen_dataset(cfg)
            fracs.append(1.0 - ds.delta.mean())
        assert all(abs(f - 0.25) <= 0.05 + 1e-9 for f in fracs)


class TestScenarioValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            ScenarioConfig(n=5, p=10, q=3)  # n < 2q+2
        with pytest.raises(ValueError):
            ScenarioConfig(correlation="toeplitz")
        with pytest.raises(ValueError):
            ScenarioConfig(error="normal", contamination=0.1)
        with pytest.raises(ValueError):
            ScenarioConfig(target_censoring=0.0)
        with pytest.raises(ValueError):
            ScenarioConfig(correlation="ar", rho=1.5)

    def test_labels(self):
        sc = ScenarioConfig(n=300, p=100, q=3, correlation="ar", rho=0.2,
                            error="cauchy", contamination=0.3)
        assert sc.error_label() == "0.7N(0,1)+0.3Cauchy"
        assert sc.correlation_label() == "AR(0.2)"
        assert ScenarioConfig().correlation_label() == "Independent"
