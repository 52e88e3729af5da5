"""Scenario generator: correlated covariates, sparse true effects,
contaminated errors, log-linear event times and calibrated exponential
censoring.

Log event times follow T = sum_k X_k*alpha_k + sum_t Z_g*beta_t +
sum_s Z_g*X_e*gamma_s + eps over the ground truth's nonzero effects
(intercept 0).  Censoring times are exponential with the rate calibrated
so the realized censoring fraction matches the target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import sort_and_weight

__all__ = [
    "ScenarioConfig",
    "GroundTruth",
    "GenerationError",
    "CalibrationError",
    "gen_covariates",
    "gen_truth",
    "gen_error",
    "calibrate_censoring",
    "gen_dataset",
]

CORRELATIONS = ("independent", "ar", "band")
ERROR_KINDS = ("normal", "cauchy", "t3")

N_GENE_MAIN = 5
N_INTERACTIONS = 10


class GenerationError(ValueError):
    """Scenario cannot be generated (e.g. non-PD correlation matrix)."""


class CalibrationError(RuntimeError):
    """Censoring-rate calibration failed to reach the target."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Simulation scenario parameters.

    correlation is one of independent / ar / band with parameter rho;
    error is normal or a normal/Cauchy or normal/t(3) mixture with
    contamination fraction `contamination`.
    """

    n: int = 300
    p: int = 500
    q: int = 3
    correlation: str = "independent"
    rho: float = 0.0
    error: str = "normal"
    contamination: float = 0.0
    target_censoring: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.correlation not in CORRELATIONS:
            raise ValueError(f"correlation must be one of {CORRELATIONS}")
        if self.correlation != "independent" and not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (-1, 1), got {self.rho}")
        if self.error not in ERROR_KINDS:
            raise ValueError(f"error must be one of {ERROR_KINDS}")
        if self.error == "normal" and self.contamination != 0.0:
            raise ValueError("normal errors cannot have contamination > 0")
        if not 0.0 <= self.contamination < 1.0:
            raise ValueError("contamination must be in [0, 1)")
        if not 0.0 < self.target_censoring < 1.0:
            raise ValueError("target_censoring must be in (0, 1)")
        if self.n < 2 * self.q + 2:
            raise ValueError(f"need n >= 2q+2 = {2 * self.q + 2}, got {self.n}")
        if self.p < 1 or self.q < 1:
            raise ValueError("p and q must be positive")

    def error_label(self) -> str:
        if self.contamination == 0.0:
            return "N(0,1)"
        tail = "Cauchy" if self.error == "cauchy" else "t(3)"
        pi = self.contamination
        return f"{1 - pi:.2g}N(0,1)+{pi:.2g}{tail}"

    def correlation_label(self) -> str:
        if self.correlation == "independent":
            return "Independent"
        return f"{self.correlation.upper() if self.correlation == 'ar' else 'Band'}({self.rho:g})"


@dataclass(frozen=True)
class GroundTruth:
    """Positions and values of the nonzero effects.

    env_main holds the q environmental main effects; gene_main holds
    (gene, coef) pairs and interactions (gene, env, coef) triples, all
    1-based.  With q=3 this is the 3 + 5 + 10 = 18 nonzero effects of the
    standard scenario.
    """

    env_main: np.ndarray
    gene_main: tuple[tuple[int, float], ...]
    interactions: tuple[tuple[int, int, float], ...]

    @property
    def interaction_pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset((g, e) for g, e, _ in self.interactions)

    def active_genes(self) -> tuple[int, ...]:
        genes = {g for g, _ in self.gene_main}
        genes.update(g for g, _, _ in self.interactions)
        return tuple(sorted(genes))

    def scaled(self, factor: float) -> "GroundTruth":
        return GroundTruth(
            env_main=self.env_main * factor,
            gene_main=tuple((g, c * factor) for g, c in self.gene_main),
            interactions=tuple((g, e, c * factor) for g, e, c in self.interactions))


def correlation_submatrix(config: ScenarioConfig, idx: np.ndarray) -> np.ndarray:
    """Correlation matrix restricted to (0-based) factor indices idx."""
    idx = np.asarray(idx)
    if config.correlation == "independent":
        return np.eye(idx.size)
    d = np.abs(idx[:, None] - idx[None, :])
    if config.correlation == "ar":
        return config.rho ** d
    C = np.where((d >= 1) & (d <= 2), config.rho, 0.0)
    np.fill_diagonal(C, 1.0)
    return C


def _chol(config: ScenarioConfig, idx: np.ndarray) -> np.ndarray:
    C = correlation_submatrix(config, idx)
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        raise GenerationError(
            f"{config.correlation_label()} correlation is not positive definite "
            f"for dimension {idx.size}") from None


def _sample_block(config, rng, m: int, idx: np.ndarray) -> np.ndarray:
    L = _chol(config, idx)
    return rng.standard_normal((m, idx.size)) @ L.T


def gen_covariates(config: ScenarioConfig, rng: np.random.Generator):
    """Draw (X, Z): multivariate normal, mean 0, unit marginal variance,
    with the configured correlation applied within each block (X and Z
    are mutually independent)."""
    X = _sample_block(config, rng, config.n, np.arange(config.q))
    Z = _sample_block(config, rng, config.n, np.arange(config.p))
    return X, Z


def _positions(p: int, count: int) -> list[int]:
    # ceil(p*(2t-1)/(2*count)) for t = 1..count, 1-based gene indices
    return [-(-p * (2 * t - 1) // (2 * count)) for t in range(1, count + 1)]


def gen_truth(config: ScenarioConfig, rng: np.random.Generator) -> GroundTruth:
    """Evenly spaced nonzero positions with Uniform(0.5, 1.5) coefficients.

    Gene main effects sit at ceil(p*(2t-1)/10), t=1..5; interaction genes
    at ceil(p*(2t-1)/20), t=1..10, paired with env ((t-1) mod q) + 1.
    """
    if config.p < 10:
        raise ValueError("need p >= 10 to place the nonzero effects")
    coefs = rng.uniform(0.5, 1.5, size=config.q + N_GENE_MAIN + N_INTERACTIONS)
    env_main = coefs[:config.q]
    main_pos = _positions(config.p, N_GENE_MAIN)
    inter_pos = _positions(config.p, N_INTERACTIONS)
    gene_main = tuple(
        (g, float(c)) for g, c in zip(main_pos, coefs[config.q:config.q + N_GENE_MAIN]))
    interactions = tuple(
        (g, (t % config.q) + 1, float(c))
        for t, (g, c) in enumerate(zip(inter_pos, coefs[config.q + N_GENE_MAIN:])))
    return GroundTruth(env_main=env_main.copy(), gene_main=gene_main,
                       interactions=interactions)


def gen_error(config: ScenarioConfig, n: int, rng: np.random.Generator,
              return_labels: bool = False):
    """Error draws: N(0,1) with probability 1-contamination, otherwise the
    contaminating tail (standard Cauchy or t(3))."""
    if config.contamination == 0.0:
        eps = rng.standard_normal(n)
        labels = np.zeros(n, dtype=bool)
    else:
        base = rng.standard_normal(n)
        tail = rng.standard_cauchy(n) if config.error == "cauchy" \
            else rng.standard_t(3, size=n)
        labels = rng.random(n) < config.contamination
        eps = np.where(labels, tail, base)
    return (eps, labels) if return_labels else eps


def truth_predictor(truth: GroundTruth, X: np.ndarray, Z_cols: np.ndarray,
                    gene_slot: dict[int, int]) -> np.ndarray:
    """Linear predictor over the truth's effects.  Z_cols holds only the
    columns listed in gene_slot (gene index -> column)."""
    T = X @ truth.env_main
    for g, c in truth.gene_main:
        T = T + c * Z_cols[:, gene_slot[g]]
    for g, e, c in truth.interactions:
        T = T + c * Z_cols[:, gene_slot[g]] * X[:, e - 1]
    return T


def calibrate_censoring(config: ScenarioConfig, truth: GroundTruth,
                        rng: np.random.Generator | None = None,
                        pilot: int = 10_000, tol: float = 0.02) -> float:
    """Exponential censoring rate hitting the target censoring fraction.

    Simulates `pilot` event times from the scenario, draws unit
    exponentials for the censoring times, and bisects on log(rate) over
    [-20, 20] until the pilot censoring fraction P(log C < T) is within
    `tol` of the target (comparison on the log scale, where T lives).
    """
    if rng is None:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(1 << 20,)))
    genes = truth.active_genes()
    slot = {g: i for i, g in enumerate(genes)}
    Xp = _sample_block(config, rng, pilot, np.arange(config.q))
    Zp = _sample_block(config, rng, pilot, np.array([g - 1 for g in genes]))
    eps = gen_error(config, pilot, rng)
    T = truth_predictor(truth, Xp, Zp, slot) + eps
    log_e_minus_t = np.log(rng.standard_exponential(pilot)) - T

    def frac(log_rate: float) -> float:
        # censored when log C = log E - log rate < T
        return float(np.mean(log_e_minus_t < log_rate))

    lo, hi = -20.0, 20.0
    f_lo, f_hi = frac(lo), frac(hi)
    target = config.target_censoring
    if not f_lo - tol <= target <= f_hi + tol:
        raise CalibrationError(
            f"target censoring {target} outside achievable range "
            f"[{f_lo:.4f}, {f_hi:.4f}] for log rate in [-20, 20]")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if frac(mid) < target:
            lo = mid
        else:
            hi = mid
    log_rate = 0.5 * (lo + hi)
    achieved = frac(log_rate)
    if abs(achieved - target) > tol:
        raise CalibrationError(
            f"calibration stalled at censoring fraction {achieved:.4f} "
            f"for target {target}")
    return float(np.exp(log_rate))


def _replicate_rngs(config: ScenarioConfig, replicate: int):
    ss = np.random.SeedSequence(entropy=config.seed, spawn_key=(replicate,))
    children = ss.spawn(4)
    return [np.random.default_rng(c) for c in children]


def gen_dataset(config: ScenarioConfig, replicate: int = 0,
                truth: GroundTruth | None = None):
    """Generate one sorted, weighted dataset plus its ground truth.

    Fully deterministic in (config.seed, replicate); distinct replicates
    use independently derived streams.  Passing `truth` overrides the
    generated effect positions/values (the truth stream is still
    consumed, so overriding does not shift the other streams).
    """
    truth_rng, calib_rng, cov_rng, obs_rng = _replicate_rngs(config, replicate)
    generated = gen_truth(config, truth_rng)
    truth = generated if truth is None else truth
    rate = calibrate_censoring(config, truth, rng=calib_rng)
    X, Z = gen_covariates(config, cov_rng)
    eps = gen_error(config, config.n, obs_rng)
    genes = truth.active_genes()
    slot = {g: i for i, g in enumerate(genes)}
    T = truth_predictor(truth, X, Z[:, [g - 1 for g in genes]], slot) + eps
    log_c = np.log(obs_rng.standard_exponential(config.n)) - np.log(rate)
    y = np.minimum(T, log_c)
    delta = (T <= log_c).astype(np.int8)
    ds = sort_and_weight(y, delta, X, Z)
    return ds, truth


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(config, seed=seed)
