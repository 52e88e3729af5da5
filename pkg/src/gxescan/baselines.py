"""Comparator estimators: weighted-LS lasso, unpenalized weighted LS with
p-value ranking, and check-loss lasso.

All three reuse the Kaplan-Meier weighting of the robust method and differ
only in loss and selection rule, so head-to-head comparisons isolate the
effect of the robust loss and of penalization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import SurvivalDataset, build_design, normalize, to_original_scale
from .robust import (MarginalFit, SolutionSurface, TuningGrid, GridProvenance,
                     _alloc_surface, _BaselineTuning)

__all__ = [
    "StuteFit",
    "SingularDesignError",
    "wls_lasso_fit",
    "stute_fit",
    "quantile_lasso_fit",
    "wls_lambda_max",
    "quantile_lambda_max",
    "quantile_bandwidth",
    "unrobust_grid",
    "quantile_grid",
    "fit_unrobust_surface",
    "fit_quantile_surface",
    "fit_stute",
]

log = logging.getLogger(__name__)

WLS_KKT_SCALE = 1e-6
WLS_MAX_SWEEPS = 10_000
SQR_KKT_SCALE = 1e-6
SQR_MAX_SWEEPS = 10_000


class SingularDesignError(np.linalg.LinAlgError):
    """Weighted design is rank deficient; the gene is ranked last."""


@dataclass
class StuteFit:
    """Unpenalized weighted-LS fit with Wald p-values for the interactions."""

    gene_index: int
    zeta: np.ndarray
    p_values: np.ndarray
    standard_errors: np.ndarray


@dataclass(frozen=True)
class QuantileTuning:
    tau: float
    lam: float
    bandwidth: float

    # duck-typed alongside RobustTuning where only lam is needed
    @property
    def theta(self) -> float:
        return math.nan


def wls_lasso_fit(y, U, w, lam, *, init=None, active=None, record=None,
                  gene_index=0) -> MarginalFit:
    """Weighted-least-squares lasso on normalized data.

    Minimizes 0.5*sum(w*(y - U zeta)^2) + lam*|zeta|_1 by cyclic coordinate
    descent with exact soft-threshold updates.  The problem is convex; the
    returned fit has KKT residual <= 1e-6*n.  With this scaling the zero
    solution is exact for every lam >= |U' W y|_inf.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, d = U.shape
    if active is None:
        active = np.ones(d, dtype=bool)
        active[0] = False
    active = np.ascontiguousarray(active, dtype=np.bool_)
    zeta = np.zeros(d) if init is None else np.array(init, dtype=np.float64)
    zeta[~active] = 0.0
    sweeps, converged, kkt, obj = _kernels.wls_cd(
        y, U, w, float(lam), zeta, active, WLS_KKT_SCALE * n, WLS_MAX_SWEEPS)
    zeta_orig = to_original_scale(zeta, record) if record is not None else zeta.copy()
    return MarginalFit(gene_index=gene_index, zeta=zeta_orig,
                       zeta_normalized=zeta,
                       tuning=_BaselineTuning(theta=math.inf, lam=float(lam)),
                       objective=float(obj), iterations=int(sweeps),
                       converged=bool(converged), kkt_residual=float(kkt),
                       inactive_cols=tuple(np.flatnonzero(~active)))


def stute_fit(y, U, w, gene_index=0) -> StuteFit:
    """Unpenalized weighted LS with sandwich-variance Wald p-values.

    Expects the raw (unnormalized) design including the intercept column.
    Coefficients solve (U'WU) zeta = U'Wy.  Interaction p-values come from
    z = gamma_hat/se against a standard normal, with the
    heteroskedasticity-robust variance
    (U'WU)^-1 (sum w_i^2 e_i^2 u_i u_i') (U'WU)^-1 and the Kaplan-Meier
    weights treated as fixed.

    Raises SingularDesignError when n <= 2q+2 or the weighted design is
    rank deficient.
    """
    y = np.asarray(y, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, d = U.shape
    q = (d - 2) // 2
    if n <= d:
        raise SingularDesignError(f"need n > {d} observations, got {n}")
    Uw = U * w[:, None]
    A = U.T @ Uw
    try:
        c = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"gene {gene_index}: singular weighted design") from exc
    zeta = _cho_solve(c, Uw.T @ y)
    resid = y - U @ zeta
    B = (Uw * (resid * resid)[:, None]).T @ Uw
    Ainv_B = _cho_solve(c, B)
    cov = _cho_solve(c, Ainv_B.T)
    se_all = np.sqrt(np.maximum(np.diag(cov), 0.0))
    gamma = zeta[d - q:]
    se = se_all[d - q:]
    with np.errstate(divide="ignore", invalid="ignore"):
        zstat = np.where(se > 0, np.abs(gamma) / se,
                         np.where(gamma == 0.0, 0.0, np.inf))
    p = np.array([math.erfc(zv / math.sqrt(2.0)) if math.isfinite(zv) else 0.0
                  for zv in zstat])
    return StuteFit(gene_index=gene_index, zeta=zeta, p_values=p,
                    standard_errors=se)


def _cho_solve(c, b):
    # two triangular solves against the cholesky factor
    z = np.linalg.solve(c, b)
    return np.linalg.solve(c.T, z)


def quantile_bandwidth(residuals, n) -> float:
    """Smoothing bandwidth 0.125 * IQR(residuals) * n^(-1/5), floored away
    from zero so the majorizer stays finite."""
    iqr = float(np.quantile(residuals, 0.75) - np.quantile(residuals, 0.25))
    return max(0.125 * iqr * n ** (-0.2), 1e-4)


def quantile_lasso_fit(y, U, w, tau, lam, *, init=None, active=None,
                       record=None, gene_index=0, bandwidth=None) -> MarginalFit:
    """Check-loss lasso on normalized data via a smoothed objective.

    Minimizes sum(w * rho_tau(y - U zeta)) + lam*|zeta|_1 where rho_tau is
    the quantile check loss, replaced by its uniform-kernel smoothing with
    bandwidth h (quadratic inside |r| < h).  When `bandwidth` is None the
    fit runs once with h from the initial residuals and once more with h
    refreshed from the fitted residuals.  The final KKT check is against
    the smoothed objective.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    y = np.ascontiguousarray(y, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, d = U.shape
    if active is None:
        active = np.ones(d, dtype=bool)
        active[0] = False
    active = np.ascontiguousarray(active, dtype=np.bool_)
    zeta = np.zeros(d) if init is None else np.array(init, dtype=np.float64)
    zeta[~active] = 0.0

    if bandwidth is None:
        h = quantile_bandwidth(y - U @ zeta, n)
        passes = 2
    else:
        h = float(bandwidth)
        passes = 1
    for step in range(passes):
        sweeps, converged, kkt, obj = _kernels.sqr_cd(
            y, U, w, float(lam), float(tau), h, zeta, active,
            1e-8, SQR_KKT_SCALE * n, SQR_MAX_SWEEPS)
        if step + 1 < passes:
            h = quantile_bandwidth(y - U @ zeta, n)
    zeta_orig = to_original_scale(zeta, record) if record is not None else zeta.copy()
    return MarginalFit(gene_index=gene_index, zeta=zeta_orig,
                       zeta_normalized=zeta,
                       tuning=QuantileTuning(tau=float(tau), lam=float(lam),
                                             bandwidth=h),
                       objective=float(obj), iterations=int(sweeps),
                       converged=bool(converged), kkt_residual=float(kkt),
                       inactive_cols=tuple(np.flatnonzero(~active)))


def _gene_scores(ds: SurvivalDataset, transform=None):
    """max_k |sum_i w_i u_ik t(y_i)| per gene on the normalized scale."""
    best = 0.0
    for j in range(1, ds.p + 1):
        design, y_norm = normalize(build_design(ds, j), ds.y, ds.weights)
        t = y_norm if transform is None else transform(y_norm)
        scores = np.abs(design.U.T @ (ds.weights * t))
        scores[~design.active] = 0.0
        best = max(best, float(scores.max()))
    return best


def wls_lambda_max(ds: SurvivalDataset) -> float:
    """Smallest lam that zeroes every gene's weighted-LS lasso solution:
    max_j |U_j' W y|_inf on the normalized scale."""
    return _gene_scores(ds)


def quantile_lambda_max(ds: SurvivalDataset, tau: float) -> float:
    """Smallest lam that zeroes every smoothed check-loss lasso solution
    (bandwidth taken at the zero fit)."""

    def psi(y_norm):
        h = quantile_bandwidth(y_norm, y_norm.shape[0])
        return (tau - 0.5) + np.clip(y_norm / (2.0 * h), -0.5, 0.5)

    return _gene_scores(ds, transform=psi)


def _baseline_grid(lambda_max: float, n_lambda: int, theta_value: float) -> TuningGrid:
    # a hair of headroom: the kernel's sequential score sums can exceed the
    # vectorized lambda_max by a few ulp
    lambda_max = lambda_max * (1.0 + 1e-12)
    lambdas = np.geomspace(lambda_max, lambda_max / 1000.0, n_lambda)[None, :]
    prov = GridProvenance(lambda_max=np.array([lambda_max]),
                          lambda_min=np.array([lambda_max / 1000.0]),
                          theta_low=theta_value, theta_high=theta_value,
                          n_lambda=n_lambda, n_theta=1)
    return TuningGrid(lambdas=lambdas, thetas=np.array([theta_value]),
                      provenance=prov)


def unrobust_grid(ds: SurvivalDataset, n_lambda: int = 50) -> TuningGrid:
    return _baseline_grid(wls_lambda_max(ds), n_lambda, math.inf)


def quantile_grid(ds: SurvivalDataset, tau: float, n_lambda: int = 50) -> TuningGrid:
    return _baseline_grid(quantile_lambda_max(ds, tau), n_lambda, math.nan)


def _fit_paths(ds, grid, method, fit_one, threads):
    gene_list = list(range(1, ds.p + 1))
    d = 2 * ds.q + 2
    surface = _alloc_surface(grid, gene_list, d, method)

    def task(slot_gene):
        slot, gene = slot_gene
        design, y_norm = normalize(build_design(ds, gene), ds.y, ds.weights)
        zeta = np.zeros(d)
        for l, lam in enumerate(grid.lambdas_for(0)):
            fit = fit_one(y_norm, design, float(lam), zeta)
            zeta = fit.zeta_normalized
            surface.coefs[slot, 0, l] = fit.zeta
            surface.coefs_normalized[slot, 0, l] = zeta
            surface.objective[slot, 0, l] = fit.objective
            surface.iterations[slot, 0, l] = fit.iterations
            surface.converged[slot, 0, l] = fit.converged
            surface.kkt[slot, 0, l] = fit.kkt_residual

    jobs = list(enumerate(gene_list))
    if threads is None or threads <= 1 or len(jobs) == 1:
        for job in jobs:
            task(job)
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            list(pool.map(task, jobs))
    return surface


def fit_unrobust_surface(ds: SurvivalDataset, grid: TuningGrid | None = None,
                         *, n_lambda: int = 50, threads=None) -> SolutionSurface:
    """Weighted-LS lasso path for every gene (warm-started along lambda)."""
    if grid is None:
        grid = unrobust_grid(ds, n_lambda)

    def fit_one(y_norm, design, lam, init):
        return wls_lasso_fit(y_norm, design.U, ds.weights, lam, init=init,
                             active=design.active, record=design.norm_record,
                             gene_index=design.gene_index)

    return _fit_paths(ds, grid, "unrobust", fit_one, threads)


def fit_quantile_surface(ds: SurvivalDataset, tau: float = 0.5,
                         grid: TuningGrid | None = None, *, n_lambda: int = 50,
                         threads=None) -> SolutionSurface:
    """Smoothed check-loss lasso path for every gene."""
    if grid is None:
        grid = quantile_grid(ds, tau, n_lambda)

    def fit_one(y_norm, design, lam, init):
        return quantile_lasso_fit(y_norm, design.U, ds.weights, tau, lam,
                                  init=init, active=design.active,
                                  record=design.norm_record,
                                  gene_index=design.gene_index)

    surface = _fit_paths(ds, grid, "quantile", fit_one, threads)
    surface.extras["tau"] = tau
    return surface


def fit_stute(ds: SurvivalDataset, threads=None) -> list[StuteFit]:
    """Stute fits for every gene; singular genes get p-values of 1 (ranked
    last) and a zero coefficient vector."""
    d = 2 * ds.q + 2
    results: list[StuteFit | None] = [None] * ds.p

    def task(j):
        design = build_design(ds, j)
        try:
            results[j - 1] = stute_fit(ds.y, design.U, ds.weights, gene_index=j)
        except SingularDesignError:
            log.warning("gene %d: singular weighted design, ranked last", j)
            results[j - 1] = StuteFit(gene_index=j, zeta=np.zeros(d),
                                      p_values=np.ones(ds.q),
                                      standard_errors=np.full(ds.q, np.inf))

    jobs = list(range(1, ds.p + 1))
    if threads is None or threads <= 1:
        for j in jobs:
            task(j)
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            list(pool.map(task, jobs))
    return results  # type: ignore[return-value]
