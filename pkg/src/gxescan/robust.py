"""Robust marginal fitting with the exponential squared loss.

For one gene the penalized objective is

    L(zeta) = sum_i w_i * exp(-(y_i - u_i'zeta)^2 / theta) - lam * |zeta|_1,

maximized over the normalized design by cyclic coordinate descent.  The
exact diagonal second derivative of the loss can be positive, so each
coordinate step replaces it with the non-positive minorizing curvature
-2*sum(w*u_k^2*exp(-r^2/theta))/theta; the step is a Newton move on that
minorant followed by soft-thresholding, which keeps every accepted update
an ascent step.  theta controls how aggressively large residuals are
down-weighted; lam controls sparsity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import (SurvivalDataset, build_design, coef_names, normalize,
                   to_original_scale)

__all__ = [
    "RobustTuning",
    "MarginalFit",
    "TuningGrid",
    "SolutionSurface",
    "SolverDivergedError",
    "RefitError",
    "exp_sq_loss",
    "grad_and_mm_curvature",
    "cd_mm_fit",
    "grid_from_data",
    "fit_surface",
    "kkt_check",
    "refit_hierarchy",
]

log = logging.getLogger(__name__)

INNER_TOL = 1e-3       # per-coordinate stopping threshold
OUTER_TOL = 1e-4       # L2 threshold on a full sweep; tighter than the
                       # inner threshold so cross-coordinate coupling
                       # cannot leave more than ~1e-3 per-coefficient error
MAX_SWEEPS = 500
KKT_SCALE = 1e-3       # converged fits must have kkt_residual <= KKT_SCALE * n


class SolverDivergedError(RuntimeError):
    """Non-finite objective during iteration; carries a trace summary."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class RefitError(RuntimeError):
    """The restricted hierarchy refit failed; the penalized fit stands."""


@dataclass(frozen=True)
class RobustTuning:
    """Tuning pair: theta (> 0, robustness) and lam (>= 0, penalty)."""

    theta: float
    lam: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")


@dataclass
class MarginalFit:
    """One gene's fitted coefficients with convergence diagnostics.

    zeta is on the original data scale (intercept first), zeta_normalized
    on the solver's normalized scale (intercept pinned at 0); the two are
    linked through the design's NormRecord.  converged implies
    kkt_residual <= KKT_SCALE * n.
    """

    gene_index: int
    zeta: np.ndarray
    zeta_normalized: np.ndarray
    tuning: object
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    inactive_cols: tuple[int, ...] = (0,)

    @property
    def active(self) -> np.ndarray:
        mask = np.ones(self.zeta_normalized.shape[0], dtype=bool)
        mask[list(self.inactive_cols)] = False
        return mask


@dataclass(frozen=True)
class GridProvenance:
    lambda_max: np.ndarray  # per theta slice
    lambda_min: np.ndarray
    theta_low: float
    theta_high: float
    n_lambda: int
    n_theta: int


@dataclass(frozen=True)
class TuningGrid:
    """Per-theta decreasing lam ladders and increasing theta values.

    lambdas has shape (n_theta, n_lambda): the penalty scale that zeroes
    every fit depends on theta (the loss gradients carry the exponential
    down-weighting), so each theta slice gets its own ladder, spanning
    lambda_max(theta) down to lambda_max(theta)/1000.
    """

    lambdas: np.ndarray
    thetas: np.ndarray
    provenance: GridProvenance | None = None

    def __post_init__(self):
        if self.lambdas.ndim != 2 or self.lambdas.shape[0] != self.thetas.shape[0]:
            raise ValueError("lambdas must have shape (n_theta, n_lambda)")

    @property
    def n_lambda(self) -> int:
        return self.lambdas.shape[1]

    @property
    def n_theta(self) -> int:
        return self.thetas.shape[0]

    def lambdas_for(self, theta_idx: int) -> np.ndarray:
        return self.lambdas[theta_idx]


def exp_sq_loss(zeta, y, U, w, theta) -> float:
    """Exponential squared loss sum_i w_i exp(-(y_i - u_i'zeta)^2/theta)."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    r = y - U @ zeta
    return float(w @ np.exp(-r * r / theta))


def grad_and_mm_curvature(zeta, k, y, U, w, theta):
    """First derivative of the loss in coordinate k and the minorizing
    curvature (the non-positive surrogate replacing the exact second
    derivative, which can change sign)."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    r = y - U @ zeta
    e = np.exp(-r * r / theta)
    uk = U[:, k]
    grad = 2.0 * float((w * uk * r) @ e) / theta
    curv = -2.0 * float((w * uk * uk) @ e) / theta
    return grad, curv


def _grad_vector(zeta, y, U, w, theta):
    r = y - U @ zeta
    e = w * r * np.exp(-r * r / theta)
    return 2.0 * (U.T @ e) / theta


def _kkt_violation(grads, zeta, active, lam):
    v = np.where(zeta != 0.0,
                 np.abs(grads - lam * np.sign(zeta)),
                 np.maximum(np.abs(grads) - lam, 0.0))
    v[~active] = 0.0
    return float(v.max(initial=0.0))


def kkt_check(fit: MarginalFit, y, U, w) -> float:
    """Max stationarity violation of the penalized objective at the fit,
    computed from the numpy gradient (independent of the solver kernel):
    |grad_k - lam*sign(zeta_k)| on nonzero coordinates, max(0, |grad_k| - lam)
    on zero ones."""
    grads = _grad_vector(fit.zeta_normalized, y, U, w, fit.tuning.theta)
    return _kkt_violation(grads, fit.zeta_normalized, fit.active, fit.tuning.lam)


def cd_mm_fit(y, U, w, tuning: RobustTuning, init=None, *, active=None,
              record=None, gene_index=0, max_sweeps=MAX_SWEEPS,
              objective_trace=None) -> MarginalFit:
    """Coordinate-descent fit of the penalized exponential squared loss.

    Expects normalized data (weighted-centered y; non-intercept columns
    weighted-centered with weighted sum of squares n).  `active` masks the
    penalized coordinates (default: all but column 0); `record` maps the
    solution back to the original scale.  The per-coordinate loop stops at
    |step| <= 1e-3, the sweep loop at L2 movement <= 1e-3, with a hard cap
    of `max_sweeps` sweeps; a fit is flagged converged only if its KKT
    residual is also <= 1e-3*n.

    Raises SolverDivergedError if the objective becomes non-finite.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, d = U.shape
    if y.shape[0] != n or w.shape[0] != n:
        raise ValueError("y, U, w must have matching row counts")
    if active is None:
        active = np.ones(d, dtype=bool)
        active[0] = False
    active = np.ascontiguousarray(active, dtype=np.bool_)
    zeta = np.zeros(d) if init is None else np.array(init, dtype=np.float64)
    zeta[~active] = 0.0
    trace = np.empty(max_sweeps) if objective_trace is None else objective_trace

    status, sweeps, converged, kkt, obj = _kernels.cd_mm(
        y, U, w, tuning.lam, tuning.theta, zeta, active,
        INNER_TOL, OUTER_TOL, max_sweeps, KKT_SCALE * n, trace)
    if status == _kernels.DIVERGED:
        raise SolverDivergedError(
            f"objective became non-finite after {sweeps} sweeps "
            f"(theta={tuning.theta:g}, lam={tuning.lam:g}); "
            f"trace tail {trace[max(0, sweeps - 3):sweeps]}",
            trace=trace[:sweeps].copy())

    zeta_orig = to_original_scale(zeta, record) if record is not None else zeta.copy()
    return MarginalFit(gene_index=gene_index, zeta=zeta_orig,
                       zeta_normalized=zeta, tuning=tuning,
                       objective=float(obj), iterations=int(sweeps),
                       converged=bool(converged), kkt_residual=float(kkt),
                       inactive_cols=tuple(np.flatnonzero(~active)))


def centered_response(ds: SurvivalDataset) -> np.ndarray:
    """y minus its Kaplan-Meier-weighted mean."""
    w = ds.weights
    return ds.y - float(w @ ds.y / w.sum())


def grid_from_data(ds: SurvivalDataset, n_lambda: int = 50,
                   n_theta: int = 10) -> TuningGrid:
    """Tuning grid from the data.

    theta spans (min_i y_i^2/100, max_i y_i^2*100) for the weighted-
    centered response, log-spaced; exact zeros are excluded from the
    lower bound.  For each theta the lam ladder runs from
    lambda_max(theta) = 20 * max_j |U_j' W(theta) y|_inf down to
    lambda_max(theta)/1000, log-spaced, where W(theta) holds the
    per-subject gradient weights of the exponential squared loss at the
    zero solution, 2*w_i*exp(-y_i^2/theta)/theta.  The 20x inflation
    covers the drift of those weights along the path, so the lambda_max
    column is a safe zeroing bound at every theta (violations are logged
    downstream, never hidden).
    """
    if n_lambda < 2:
        raise ValueError("n_lambda must be at least 2")
    if n_theta < 1:
        raise ValueError("n_theta must be at least 1")

    yc = centered_response(ds)
    ysq = yc * yc
    floor = (1e-10 * max(1.0, float(np.abs(ds.y).max()))) ** 2
    pos = ysq[ysq > floor]
    if pos.size == 0:
        raise ValueError("degenerate data: response is constant after centering")
    theta_low = float(pos.min()) / 100.0
    theta_high = float(ysq.max()) * 100.0
    thetas = np.geomspace(theta_low, theta_high, n_theta) if n_theta > 1 \
        else np.array([math.sqrt(theta_low * theta_high)])

    score_max = np.zeros(thetas.shape[0])
    for j in range(1, ds.p + 1):
        design, y_norm = normalize(build_design(ds, j), ds.y, ds.weights)
        # gradient weights at zeta = 0, one column per theta
        V = (2.0 / thetas) * ds.weights[:, None] * y_norm[:, None] \
            * np.exp(-np.outer(y_norm * y_norm, 1.0 / thetas))
        scores = np.abs(design.U.T @ V)
        scores[~design.active] = 0.0
        np.maximum(score_max, scores.max(axis=0), out=score_max)
    if not np.all(score_max > 0.0):
        score_max = np.maximum(score_max, 1e-250)  # dead slices keep a valid ladder
    lambda_max = 20.0 * score_max
    lambda_min = lambda_max / 1000.0
    lambdas = np.geomspace(lambda_max, lambda_min, n_lambda, axis=1)

    prov = GridProvenance(lambda_max=lambda_max, lambda_min=lambda_min,
                          theta_low=theta_low, theta_high=theta_high,
                          n_lambda=n_lambda, n_theta=n_theta)
    return TuningGrid(lambdas=lambdas, thetas=thetas, provenance=prov)


def grid_for_theta(ds: SurvivalDataset, theta: float,
                   n_lambda: int = 50) -> TuningGrid:
    """Single-theta grid with the lam ladder computed at that theta."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    score_max = 0.0
    for j in range(1, ds.p + 1):
        design, y_norm = normalize(build_design(ds, j), ds.y, ds.weights)
        v = (2.0 / theta) * ds.weights * y_norm * np.exp(-y_norm * y_norm / theta)
        scores = np.abs(design.U.T @ v)
        scores[~design.active] = 0.0
        score_max = max(score_max, float(scores.max()))
    lambda_max = 20.0 * max(score_max, 1e-250)
    lambdas = np.geomspace(lambda_max, lambda_max / 1000.0, n_lambda)[None, :]
    prov = GridProvenance(lambda_max=np.array([lambda_max]),
                          lambda_min=np.array([lambda_max / 1000.0]),
                          theta_low=theta, theta_high=theta,
                          n_lambda=n_lambda, n_theta=1)
    return TuningGrid(lambdas=lambdas, thetas=np.array([float(theta)]),
                      provenance=prov)


@dataclass
class SolutionSurface:
    """Fits for every gene over the (lam, theta) grid, array-backed.

    coefs / coefs_normalized have shape (genes, n_theta, n_lambda, 2q+2);
    diagnostics share the leading three axes.  `fit` materializes one
    MarginalFit.  At the lambda_max column every normalized solution is
    the zero vector (violations are logged by fit_surface, not hidden).
    """

    grid: TuningGrid
    gene_indices: tuple[int, ...]
    coef_labels: tuple[str, ...]
    coefs: np.ndarray
    coefs_normalized: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    kkt: np.ndarray
    method: str = "robust"
    extras: dict = field(default_factory=dict)

    @property
    def n_genes(self) -> int:
        return len(self.gene_indices)

    def _gene_slot(self, gene: int) -> int:
        try:
            return self.gene_indices.index(gene)
        except ValueError:
            raise KeyError(f"gene {gene} not in surface") from None

    def fit(self, gene: int, lambda_idx: int, theta_idx: int = 0) -> MarginalFit:
        s = self._gene_slot(gene)
        theta = float(self.grid.thetas[theta_idx])
        lam = float(self.grid.lambdas[theta_idx, lambda_idx])
        tuning = RobustTuning(theta=theta, lam=lam) if self.method == "robust" \
            else _BaselineTuning(theta=theta, lam=lam)
        return MarginalFit(
            gene_index=gene,
            zeta=self.coefs[s, theta_idx, lambda_idx].copy(),
            zeta_normalized=self.coefs_normalized[s, theta_idx, lambda_idx].copy(),
            tuning=tuning,
            objective=float(self.objective[s, theta_idx, lambda_idx]),
            iterations=int(self.iterations[s, theta_idx, lambda_idx]),
            converged=bool(self.converged[s, theta_idx, lambda_idx]),
            kkt_residual=float(self.kkt[s, theta_idx, lambda_idx]))

    def interaction_paths(self, theta_idx: int = 0) -> np.ndarray:
        """Normalized interaction coefficients, shape (genes, n_lambda, q)."""
        d = self.coefs_normalized.shape[-1]
        q = (d - 2) // 2
        return self.coefs_normalized[:, theta_idx, :, d - q:]

    def to_csv(self, path) -> None:
        """Long-format CSV:
        method,gene,lambda_idx,theta_idx,coef_name,value,converged,kkt_residual."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method,gene,lambda_idx,theta_idx,coef_name,value,"
                     "converged,kkt_residual\n")
            for s, gene in enumerate(self.gene_indices):
                for t in range(self.grid.n_theta):
                    for l in range(self.grid.n_lambda):
                        conv = int(self.converged[s, t, l])
                        kkt = format(float(self.kkt[s, t, l]), ".17g")
                        for c, name in enumerate(self.coef_labels):
                            val = format(float(self.coefs[s, t, l, c]), ".17g")
                            fh.write(f"{self.method},{gene},{l},{t},{name},"
                                     f"{val},{conv},{kkt}\n")


@dataclass(frozen=True)
class _BaselineTuning:
    """Tuning record for baseline paths (theta is inf or nan there)."""

    theta: float
    lam: float


def _alloc_surface(grid, gene_indices, d, method) -> SolutionSurface:
    g, t, l = len(gene_indices), grid.n_theta, grid.n_lambda
    return SolutionSurface(
        grid=grid, gene_indices=tuple(gene_indices),
        coef_labels=coef_names((d - 2) // 2),
        coefs=np.zeros((g, t, l, d)), coefs_normalized=np.zeros((g, t, l, d)),
        objective=np.zeros((g, t, l)), iterations=np.zeros((g, t, l), dtype=np.int32),
        converged=np.zeros((g, t, l), dtype=bool), kkt=np.zeros((g, t, l)),
        method=method)


def _fit_gene_paths(surface, slot, design, y_norm, w, cold_start, max_sweeps):
    """All (theta, lambda) fits for one gene, warm-started along lambda.

    Returns the number of (theta,) slices whose lambda_max fit moved off
    zero (upper-bound violations, aggregated and logged by the caller).
    """
    grid = surface.grid
    d = design.U.shape[1]
    trace = np.empty(max_sweeps)
    violations = 0
    for t, theta in enumerate(grid.thetas):
        zeta = np.zeros(d)
        for l, lam in enumerate(grid.lambdas_for(t)):
            init = None if cold_start else zeta
            fit = cd_mm_fit(y_norm, design.U, w,
                            RobustTuning(theta=float(theta), lam=float(lam)),
                            init=init, active=design.active,
                            record=design.norm_record,
                            gene_index=design.gene_index,
                            max_sweeps=max_sweeps, objective_trace=trace)
            zeta = fit.zeta_normalized
            if l == 0 and np.any(zeta != 0.0):
                violations += 1
            surface.coefs[slot, t, l] = fit.zeta
            surface.coefs_normalized[slot, t, l] = zeta
            surface.objective[slot, t, l] = fit.objective
            surface.iterations[slot, t, l] = fit.iterations
            surface.converged[slot, t, l] = fit.converged
            surface.kkt[slot, t, l] = fit.kkt_residual
    return violations


def fit_surface(ds: SurvivalDataset, grid: TuningGrid, *, threads: int | None = None,
                cold_start: bool = False, genes=None,
                max_sweeps: int = MAX_SWEEPS) -> SolutionSurface:
    """Fit every gene over the whole grid.

    For each gene and theta, fits proceed along decreasing lambda with the
    previous solution as warm start (the lambda_max fit starts from zero);
    `cold_start=True` starts every fit from zero instead.  Genes run in
    parallel when `threads` > 1; the result is identical for any thread
    count.  Divergent fits are flagged (converged=False, kkt=inf) without
    aborting the surface.
    """
    gene_list = list(range(1, ds.p + 1)) if genes is None else list(genes)
    d = 2 * ds.q + 2
    surface = _alloc_surface(grid, gene_list, d, "robust")
    violations = np.zeros(len(gene_list), dtype=np.int64)

    def task(slot_gene):
        slot, gene = slot_gene
        design, y_norm = normalize(build_design(ds, gene), ds.y, ds.weights)
        try:
            violations[slot] = _fit_gene_paths(surface, slot, design, y_norm,
                                               ds.weights, cold_start, max_sweeps)
        except SolverDivergedError as exc:
            log.warning("gene %d: %s", gene, exc)
            surface.converged[slot] = False
            surface.kkt[slot] = np.inf

    jobs = list(enumerate(gene_list))
    if threads is None or threads <= 1 or len(jobs) == 1:
        for job in jobs:
            task(job)
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            list(pool.map(task, jobs))
    total = int(violations.sum())
    if total:
        log.warning(
            "lambda_max upper bound violated in %d of %d (gene, theta) paths "
            "(nonzero fit at the top of the ladder; grid may need extending)",
            total, len(gene_list) * grid.n_theta)
    return surface


def refit_hierarchy(fit: MarginalFit, ds: SurvivalDataset, j: int) -> np.ndarray:
    """Unpenalized robust refit on the hierarchy-respecting subspace.

    Re-maximizes the exponential squared loss (lam=0, same theta) over the
    intercept, all environmental main effects, the gene main effect and
    exactly the interactions selected in `fit`; every other coordinate
    stays 0.  Initialized at the penalized solution, so the refit loss is
    never below the penalized fit's.  Returns original-scale coefficients;
    interactions that fall to zero in the refit are logged as dropped.
    """
    design, y_norm = normalize(build_design(ds, j), ds.y, ds.weights)
    d = design.U.shape[1]
    q = ds.q
    selected = [k for k in range(d - q, d) if fit.zeta_normalized[k] != 0.0]
    active = np.zeros(d, dtype=bool)
    active[1:q + 2] = True           # env mains + gene main
    active[selected] = True
    active &= design.active          # degenerate columns stay out

    init = np.where(active, fit.zeta_normalized, 0.0)
    tuning = RobustTuning(theta=fit.tuning.theta, lam=0.0)
    try:
        refit = cd_mm_fit(y_norm, design.U, ds.weights, tuning, init=init,
                          active=active, record=design.norm_record,
                          gene_index=j)
    except SolverDivergedError as exc:
        raise RefitError(f"hierarchy refit diverged for gene {j}: {exc}") from exc
    dropped = [k for k in selected if refit.zeta_normalized[k] == 0.0]
    if dropped:
        log.warning("gene %d: interactions dropped at refit: %s", j,
                    [design.column_roles[k] for k in dropped])
    return refit.zeta
