"""Interaction-identification scoring and the multi-method experiment
harness: path-based ROC/AUC, replicate experiments, fixed-count selection,
leave-one-out stability and method-overlap tables.

Penalized methods rank each (gene, env) pair by entry order on the lambda
path: the largest lambda at which its interaction coefficient is nonzero,
ties broken by |coefficient| at lambda_min, then by index.  The Stute
method ranks by p-value.  AUC is computed over the 10 true pairs against
the p*q-10 nulls with a trapezoid rule over all distinct score levels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import (StuteFit, fit_quantile_surface, fit_stute,
                        fit_unrobust_surface, quantile_lasso_fit,
                        wls_lasso_fit)
from .data import SurvivalDataset, build_design, normalize
from .robust import (RobustTuning, SolutionSurface, cd_mm_fit, fit_surface,
                     grid_for_theta, grid_from_data)
from .sim import GroundTruth, ScenarioConfig, gen_dataset

__all__ = [
    "InteractionRanking",
    "ExperimentReport",
    "ExperimentError",
    "rank_interactions",
    "roc_auc",
    "run_experiment",
    "cv_select_theta",
    "select_top_k",
    "stability_loo",
    "overlap_table",
    "OverlapTable",
]

log = logging.getLogger(__name__)

METHODS = ("robust", "unrobust", "stute", "quantile")

TIE_POLICY = ("entry-lambda desc, then |coef at lambda_min| desc, "
              "then (gene, env) asc")


class ExperimentError(RuntimeError):
    """Too many replicate failures to report an experiment."""


@dataclass
class InteractionRanking:
    """All p*q candidate (gene, env) pairs, ordered best-first.

    Scores are non-increasing down the list; genuinely tied pairs share a
    score level, so downstream ROC sweeps treat them as one block.
    """

    pairs: list[tuple[int, int]]
    scores: np.ndarray
    method: str
    tie_policy: str = TIE_POLICY


def _levelled_ranking(keys, pairs, method) -> InteractionRanking:
    """Order pairs by the descending sort keys; equal keys share a score."""
    order = sorted(range(len(pairs)),
                   key=lambda i: (tuple(-x for x in keys[i]), pairs[i]))
    scores = np.empty(len(pairs))
    level = -1
    prev = None
    for rank, i in enumerate(order):
        if keys[i] != prev:
            level += 1
            prev = keys[i]
        scores[rank] = -level
    return InteractionRanking(pairs=[pairs[i] for i in order],
                              scores=scores, method=method)


def rank_interactions(source, theta_idx: int = 0) -> InteractionRanking:
    """Rank every (gene, env) pair for one method's output.

    `source` is a SolutionSurface (penalized methods; `theta_idx` picks
    the slice) or a list of StuteFit.  Pairs never selected on the path
    rank below all selected ones, ordered by |coef| at lambda_min.
    """
    if isinstance(source, SolutionSurface):
        surface = source
        if surface.n_genes == 0:
            raise ValueError("empty surface")
        lambdas = surface.grid.lambdas_for(theta_idx)
        paths = surface.interaction_paths(theta_idx)  # (genes, L, q)
        genes, L, q = paths.shape
        pairs = []
        keys = []
        nz = paths != 0.0
        entry_idx = np.where(nz.any(axis=1), nz.argmax(axis=1), L)  # (genes, q)
        coef_min = np.abs(paths[:, -1, :])
        for s, gene in enumerate(surface.gene_indices):
            for e in range(q):
                entry = lambdas[entry_idx[s, e]] if entry_idx[s, e] < L else 0.0
                pairs.append((gene, e + 1))
                keys.append((float(entry), float(coef_min[s, e])))
        return _levelled_ranking(keys, pairs, surface.method)

    fits: list[StuteFit] = list(source)
    if not fits:
        raise ValueError("no fits to rank")
    pairs = []
    keys = []
    for fit in fits:
        q = fit.p_values.shape[0]
        d = fit.zeta.shape[0]
        for e in range(q):
            se = fit.standard_errors[e]
            z = abs(fit.zeta[d - q + e]) / se if se > 0 and math.isfinite(se) else 0.0
            pairs.append((fit.gene_index, e + 1))
            keys.append((1.0 - float(fit.p_values[e]), float(z)))
    return _levelled_ranking(keys, pairs, "stute")


def roc_auc(ranking: InteractionRanking, truth: GroundTruth):
    """ROC points and trapezoid AUC of a ranking against the truth.

    Thresholds sweep all distinct score levels; TPR counts the true
    interaction pairs, FPR the rest.  Returns (points, auc) with points an
    (m, 2) array of (fpr, tpr) including (0,0) and (1,1).
    """
    positives = set(truth.interaction_pairs)
    if not positives:
        raise ValueError("truth has no interactions: AUC undefined")
    missing = positives.difference(ranking.pairs)
    if missing:
        raise ValueError(f"truth pairs missing from candidates: {sorted(missing)[:3]}")
    n_pos = len(positives)
    n_neg = len(ranking.pairs) - n_pos
    if n_neg == 0:
        raise ValueError("no null pairs: FPR undefined")

    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    m = len(ranking.pairs)
    while i < m:
        j = i
        while j < m and ranking.scores[j] == ranking.scores[i]:
            if ranking.pairs[j] in positives:
                tp += 1
            else:
                fp += 1
            j += 1
        fpr.append(fp / n_neg)
        tpr.append(tp / n_pos)
        i = j
    pts = np.column_stack([fpr, tpr])
    auc = float(np.trapezoid(pts[:, 1], pts[:, 0]))
    return pts, auc


# ---------------------------------------------------------------------------
# experiment harness
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    """Per-method mean/sd AUC for one scenario over the kept replicates."""

    scenario: ScenarioConfig
    methods: tuple[str, ...]
    mean_auc: dict[str, float]
    sd_auc: dict[str, float]
    replicates: int
    failures: int = 0
    per_theta_auc: dict[str, list] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("scenario,method,mean_auc,sd_auc,replicates\n")
            label = scenario_id(self.scenario)
            for m in self.methods:
                fh.write(f"{label},{m},{self.mean_auc[m]:.17g},"
                         f"{self.sd_auc[m]:.17g},{self.replicates}\n")

    def to_text(self) -> str:
        """Plain-text table in the AUCx100 (sd) layout."""
        corr = self.scenario.correlation_label()
        width = max(len(m) for m in self.methods)
        lines = [f"{'Error':<18} {'Method':<{width}} {corr}"]
        err = self.scenario.error_label()
        for i, m in enumerate(self.methods):
            cell = f"{100 * self.mean_auc[m]:.1f}({100 * self.sd_auc[m]:.1f})"
            lines.append(f"{err if i == 0 else '':<18} {m:<{width}} {cell}")
        return "\n".join(lines) + "\n"


def scenario_id(sc: ScenarioConfig) -> str:
    corr = sc.correlation if sc.correlation == "independent" \
        else f"{sc.correlation}:{sc.rho:g}"
    err = "normal" if sc.contamination == 0.0 \
        else f"mix:{sc.error}:{sc.contamination:g}"
    return (f"n={sc.n};p={sc.p};q={sc.q};corr={corr};error={err};"
            f"cens={sc.target_censoring:g};seed={sc.seed}")


def _mean_sd(values):
    m = len(values)
    mean = math.fsum(values) / m
    if m < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (m - 1)
    return mean, math.sqrt(var)


def method_aucs(ds: SurvivalDataset, truth: GroundTruth, methods, *,
                n_lambda=50, n_theta=10, tau=0.5, threads=None):
    """AUC per method on one dataset.  For the robust method the reported
    AUC is the max over theta slices; per-theta values are returned
    alongside."""
    aucs: dict[str, float] = {}
    per_theta: dict[str, list] = {}
    for method in methods:
        if method == "robust":
            grid = grid_from_data(ds, n_lambda=n_lambda, n_theta=n_theta)
            surface = fit_surface(ds, grid, threads=threads)
            slice_aucs = []
            for t in range(grid.n_theta):
                _, a = roc_auc(rank_interactions(surface, theta_idx=t), truth)
                slice_aucs.append(a)
            aucs[method] = max(slice_aucs)
            per_theta[method] = slice_aucs
        elif method == "unrobust":
            surface = fit_unrobust_surface(ds, n_lambda=n_lambda, threads=threads)
            _, aucs[method] = roc_auc(rank_interactions(surface), truth)
        elif method == "quantile":
            surface = fit_quantile_surface(ds, tau=tau, n_lambda=n_lambda,
                                           threads=threads)
            _, aucs[method] = roc_auc(rank_interactions(surface), truth)
        elif method == "stute":
            fits = fit_stute(ds, threads=threads)
            _, aucs[method] = roc_auc(rank_interactions(fits), truth)
        else:
            raise ValueError(f"unknown method {method!r}")
    return aucs, per_theta


def run_experiment(scenario: ScenarioConfig, methods=METHODS,
                   replicates: int = 100, *, n_lambda=50, n_theta=10,
                   tau=0.5, threads=None, collect_per_theta=False) -> ExperimentReport:
    """Mean and sd of the identification AUC over replicate datasets.

    Replicates failing with a solver or generation error are excluded with
    a warning as long as they stay under 10% of the total; beyond that the
    experiment errors out.  Deterministic in (scenario.seed, replicates)
    for any thread count.
    """
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    methods = tuple(methods)
    per_method: dict[str, list] = {m: [] for m in methods}
    per_theta_all: dict[str, list] = {m: [] for m in methods}
    failures = 0
    for r in range(replicates):
        try:
            ds, truth = gen_dataset(scenario, replicate=r)
            aucs, per_theta = method_aucs(ds, truth, methods, n_lambda=n_lambda,
                                          n_theta=n_theta, tau=tau, threads=threads)
        except Exception as exc:  # noqa: BLE001 - per-replicate isolation
            failures += 1
            log.warning("replicate %d failed: %s", r, exc)
            if failures >= 0.1 * replicates:
                raise ExperimentError(
                    f"{failures} of {replicates} replicates failed; "
                    f"last error: {exc}") from exc
            continue
        for m in methods:
            per_method[m].append(aucs[m])
            if m in per_theta and per_theta.get(m):
                per_theta_all[m].append(per_theta[m])

    mean_auc, sd_auc = {}, {}
    for m in methods:
        mean_auc[m], sd_auc[m] = _mean_sd(per_method[m])
    report = ExperimentReport(scenario=scenario, methods=methods,
                              mean_auc=mean_auc, sd_auc=sd_auc,
                              replicates=replicates - failures,
                              failures=failures)
    if collect_per_theta:
        report.per_theta_auc = per_theta_all
    return report


# ---------------------------------------------------------------------------
# tuning selection for data analysis
# ---------------------------------------------------------------------------

def _km_subset(ds: SurvivalDataset, rows: np.ndarray) -> SurvivalDataset:
    return ds.subset(rows)


def cv_select_theta(ds: SurvivalDataset, *, n_lambda=20, n_theta=10,
                    folds=5, threads=None) -> float:
    """theta minimizing the 5-fold cross-validated weighted prediction
    error, summed over genes and folds, minimized over the lambda path.

    Folds are strides over the sorted dataset (i mod folds), so the split
    is deterministic and balanced across the observed-time range.
    Validation error uses the validation subset's own Kaplan-Meier
    weights and original-scale predictions.
    """
    grid = grid_from_data(ds, n_lambda=n_lambda, n_theta=n_theta)
    idx = np.arange(ds.n)
    err = np.zeros((grid.n_theta, grid.n_lambda))
    for v in range(folds):
        val_rows = idx[idx % folds == v]
        train_rows = idx[idx % folds != v]
        train = _km_subset(ds, train_rows)
        val = _km_subset(ds, val_rows)
        surface = fit_surface(train, grid, threads=threads)
        for s, gene in enumerate(surface.gene_indices):
            design = build_design(val, gene)
            pred = design.U @ surface.coefs[s].reshape(-1, design.U.shape[1]).T
            resid = val.y[:, None] - pred
            fold_err = val.weights @ (resid * resid)
            err += fold_err.reshape(grid.n_theta, grid.n_lambda)
    best_theta_idx = int(err.min(axis=1).argmin())
    return float(grid.thetas[best_theta_idx])


def _interaction_pairs_of(surface_like_coefs, gene_indices, q):
    pairs = set()
    d = surface_like_coefs.shape[-1]
    for s, gene in enumerate(gene_indices):
        for e in range(q):
            if surface_like_coefs[s, d - q + e] != 0.0:
                pairs.add((gene, e + 1))
    return pairs


def _fit_all_genes_at(ds, method, lam, theta, tau, inits):
    """One fit per gene at a single penalty; returns (coefs, pairs)."""
    d = 2 * ds.q + 2
    coefs = np.zeros((ds.p, d))
    for j in range(1, ds.p + 1):
        design, y_norm = normalize(build_design(ds, j), ds.y, ds.weights)
        init = inits[j - 1] if inits is not None else None
        if method == "robust":
            fit = cd_mm_fit(y_norm, design.U, ds.weights,
                            RobustTuning(theta=theta, lam=lam), init=init,
                            active=design.active, record=design.norm_record,
                            gene_index=j)
        elif method == "unrobust":
            fit = wls_lasso_fit(y_norm, design.U, ds.weights, lam, init=init,
                                active=design.active, record=design.norm_record,
                                gene_index=j)
        else:
            fit = quantile_lasso_fit(y_norm, design.U, ds.weights, tau, lam,
                                     init=init, active=design.active,
                                     record=design.norm_record, gene_index=j)
        coefs[j - 1] = fit.zeta_normalized
    pairs = _interaction_pairs_of(coefs, range(1, ds.p + 1), ds.q)
    return coefs, pairs


def select_top_k(ds: SurvivalDataset, k: int, method: str = "robust", *,
                 theta: float | None = None, tau: float = 0.5,
                 n_lambda: int = 50, n_theta: int = 10,
                 threads=None) -> set[tuple[int, int]]:
    """Interactions selected under the fixed-count tuning rule.

    Stute: the k smallest interaction p-values.  Penalized methods: the
    lambda path is scanned for a grid point with exactly k active
    interactions across genes; failing that, lambda is bisected between
    the bracketing grid points (warm-started from the larger lambda's
    path solution).  If the count jumps past k, the closest achievable
    count >= k is trimmed to k by dropping the smallest |normalized
    coefficient|.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if method == "stute":
        ranking = rank_interactions(fit_stute(ds, threads=threads))
        return set(ranking.pairs[:k])

    if method == "robust":
        if theta is None:
            theta = cv_select_theta(ds, n_lambda=min(n_lambda, 20),
                                    n_theta=n_theta, threads=threads)
        surface = fit_surface(ds, grid_for_theta(ds, theta, n_lambda=n_lambda),
                              threads=threads)
    elif method == "unrobust":
        surface = fit_unrobust_surface(ds, n_lambda=n_lambda, threads=threads)
        theta = math.inf
    elif method == "quantile":
        surface = fit_quantile_surface(ds, tau=tau, n_lambda=n_lambda,
                                       threads=threads)
        theta = math.nan
    else:
        raise ValueError(f"unknown method {method!r}")

    paths = surface.coefs_normalized[:, 0]        # (genes, L, d)
    q = ds.q
    counts = (paths[:, :, -q:] != 0.0).sum(axis=(0, 2))  # per lambda index
    lambdas = surface.grid.lambdas_for(0)

    exact = np.flatnonzero(counts == k)
    if exact.size:
        l = int(exact[0])
        return _interaction_pairs_of(paths[:, l], surface.gene_indices, q)

    def trim(coefs, pairs):
        if len(pairs) <= k:
            return pairs
        mag = {}
        d = coefs.shape[-1]
        for s, gene in enumerate(surface.gene_indices):
            for e in range(q):
                if (gene, e + 1) in pairs:
                    mag[(gene, e + 1)] = abs(coefs[s, d - q + e])
        ordered = sorted(pairs, key=lambda pr: (-mag[pr], pr))
        return set(ordered[:k])

    over = np.flatnonzero(counts > k)
    if over.size == 0:
        # even lambda_min selects fewer than k: return what there is
        log.warning("only %d interactions selectable (asked for %d)",
                    int(counts[-1]), k)
        return _interaction_pairs_of(paths[:, -1], surface.gene_indices, q)
    lo_idx = int(over[0])                # first lambda index with count > k
    if lo_idx == 0:
        return trim(paths[:, 0], _interaction_pairs_of(
            paths[:, 0], surface.gene_indices, q))

    lam_hi, lam_lo = float(lambdas[lo_idx - 1]), float(lambdas[lo_idx])
    inits = paths[:, lo_idx - 1].copy()
    best_coefs, best_pairs = paths[:, lo_idx], _interaction_pairs_of(
        paths[:, lo_idx], surface.gene_indices, q)
    for _ in range(40):
        mid = 0.5 * (lam_hi + lam_lo)
        coefs, pairs = _fit_all_genes_at(ds, method, mid, theta, tau, inits)
        if len(pairs) == k:
            return pairs
        if len(pairs) > k:
            lam_lo = mid
            if len(pairs) < len(best_pairs):
                best_coefs, best_pairs = coefs, pairs
        else:
            lam_hi = mid
            inits = coefs
        if (lam_hi - lam_lo) <= 1e-10 * lambdas[0]:
            break
    return trim(best_coefs, best_pairs)


def stability_loo(ds: SurvivalDataset, k: int, method: str = "robust", *,
                  theta: float | None = None, tau: float = 0.5,
                  n_lambda: int = 50, n_theta: int = 10,
                  threads=None) -> dict[tuple[int, int], float]:
    """Leave-one-out selection frequency of the full-data selections.

    Selects the top-k interactions on the full data, then on each of the
    n reduced datasets, and returns for every full-data selection the
    fraction of reduced fits that kept it.  For the robust method the
    cross-validated theta is chosen once on the full data and reused.
    Fit failures on a reduced dataset count as non-selection.
    """
    if ds.n < 3:
        raise ValueError("need n >= 3 for leave-one-out stability")
    if method == "robust" and theta is None:
        theta = cv_select_theta(ds, n_lambda=min(n_lambda, 20),
                                n_theta=n_theta, threads=threads)
    full_sel = select_top_k(ds, k, method, theta=theta, tau=tau,
                            n_lambda=n_lambda, n_theta=n_theta, threads=threads)
    hits = {pair: 0 for pair in sorted(full_sel)}

    def reduced_selection(i):
        try:
            return select_top_k(ds.drop_row(i), k, method, theta=theta, tau=tau,
                                n_lambda=n_lambda, n_theta=n_theta)
        except Exception as exc:  # noqa: BLE001 - failures count as non-selection
            log.warning("leave-one-out fit %d failed: %s", i, exc)
            return set()

    if threads is None or threads <= 1:
        selections = [reduced_selection(i) for i in range(ds.n)]
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=min(threads, ds.n)) as pool:
            selections = list(pool.map(reduced_selection, range(ds.n)))
    for sel in selections:
        for pair in sel:
            if pair in hits:
                hits[pair] += 1
    return {pair: count / ds.n for pair, count in hits.items()}


# ---------------------------------------------------------------------------
# method overlap
# ---------------------------------------------------------------------------

@dataclass
class OverlapTable:
    """Symmetric overlap counts: diagonal = per-method set sizes,
    off-diagonal = overlapping genes with overlapping interactions in
    parentheses when rendered."""

    methods: tuple[str, ...]
    gene_counts: np.ndarray
    interaction_counts: np.ndarray

    def to_text(self) -> str:
        width = max(len(m) for m in self.methods) + 2
        head = " " * width + "".join(f"{m:>{width}}" for m in self.methods)
        lines = [head]
        for i, m in enumerate(self.methods):
            cells = []
            for j in range(len(self.methods)):
                if j < i:
                    cells.append(f"{'-':>{width}}")
                elif j == i:
                    cells.append(f"{self.gene_counts[i, i]:>{width}}")
                else:
                    txt = f"{self.gene_counts[i, j]}({self.interaction_counts[i, j]})"
                    cells.append(f"{txt:>{width}}")
            lines.append(f"{m:<{width}}" + "".join(cells))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("method_a,method_b,genes,interactions\n")
            for i, a in enumerate(self.methods):
                for j, b in enumerate(self.methods):
                    if j < i:
                        continue
                    fh.write(f"{a},{b},{self.gene_counts[i, j]},"
                             f"{self.interaction_counts[i, j]}\n")


def overlap_table(selections: dict[str, set[tuple[int, int]]]) -> OverlapTable:
    """Overlap counts between per-method interaction selections.

    `selections` maps method name to its set of (gene, env) pairs; the
    gene sets are derived from the pairs.  Diagonals are set sizes,
    off-diagonals intersection sizes.
    """
    if len(selections) < 2:
        raise ValueError("need at least two methods to compare")
    methods = tuple(selections)
    gene_sets = {m: {g for g, _ in pairs} for m, pairs in selections.items()}
    m = len(methods)
    genes = np.zeros((m, m), dtype=int)
    inter = np.zeros((m, m), dtype=int)
    for i, a in enumerate(methods):
        for j, b in enumerate(methods):
            genes[i, j] = len(gene_sets[a] & gene_sets[b]) if i != j else len(gene_sets[a])
            inter[i, j] = len(selections[a] & selections[b]) if i != j \
                else len(selections[a])
    return OverlapTable(methods=methods, gene_counts=genes,
                        interaction_counts=inter)
