"""Survival dataset construction: sorting, Kaplan-Meier weighting, per-gene
design matrices and weighted normalization.

Observations are (y, delta, x, z) with y the log observed time, delta the
event indicator (1 = event observed, 0 = right-censored), x the q
environmental/clinical covariates and z the p genetic covariates.  All
downstream estimators consume a `SurvivalDataset`, which is sorted by y and
carries the Kaplan-Meier weights that make weighted least-squares-type
estimation valid under right censoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SurvivalDataset",
    "MarginalDesign",
    "NormRecord",
    "IngestionError",
    "sort_and_weight",
    "km_weights",
    "build_design",
    "normalize",
    "load_csv",
    "write_csv",
    "write_truth_csv",
]


class IngestionError(ValueError):
    """Raised when raw observations or a CSV file fail validation."""


@dataclass(frozen=True)
class SurvivalDataset:
    """Sorted observations with Kaplan-Meier weights.

    Invariants: y is ascending with events (delta=1) before censorings at
    ties; weights[i] == 0 wherever delta[i] == 0; sum(weights) <= 1, with
    equality when the last observation is an event.  Instances are
    immutable and safe to share across concurrent per-gene fits.
    """

    y: np.ndarray
    delta: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    def drop_row(self, i: int) -> "SurvivalDataset":
        """Dataset with row i removed; weights recomputed on the remaining rows."""
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return sort_and_weight(self.y[keep], self.delta[keep],
                               self.X[keep], self.Z[keep])

    def subset(self, rows: np.ndarray) -> "SurvivalDataset":
        """Dataset restricted to the given rows; weights recomputed."""
        return sort_and_weight(self.y[rows], self.delta[rows],
                               self.X[rows], self.Z[rows])


@dataclass(frozen=True)
class NormRecord:
    """Weighted centering/scaling used to normalize one gene's design.

    Maps coefficients between the normalized and original scales exactly:
    original nonintercept coefficient = normalized coefficient * col_scale,
    original intercept = y_mean - sum(normalized * col_scale * col_mean).
    """

    y_mean: float
    col_mean: np.ndarray
    col_scale: np.ndarray


@dataclass(frozen=True)
class MarginalDesign:
    """The n x (2q+2) design for one gene: (1, x', z_j, z_j*x').

    `column_roles` tags the columns as intercept / env(k) / gene /
    interaction(k).  After `normalize`, `active` marks the penalized
    coordinates (the intercept and degenerate constant columns are
    excluded) and `norm_record` carries the back-transformation.
    """

    gene_index: int
    U: np.ndarray
    column_roles: tuple[str, ...]
    active: np.ndarray = field(default=None)
    norm_record: NormRecord | None = None

    @property
    def n_cols(self) -> int:
        return self.U.shape[1]

    @property
    def interaction_cols(self) -> np.ndarray:
        """Column indices of the gene-by-environment interaction terms."""
        return np.array([k for k, role in enumerate(self.column_roles)
                         if role.startswith("interaction")], dtype=np.intp)


def km_weights(delta: np.ndarray) -> np.ndarray:
    """Kaplan-Meier weights for observations already sorted by y.

    w_1 = delta_1/n and, for i >= 2,
    w_i = delta_i/(n-i+1) * prod_{j<i} ((n-j)/(n-j+1))^delta_j.
    Censored rows get exact zero weight; with no censoring every weight
    is 1/n.
    """
    delta = np.asarray(delta)
    n = delta.shape[0]
    w = np.zeros(n)
    surv = 1.0  # running product, the KM survival just before row i
    for i in range(1, n + 1):
        at_risk = n - i + 1
        if delta[i - 1] == 1:
            w[i - 1] = surv / at_risk
            surv *= (at_risk - 1) / at_risk
    return w


def sort_and_weight(y, delta, X, Z) -> SurvivalDataset:
    """Sort raw observations by y and attach Kaplan-Meier weights.

    Ties in y are broken events-first (the standard Kaplan-Meier
    convention).  Covariate rows are permuted consistently with y.

    Raises IngestionError for non-finite values, delta outside {0,1},
    n < 2, or all-censored data (every weight would be zero).
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    delta = np.asarray(delta)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    n = y.shape[0]
    if n < 2:
        raise IngestionError(f"need at least 2 observations, got {n}")
    if X.shape[0] != n or Z.shape[0] != n or delta.shape[0] != n:
        raise IngestionError("y, delta, X, Z must have matching row counts")
    if X.shape[1] < 1 or Z.shape[1] < 1:
        raise IngestionError("need at least one environmental and one genetic covariate")
    bad = np.flatnonzero(~np.isfinite(y))
    if bad.size:
        raise IngestionError(f"non-finite y at row {bad[0] + 1}")
    for name, M in (("X", X), ("Z", Z)):
        rows, cols = np.nonzero(~np.isfinite(M))
        if rows.size:
            raise IngestionError(
                f"non-finite {name} entry at row {rows[0] + 1}, column {cols[0] + 1}")
    if not np.isin(delta, (0, 1)).all():
        bad = int(np.flatnonzero(~np.isin(delta, (0, 1)))[0])
        raise IngestionError(f"delta must be 0 or 1, got {delta[bad]!r} at row {bad + 1}")
    delta = delta.astype(np.int8)
    if delta.sum() == 0:
        raise IngestionError("no events: all weights zero")

    # stable sort on (y, 1-delta) puts events before censorings at ties
    order = np.lexsort((1 - delta, y))
    y, delta = y[order], delta[order]
    X, Z = X[order], Z[order]
    w = km_weights(delta)
    for arr in (y, delta, X, Z, w):
        arr.setflags(write=False)
    return SurvivalDataset(y=y, delta=delta, X=X, Z=Z, weights=w)


_COLUMN_ROLES_CACHE: dict[int, tuple[str, ...]] = {}


def column_roles(q: int) -> tuple[str, ...]:
    roles = _COLUMN_ROLES_CACHE.get(q)
    if roles is None:
        roles = ("intercept",) + tuple(f"env{k}" for k in range(1, q + 1)) \
            + ("gene",) + tuple(f"interaction{k}" for k in range(1, q + 1))
        _COLUMN_ROLES_CACHE[q] = roles
    return roles


def coef_names(q: int, gene_index: int | None = None) -> tuple[str, ...]:
    """Human-readable coefficient names matching the design column order."""
    g = "g" if gene_index is None else f"g{gene_index}"
    return ("intercept",) + tuple(f"e{k}" for k in range(1, q + 1)) \
        + (g,) + tuple(f"{g}:e{k}" for k in range(1, q + 1))


def build_design(ds: SurvivalDataset, j: int) -> MarginalDesign:
    """Design matrix for gene j (1-based): columns (1, x', z_j, z_j*x')."""
    if not 1 <= j <= ds.p:
        raise IndexError(f"gene index {j} out of range [1, {ds.p}]")
    n, q = ds.n, ds.q
    z = ds.Z[:, j - 1]
    U = np.empty((n, 2 * q + 2))
    U[:, 0] = 1.0
    U[:, 1:q + 1] = ds.X
    U[:, q + 1] = z
    U[:, q + 2:] = z[:, None] * ds.X
    return MarginalDesign(gene_index=j, U=U, column_roles=column_roles(q))


def normalize(design: MarginalDesign, y: np.ndarray, weights: np.ndarray,
              rel_tol: float = 1e-12):
    """Weighted normalization of a design and response.

    Centers y to weighted mean zero and centers/rescales every
    non-intercept column so that sum(w * u_k) = 0 and sum(w * u_k^2) = n.
    The intercept column is left as ones but marked inactive (its
    normalized-scale coefficient is pinned at 0; the original-scale
    intercept is reconstructed through the returned NormRecord).
    Non-intercept columns with zero weighted variance are flagged
    degenerate: left centered at zero, scale 1, inactive.

    Returns (normalized MarginalDesign, normalized y).  Idempotent.
    """
    w = np.asarray(weights, dtype=np.float64)
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("total weight must be positive")
    U = np.array(design.U, dtype=np.float64)
    n, d = U.shape
    y = np.asarray(y, dtype=np.float64)

    y_mean = float(w @ y / wsum)
    y_norm = y - y_mean

    col_mean = np.zeros(d)
    col_scale = np.ones(d)
    active = np.zeros(d, dtype=bool)
    for k in range(d):
        if design.column_roles[k] == "intercept":
            U[:, k] = 1.0
            continue
        mu = float(w @ U[:, k] / wsum)
        centered = U[:, k] - mu
        ssq = float(w @ (centered * centered))
        col_mean[k] = mu
        if ssq <= rel_tol * max(1.0, mu * mu) * n:
            # constant column: coefficient forced to 0, excluded from updates
            U[:, k] = centered
            continue
        scale = np.sqrt(n / ssq)
        U[:, k] = centered * scale
        col_scale[k] = scale
        active[k] = True

    record = NormRecord(y_mean=y_mean, col_mean=col_mean, col_scale=col_scale)
    out = MarginalDesign(gene_index=design.gene_index, U=U,
                         column_roles=design.column_roles,
                         active=active, norm_record=record)
    return out, y_norm


def to_original_scale(zeta_normalized: np.ndarray, record: NormRecord) -> np.ndarray:
    """Map normalized-scale coefficients back to the original scale."""
    zeta = zeta_normalized * record.col_scale
    zeta[0] = record.y_mean - float(np.dot(zeta[1:], record.col_mean[1:]))
    return zeta


# ---------------------------------------------------------------------------
# CSV ingestion / output
#
# Schema: header `y,delta,e1..eq,g1..gp`, one row per subject, `.` decimal
# separator.  q and p are inferred from the header prefixes.  Floats are
# printed at 17 significant digits, which round-trips IEEE doubles exactly.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_header(header: list[str]):
    if header[:2] != ["y", "delta"]:
        raise IngestionError("header must start with 'y,delta'")
    q = 0
    k = 2
    while k < len(header) and header[k] == f"e{q + 1}":
        q += 1
        k += 1
    p = 0
    while k < len(header) and header[k] == f"g{p + 1}":
        p += 1
        k += 1
    if k != len(header) or q == 0 or p == 0:
        raise IngestionError(
            "header must be y,delta,e1..eq,g1..gp; got " + ",".join(header[:8]) + "...")
    return q, p


def load_csv(path):
    """Read raw observations from a dataset CSV.

    Returns (y, delta, X, Z) unsorted, ready for `sort_and_weight`.
    Parse failures name the offending line.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise IngestionError(f"{path}: empty file")
        q, p = _parse_header(header.split(","))
        width = 2 + q + p
        ys, deltas, rows = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != width:
                raise IngestionError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(parts)}")
            try:
                vals = [float(v) for v in parts]
            except ValueError:
                raise IngestionError(f"{path}: line {lineno}: non-numeric cell") from None
            if vals[1] not in (0.0, 1.0):
                raise IngestionError(
                    f"{path}: line {lineno}: delta must be 0 or 1, got {parts[1]}")
            ys.append(vals[0])
            deltas.append(int(vals[1]))
            rows.append(vals[2:])
    if len(ys) < 2:
        raise IngestionError(f"{path}: need at least 2 data rows")
    M = np.array(rows)
    return np.array(ys), np.array(deltas, dtype=np.int8), M[:, :q], M[:, q:]


def write_csv(ds: SurvivalDataset, path) -> None:
    """Write a dataset CSV (lossless round-trip through load_csv)."""
    q, p = ds.q, ds.p
    header = ["y", "delta"] + [f"e{k}" for k in range(1, q + 1)] \
        + [f"g{j}" for j in range(1, p + 1)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(ds.n):
            fields = [_fmt(ds.y[i]), str(int(ds.delta[i]))]
            fields += [_fmt(v) for v in ds.X[i]]
            fields += [_fmt(v) for v in ds.Z[i]]
            fh.write(",".join(fields) + "\n")


def write_truth_csv(truth, path) -> None:
    """Write a ground-truth sidecar CSV: effect_type,gene,env,coef."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("effect_type,gene,env,coef\n")
        for k, coef in enumerate(truth.env_main, start=1):
            fh.write(f"env_main,,{k},{_fmt(coef)}\n")
        for gene, coef in truth.gene_main:
            fh.write(f"gene_main,{gene},,{_fmt(coef)}\n")
        for gene, env, coef in truth.interactions:
            fh.write(f"interaction,{gene},{env},{_fmt(coef)}\n")
