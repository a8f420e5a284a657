"""Sparse L1 / elastic-net regularized logistic regression.

Solver: cyclic coordinate descent on a quadratic majorization of the
logistic loss (curvature bounded by 1/4), which handles both penalties with
one update rule. The objective for a binary subproblem is

    sum_i c_i * [log(1 + exp(z_i)) - y_i * z_i]  +  lam1*|w|_1 + lam2/2*|w|_2^2

with z = X w + b, lam1 = 1/C for the L1 penalty and (l1_ratio/C,
(1-l1_ratio)/C) for elastic net. The intercept is never penalized.
Multinomial problems are reduced one-vs-rest; predicted probabilities are
the per-class sigmoids renormalized to sum to one.

Tolerance is the maximum absolute coordinate update per sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.special import expit

from .features import DesignMatrix, FeatureVocabulary, SparseExample


class FitError(RuntimeError):
    pass


class SingleClassError(FitError):
    pass


class FingerprintError(RuntimeError):
    """Artifact produced under one vocabulary used against another."""


class Penalty(str, Enum):
    L1 = "l1"
    ELASTIC_NET = "elastic_net"


class ClassWeighting(str, Enum):
    NONE = "none"
    INVERSE_PRIOR = "inverse_prior"


class ThresholdObjective(str, Enum):
    GMEAN_SENS_SPEC = "gmean_sens_spec"
    GMEAN_F1 = "gmean_f1"


@dataclass(frozen=True)
class GlmConfig:
    penalty: Penalty = Penalty.L1
    C: float = 1.0
    l1_ratio: float | None = None
    tolerance: float = 1e-4
    max_iters: int = 1000
    class_weighting: ClassWeighting = ClassWeighting.NONE

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if self.penalty == Penalty.ELASTIC_NET:
            if self.l1_ratio is None or not (0.0 < self.l1_ratio < 1.0):
                raise ValueError("elastic_net requires l1_ratio in (0, 1)")
        elif self.l1_ratio is not None:
            raise ValueError("l1_ratio only applies to elastic_net")

    @property
    def lam1(self) -> float:
        if self.penalty == Penalty.L1:
            return 1.0 / self.C
        return self.l1_ratio / self.C

    @property
    def lam2(self) -> float:
        if self.penalty == Penalty.L1:
            return 0.0
        return (1.0 - self.l1_ratio) / self.C


# Hyperparameter search spaces. An asterisked entry in the source tables is
# placed first so a truncated grid still covers the chosen setting.
IDENTIFICATION_GRID = tuple(
    GlmConfig(Penalty.L1, C=c, tolerance=t, class_weighting=ClassWeighting.NONE)
    for c in (1e-3, 7.5e-4, 5e-4, 2.5e-4, 1e-4)
    for t in (1.0, 1e-1, 1e-2, 1e-3, 1e-4)
)
RISK_LASSO_GRID = tuple(
    GlmConfig(Penalty.L1, C=c, tolerance=t, class_weighting=ClassWeighting.INVERSE_PRIOR)
    for c in (1.0, 1e-1, 1e-2, 1e-3, 1e-4)
    for t in (1e-1, 1e-2, 1e-3, 1e-4)
)
RISK_ENET_GRID = tuple(
    GlmConfig(
        Penalty.ELASTIC_NET,
        C=1e-3,
        l1_ratio=r,
        tolerance=t,
        class_weighting=ClassWeighting.INVERSE_PRIOR,
    )
    for r in (0.25, 0.5, 0.75)
    for t in (1e-1, 5e-2)
)


@dataclass
class LinearModel:
    """Per-class sparse weights + intercepts over a fingerprinted vocabulary.

    Binary models store a single weight vector for the positive (second)
    class. ``weights`` holds exactly the nonzero coordinates.
    """

    classes: tuple[int, ...]
    weights: tuple[dict[int, float], ...]
    intercepts: tuple[float, ...]
    n_columns: int
    vocab_fingerprint: str
    config: GlmConfig
    converged: bool
    threshold: float | None = None

    @property
    def is_binary(self) -> bool:
        return len(self.classes) == 2

    def dense_weights(self) -> np.ndarray:
        out = np.zeros((len(self.weights), self.n_columns))
        for k, wdict in enumerate(self.weights):
            for j, v in wdict.items():
                out[k, j] = v
        return out

    def nonzero_count(self) -> int:
        return sum(len(w) for w in self.weights)


class _Columns:
    """Column-major view of a design matrix for coordinate descent."""

    def __init__(self, matrix: DesignMatrix):
        self.n_rows = len(matrix.examples)
        self.n_cols = matrix.n_columns
        rows: list[list[int]] = [[] for _ in range(self.n_cols)]
        vals: list[list[float]] = [[] for _ in range(self.n_cols)]
        for i, ex in enumerate(matrix.examples):
            for c, v in zip(ex.columns, ex.values):
                rows[c].append(i)
                vals[c].append(v)
        self.rows = [np.asarray(r, dtype=np.int64) for r in rows]
        self.vals = [np.asarray(v, dtype=np.float64) for v in vals]


def _to_csr(matrix: DesignMatrix) -> csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for ex in matrix.examples:
        indices.extend(ex.columns)
        data.extend(ex.values)
        indptr.append(len(indices))
    return csr_matrix(
        (np.asarray(data), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(matrix.examples), matrix.n_columns),
    )


def sample_weights(labels: np.ndarray, weighting: ClassWeighting) -> np.ndarray:
    """Per-sample weights; inverse_prior weights class j proportionally to
    1/p(y_j), normalized so the mean weight is one."""
    if weighting == ClassWeighting.NONE:
        return np.ones(labels.shape[0])
    classes, counts = np.unique(labels, return_counts=True)
    total = labels.shape[0]
    k = classes.shape[0]
    per_class = {c: total / (k * cnt) for c, cnt in zip(classes.tolist(), counts.tolist())}
    return np.asarray([per_class[y] for y in labels.tolist()])


def _soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def _fit_binary(
    cols: _Columns,
    y: np.ndarray,
    sw: np.ndarray,
    lam1: float,
    lam2: float,
    tol: float,
    max_iters: int,
) -> tuple[np.ndarray, float, bool]:
    n_rows, n_cols = cols.n_rows, cols.n_cols
    w = np.zeros(n_cols)

    s_pos = float(sw[y == 1].sum())
    s_neg = float(sw[y == 0].sum())
    b = math.log(s_pos / s_neg) if s_pos > 0 and s_neg > 0 else 0.0
    z = np.full(n_rows, b)
    p = expit(z)
    h0 = 0.25 * float(sw.sum())

    # curvature bounds per column are constant: 1/4 * sum_i c_i x_ij^2
    hd = np.asarray([0.25 * float(sw[r] @ (v * v)) for r, v in zip(cols.rows, cols.vals)])

    converged = False
    for it in range(max_iters):
        max_delta = 0.0

        # intercept: unpenalized, iterated to stationarity within the sweep
        b_before = b
        for _ in range(200):
            g0 = float(sw @ (p - y))
            step = -g0 / h0
            if abs(step) < 1e-14:
                break
            b += step
            z += step
            p = expit(z)
        max_delta = max(max_delta, abs(b - b_before))

        for j in range(n_cols):
            r = cols.rows[j]
            if r.size == 0:
                continue
            v = cols.vals[j]
            gd = float((sw[r] * (p[r] - y[r])) @ v)
            u = _soft_threshold(hd[j] * w[j] - gd, lam1) / (hd[j] + lam2)
            d = u - w[j]
            if d != 0.0:
                w[j] = u
                z[r] += d * v
                p[r] = expit(z[r])
                if abs(d) > max_delta:
                    max_delta = abs(d)

        if not math.isfinite(max_delta) or not np.isfinite(b):
            raise FitError(f"non-finite loss at iteration {it}")
        if max_delta < tol:
            converged = True
            break
    return w, b, converged


def fit(matrix: DesignMatrix, config: GlmConfig) -> LinearModel:
    """Fit a binary or one-vs-rest multinomial model on a design matrix."""
    if not matrix.examples:
        raise FitError("empty design matrix")
    labels = matrix.labels
    classes = tuple(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise SingleClassError(f"matrix contains a single class {classes}")

    sw = sample_weights(labels, config.class_weighting)
    cols = _Columns(matrix)
    lam1, lam2 = config.lam1, config.lam2

    weight_dicts: list[dict[int, float]] = []
    intercepts: list[float] = []
    converged = True
    if len(classes) == 2:
        targets = [classes[1]]
    else:
        targets = list(classes)
    for cls in targets:
        y = (labels == cls).astype(np.float64)
        w, b, ok = _fit_binary(cols, y, sw, lam1, lam2, config.tolerance, config.max_iters)
        weight_dicts.append({int(j): float(w[j]) for j in np.nonzero(w)[0]})
        intercepts.append(float(b))
        converged = converged and ok

    return LinearModel(
        classes=classes,
        weights=tuple(weight_dicts),
        intercepts=tuple(intercepts),
        n_columns=matrix.n_columns,
        vocab_fingerprint=matrix.vocab_fingerprint,
        config=config,
        converged=converged,
    )


def weighted_logistic_loss(
    X: np.ndarray, y: np.ndarray, sw: np.ndarray, w: np.ndarray, b: float
) -> tuple[float, np.ndarray, float]:
    """Weighted logistic loss with its analytic gradient (no penalty term).

    Returns (loss, grad_w, grad_b). Intended for small dense problems:
    optimality diagnostics and finite-difference checks.
    """
    z = X @ w + b
    loss = float(sw @ (np.logaddexp(0.0, z) - y * z))
    resid = sw * (expit(z) - y)
    return loss, X.T @ resid, float(resid.sum())


def kkt_residuals(matrix: DesignMatrix, model: LinearModel, class_index: int = 0) -> np.ndarray:
    """Subgradient-optimality residuals per coordinate for one class model.

    For w_j = 0 the residual is max(|dL/dw_j| - lam1, 0); for w_j != 0 it is
    |dL/dw_j + lam2*w_j + lam1*sign(w_j)|. All residuals are ~0 at an exact
    optimum.
    """
    labels = matrix.labels
    if model.is_binary:
        y = (labels == model.classes[1]).astype(np.float64)
    else:
        y = (labels == model.classes[class_index]).astype(np.float64)
    sw = sample_weights(labels, model.config.class_weighting)
    csr = _to_csr(matrix)
    wvec = model.dense_weights()[class_index]
    z = csr @ wvec + model.intercepts[class_index]
    resid = sw * (expit(z) - y)
    grad = csr.T @ resid
    lam1, lam2 = model.config.lam1, model.config.lam2
    out = np.empty(model.n_columns)
    for j in range(model.n_columns):
        if wvec[j] == 0.0:
            out[j] = max(abs(grad[j]) - lam1, 0.0)
        else:
            out[j] = abs(grad[j] + lam2 * wvec[j] + lam1 * math.copysign(1.0, wvec[j]))
    return out


def _scores_one(model: LinearModel, example: SparseExample) -> np.ndarray:
    z = np.asarray(model.intercepts, dtype=np.float64).copy()
    for k, wdict in enumerate(model.weights):
        acc = 0.0
        for c, v in zip(example.columns, example.values):
            wv = wdict.get(c)
            if wv is not None:
                acc += wv * v
        z[k] += acc
    return z


def predict_proba(
    model: LinearModel, example: SparseExample, vocab_fingerprint: str
) -> np.ndarray:
    """Class-probability vector for one example (sums to 1)."""
    if vocab_fingerprint != model.vocab_fingerprint:
        raise FingerprintError(
            f"example vocabulary {vocab_fingerprint} does not match model "
            f"vocabulary {model.vocab_fingerprint}"
        )
    z = _scores_one(model, example)
    if model.is_binary:
        p = float(expit(z[0]))
        return np.asarray([1.0 - p, p])
    sig = expit(z)
    return sig / sig.sum()


def predict_proba_matrix(model: LinearModel, matrix: DesignMatrix) -> np.ndarray:
    """(n_examples, n_classes) probabilities for a whole design matrix."""
    if matrix.vocab_fingerprint != model.vocab_fingerprint:
        raise FingerprintError(
            f"matrix vocabulary {matrix.vocab_fingerprint} does not match model "
            f"vocabulary {model.vocab_fingerprint}"
        )
    csr = _to_csr(matrix)
    dense = model.dense_weights()
    z = csr @ dense.T + np.asarray(model.intercepts)
    if model.is_binary:
        p = expit(z[:, 0])
        return np.column_stack([1.0 - p, p])
    sig = expit(z)
    return sig / sig.sum(axis=1, keepdims=True)


def predict_class(model: LinearModel, probs: np.ndarray) -> np.ndarray:
    return np.asarray(model.classes)[np.argmax(probs, axis=-1)]


def select_threshold(
    scores: list[tuple[float, int]],
    objective: ThresholdObjective = ThresholdObjective.GMEAN_SENS_SPEC,
) -> float:
    """Decision threshold over positive-class scores.

    Candidates are the midpoints of consecutive distinct scores; the
    objective is maximized with ties broken toward the smallest candidate.
    The default objective is sqrt(sensitivity * specificity); the F1 variant
    (sqrt of the two per-class F1 scores) is available behind the switch.
    """
    values = np.asarray([s for s, _ in scores], dtype=np.float64)
    labels = np.asarray([y for _, y in scores], dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("threshold selection needs both classes present")

    distinct = np.unique(values)
    if distinct.size < 2:
        return float(distinct[0])
    candidates = (distinct[:-1] + distinct[1:]) / 2.0

    order = np.argsort(values, kind="stable")
    sv = values[order]
    sl = labels[order]
    # suffix counts: positives/negatives with score >= distinct[i+1]
    pos_cum = np.cumsum(sl[::-1])[::-1]
    neg_cum = np.cumsum((1 - sl)[::-1])[::-1]
    best_tau = candidates[0]
    best_obj = -1.0
    for i, tau in enumerate(candidates):
        cut = np.searchsorted(sv, distinct[i + 1], side="left")
        tp = int(pos_cum[cut]) if cut < sv.size else 0
        fp = int(neg_cum[cut]) if cut < sv.size else 0
        fn = n_pos - tp
        tn = n_neg - fp
        if objective == ThresholdObjective.GMEAN_SENS_SPEC:
            sens = tp / n_pos
            spec = tn / n_neg
            obj = math.sqrt(sens * spec)
        else:
            f1_pos = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
            f1_neg = 2 * tn / (2 * tn + fn + fp) if (2 * tn + fn + fp) > 0 else 0.0
            obj = math.sqrt(f1_pos * f1_neg)
        if obj > best_obj:
            best_obj = obj
            best_tau = float(tau)
    return best_tau


class SelectionMetric(str, Enum):
    VAL_ACCURACY = "val_accuracy"
    AUC_TIMES_ACCURACY = "auc_times_accuracy"


@dataclass
class GridRow:
    config: GlmConfig
    metrics: dict[str, float] = field(default_factory=dict)
    chosen: bool = False
    failed: bool = False
    error: str = ""


@dataclass
class GridResult:
    rows: list[GridRow]

    @property
    def chosen(self) -> GridRow:
        picked = [r for r in self.rows if r.chosen]
        if len(picked) != 1:
            raise ValueError(f"expected exactly one chosen row, found {len(picked)}")
        return picked[0]


def grid_search(
    train: DesignMatrix,
    val: DesignMatrix,
    grid: list[GlmConfig] | tuple[GlmConfig, ...],
    selection: SelectionMetric = SelectionMetric.VAL_ACCURACY,
) -> tuple[GridResult, LinearModel]:
    """Fit every candidate, score on validation, choose per the selection
    metric with ties broken by grid order. Failed candidates are excluded
    but recorded."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    rows: list[GridRow] = []
    models: list[LinearModel | None] = []
    val_labels = val.labels
    for config in grid:
        row = GridRow(config=config)
        try:
            model = fit(train, config)
            probs = predict_proba_matrix(model, val)
            preds = predict_class(model, probs)
            accuracy = float((preds == val_labels).mean())
            row.metrics["val_accuracy"] = accuracy
            if selection == SelectionMetric.AUC_TIMES_ACCURACY:
                from .stats import macro_ovr_auc

                auc = macro_ovr_auc(probs, val_labels, model.classes)
                row.metrics["val_auc"] = auc
                row.metrics["auc_times_accuracy"] = auc * accuracy
            models.append(model)
        except Exception as exc:  # candidate failures don't kill the search
            row.failed = True
            row.error = str(exc)
            models.append(None)
        rows.append(row)

    key = (
        "val_accuracy"
        if selection == SelectionMetric.VAL_ACCURACY
        else "auc_times_accuracy"
    )
    best_idx = None
    best_val = -math.inf
    for i, row in enumerate(rows):
        if row.failed:
            continue
        if row.metrics[key] > best_val:
            best_val = row.metrics[key]
            best_idx = i
    if best_idx is None:
        raise FitError("every grid candidate failed")
    rows[best_idx].chosen = True
    return GridResult(rows), models[best_idx]


@dataclass(frozen=True)
class FeatureWeight:
    column: int
    name: str
    concept_id: int | None
    window: int | None
    weight: float


def top_weighted_features(
    model: LinearModel,
    k: int,
    vocab: FeatureVocabulary,
    class_index: int = 0,
) -> list[FeatureWeight]:
    """The k largest-magnitude weights of one class model, ties by column."""
    if k < 1:
        raise ValueError("k must be >= 1")
    wdict = model.weights[class_index]
    ranked = sorted(wdict.items(), key=lambda cv: (-abs(cv[1]), cv[0]))[:k]
    out = []
    for col, weight in ranked:
        concept, window = vocab.column_concept(col)
        out.append(FeatureWeight(col, vocab.column_name(col), concept, window, weight))
    return out


# ---------------------------------------------------------------------------
# model artifact io

def save_model(model: LinearModel, path: str | Path, grid: GridResult | None = None) -> None:
    lines = [
        "#glm-model v1",
        f"fingerprint={model.vocab_fingerprint}",
        f"n_columns={model.n_columns}",
        f"penalty={model.config.penalty.value}",
        f"C={model.config.C!r}",
        f"l1_ratio={'' if model.config.l1_ratio is None else repr(model.config.l1_ratio)}",
        f"tolerance={model.config.tolerance!r}",
        f"max_iters={model.config.max_iters}",
        f"class_weighting={model.config.class_weighting.value}",
        f"converged={str(model.converged).lower()}",
        f"threshold={'' if model.threshold is None else repr(model.threshold)}",
        f"classes={','.join(str(c) for c in model.classes)}",
        f"intercepts={','.join(repr(b) for b in model.intercepts)}",
    ]
    for k, wdict in enumerate(model.weights):
        lines.append(f"[weights {k}]")
        for j in sorted(wdict):
            lines.append(f"{j}:{wdict[j]!r}")
    if grid is not None:
        lines.append("[grid]")
        for row in grid.rows:
            metrics = ";".join(f"{k}={v!r}" for k, v in sorted(row.metrics.items()))
            lines.append(
                f"penalty={row.config.penalty.value},C={row.config.C!r},"
                f"l1_ratio={'' if row.config.l1_ratio is None else repr(row.config.l1_ratio)},"
                f"tolerance={row.config.tolerance!r},chosen={str(row.chosen).lower()},"
                f"failed={str(row.failed).lower()},metrics={metrics}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> LinearModel:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "#glm-model v1":
        raise ValueError(f"{path} is not a glm model artifact")
    meta: dict[str, str] = {}
    weights: list[dict[int, float]] = []
    current: dict[int, float] | None = None
    in_grid = False
    for line in text[1:]:
        if line.startswith("[weights "):
            current = {}
            weights.append(current)
        elif line.startswith("[grid]"):
            current = None
            in_grid = True
        elif in_grid:
            continue
        elif current is not None and ":" in line:
            j, v = line.split(":")
            current[int(j)] = float(v)
        elif "=" in line and current is None:
            key, val = line.split("=", 1)
            meta[key] = val
    config = GlmConfig(
        penalty=Penalty(meta["penalty"]),
        C=float(meta["C"]),
        l1_ratio=float(meta["l1_ratio"]) if meta["l1_ratio"] else None,
        tolerance=float(meta["tolerance"]),
        max_iters=int(meta["max_iters"]),
        class_weighting=ClassWeighting(meta["class_weighting"]),
    )
    return LinearModel(
        classes=tuple(int(c) for c in meta["classes"].split(",")),
        weights=tuple(weights),
        intercepts=tuple(float(b) for b in meta["intercepts"].split(",")),
        n_columns=int(meta["n_columns"]),
        vocab_fingerprint=meta["fingerprint"],
        config=config,
        converged=meta["converged"] == "true",
        threshold=float(meta["threshold"]) if meta["threshold"] else None,
    )
