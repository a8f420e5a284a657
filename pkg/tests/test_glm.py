from __future__ import annotations

import math
from datetime import date

import numpy as np
import pytest

from claimsight.features import DesignMatrix, SparseExample
from claimsight.glm import (
    IDENTIFICATION_GRID,
    RISK_LASSO_GRID,
    ClassWeighting,
    FingerprintError,
    GlmConfig,
    GridResult,
    GridRow,
    LinearModel,
    Penalty,
    SingleClassError,
    ThresholdObjective,
    fit,
    grid_search,
    kkt_residuals,
    load_model,
    predict_proba,
    predict_proba_matrix,
    sample_weights,
    save_model,
    select_threshold,
    top_weighted_features,
    weighted_logistic_loss,
)

D = date(2020, 1, 1)


def example(i, cols, vals, label):
    return SparseExample(f"p{i}", D, tuple(cols), tuple(vals), label)


def random_matrix(n_rows=20, n_cols=30, n_classes=2, seed=0, fingerprint="test"):
    r = np.random.default_rng(seed)
    examples = []
    for i in range(n_rows):
        k = max(1, int(r.binomial(n_cols, 0.3)))
        cols = np.sort(r.choice(n_cols, size=k, replace=False))
        vals = np.where(r.random(k) < 0.8, 1.0, r.uniform(0.2, 1.0, k))
        examples.append(example(i, cols.tolist(), vals.tolist(), int(r.integers(n_classes))))
    return DesignMatrix(examples, n_cols, fingerprint)


def to_dense(m: DesignMatrix) -> np.ndarray:
    X = np.zeros((len(m.examples), m.n_columns))
    for i, ex in enumerate(m.examples):
        for c, v in zip(ex.columns, ex.values):
            X[i, c] = v
    return X


# --- gradient and optimality ------------------------------------------------

def test_gradient_matches_central_differences():
    worst = 0.0
    for s in range(8):
        m = random_matrix(seed=s)
        X, y = to_dense(m), (m.labels == 1).astype(float)
        sw = sample_weights(m.labels, ClassWeighting.INVERSE_PRIOR)
        r = np.random.default_rng(100 + s)
        w, b = r.normal(0, 0.5, X.shape[1]), float(r.normal())
        _, gw, gb = weighted_logistic_loss(X, y, sw, w, b)
        eps = 1e-6
        for j in range(X.shape[1]):
            wp, wm = w.copy(), w.copy()
            wp[j] += eps
            wm[j] -= eps
            lp, _, _ = weighted_logistic_loss(X, y, sw, wp, b)
            lm, _, _ = weighted_logistic_loss(X, y, sw, wm, b)
            fd = (lp - lm) / (2 * eps)
            worst = max(worst, abs(gw[j] - fd) / max(abs(fd), 1e-8))
        lp, _, _ = weighted_logistic_loss(X, y, sw, w, b + eps)
        lm, _, _ = weighted_logistic_loss(X, y, sw, w, b - eps)
        worst = max(worst, abs(gb - (lp - lm) / (2 * eps)) / max(abs(gb), 1e-8))
    assert worst < 1e-5


@pytest.mark.parametrize("penalty,l1_ratio", [(Penalty.L1, None), (Penalty.ELASTIC_NET, 0.5)])
def test_kkt_optimality_at_convergence(penalty, l1_ratio):
    for s in range(6):
        m = random_matrix(n_rows=40, n_cols=25, seed=50 + s)
        config = GlmConfig(penalty, C=0.5, l1_ratio=l1_ratio, tolerance=1e-10, max_iters=20000)
        model = fit(m, config)
        assert model.converged
        res = kkt_residuals(m, model)
        assert res.max() < 1e-6, (s, res.max())


def test_extreme_penalty_gives_exact_intercept_only_model():
    m = random_matrix(n_rows=60, n_cols=20, seed=42)
    model = fit(m, GlmConfig(Penalty.L1, C=1e-12, tolerance=1e-12))
    assert model.nonzero_count() == 0
    y = m.labels == 1
    expected = math.log(int(y.sum()) / int((~y).sum()))
    assert model.intercepts[0] == pytest.approx(expected, abs=1e-9)


def test_extreme_penalty_weighted_log_odds():
    m = random_matrix(n_rows=60, n_cols=20, seed=43)
    model = fit(m, GlmConfig(Penalty.L1, C=1e-12, tolerance=1e-12,
                             class_weighting=ClassWeighting.INVERSE_PRIOR))
    sw = sample_weights(m.labels, ClassWeighting.INVERSE_PRIOR)
    y = m.labels == 1
    expected = math.log(float(sw[y].sum()) / float(sw[~y].sum()))
    assert model.nonzero_count() == 0
    assert model.intercepts[0] == pytest.approx(expected, abs=1e-9)


def test_linearly_separable_toy_set():
    # feature 0 marks positives, feature 1 marks negatives
    examples = [
        example(0, [0], [1.0], 1),
        example(1, [0, 1], [1.0, 0.2], 1),
        example(2, [0], [0.8], 1),
        example(3, [1], [1.0], 0),
        example(4, [1], [0.9], 0),
        example(5, [0, 1], [0.1, 1.0], 0),
    ]
    m = DesignMatrix(examples, 2, "test")
    model = fit(m, GlmConfig(Penalty.L1, C=10.0, tolerance=1e-8, max_iters=5000))
    probs = predict_proba_matrix(model, m)
    assert (((probs[:, 1] >= 0.5).astype(int)) == m.labels).all()
    assert all(np.isfinite(v) for v in model.weights[0].values())
    # subgradient optimality certifies the finite optimum
    assert kkt_residuals(m, model).max() < 1e-5


def test_inverse_prior_weights_proportions():
    labels = np.array([0] * 736 + [1] * 169 + [2] * 94)
    sw = sample_weights(labels, ClassWeighting.INVERSE_PRIOR)
    w = {c: sw[labels == c][0] for c in (0, 1, 2)}
    assert w[1] / w[0] == pytest.approx(0.736 / 0.169)
    assert w[2] / w[0] == pytest.approx(0.736 / 0.094)


def test_single_class_matrix_errors():
    examples = [example(i, [0], [1.0], 1) for i in range(5)]
    with pytest.raises(SingleClassError):
        fit(DesignMatrix(examples, 2, "test"), GlmConfig())


def test_monotone_sparsity_across_grid():
    m = random_matrix(n_rows=120, n_cols=40, seed=3)
    # scale the identification grid's C values into a range that actually
    # produces nonzeros at this sample size, keeping the relative spacing
    nonzeros = []
    for c in (1.0, 0.75, 0.5, 0.25, 0.1):
        model = fit(m, GlmConfig(Penalty.L1, C=c, tolerance=1e-8, max_iters=5000))
        nonzeros.append(model.nonzero_count())
    assert nonzeros == sorted(nonzeros, reverse=True)


# --- prediction ---------------------------------------------------------------

def test_zero_model_three_classes_uniform():
    examples = [example(i, [0], [1.0], i % 3) for i in range(6)]
    m = DesignMatrix(examples, 2, "test")
    model = fit(m, GlmConfig(Penalty.L1, C=1e-12, tolerance=1e-12,
                             class_weighting=ClassWeighting.INVERSE_PRIOR))
    assert model.nonzero_count() == 0
    # balanced weighting puts every intercept at 1/3 prior log-odds
    ex = example(99, [], [], None)
    probs = predict_proba(model, ex, "test")
    assert np.allclose(probs, [1 / 3, 1 / 3, 1 / 3], atol=1e-9)
    assert abs(probs.sum() - 1.0) < 1e-9


def test_binary_intercept_sigmoid():
    model = LinearModel(
        classes=(0, 1), weights=({},), intercepts=(0.7,), n_columns=4,
        vocab_fingerprint="fp", config=GlmConfig(), converged=True,
    )
    probs = predict_proba(model, example(0, [1], [1.0], None), "fp")
    assert probs[1] == pytest.approx(1.0 / (1.0 + math.exp(-0.7)), abs=1e-12)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_probabilities_sum_to_one():
    m = random_matrix(n_rows=40, n_cols=10, n_classes=3, seed=9)
    model = fit(m, GlmConfig(Penalty.L1, C=1.0, tolerance=1e-6, max_iters=2000))
    probs = predict_proba_matrix(model, m)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_prediction_invariant_to_storage_order():
    model = LinearModel(
        classes=(0, 1), weights=({0: 0.5, 2: -1.0, 3: 0.25},), intercepts=(0.1,),
        n_columns=4, vocab_fingerprint="fp", config=GlmConfig(), converged=True,
    )
    a = predict_proba(model, SparseExample("p", D, (0, 2, 3), (1.0, 1.0, 0.5)), "fp")
    b = predict_proba(model, SparseExample("p", D, (3, 0, 2), (0.5, 1.0, 1.0)), "fp")
    assert np.array_equal(a, b)


def test_fingerprint_mismatch_errors():
    m = random_matrix(seed=1, fingerprint="aaa")
    model = fit(m, GlmConfig(Penalty.L1, C=0.5, tolerance=1e-4))
    with pytest.raises(FingerprintError):
        predict_proba(model, m.examples[0], "bbb")
    other = random_matrix(seed=1, fingerprint="bbb")
    with pytest.raises(FingerprintError):
        predict_proba_matrix(model, other)


# --- threshold selection ------------------------------------------------------

def brute_force_threshold(scores, objective=ThresholdObjective.GMEAN_SENS_SPEC):
    values = sorted({s for s, _ in scores})
    if len(values) < 2:
        return values[0]
    candidates = [(a + b) / 2 for a, b in zip(values, values[1:])]
    best_tau, best = None, -1.0
    n_pos = sum(1 for _, y in scores if y == 1)
    n_neg = len(scores) - n_pos
    for tau in candidates:
        tp = sum(1 for s, y in scores if y == 1 and s >= tau)
        tn = sum(1 for s, y in scores if y == 0 and s < tau)
        fp = n_neg - tn
        fn = n_pos - tp
        if objective == ThresholdObjective.GMEAN_SENS_SPEC:
            obj = math.sqrt((tp / n_pos) * (tn / n_neg))
        else:
            f1p = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
            f1n = 2 * tn / (2 * tn + fn + fp) if 2 * tn + fn + fp else 0.0
            obj = math.sqrt(f1p * f1n)
        if obj > best:
            best, best_tau = obj, tau
    return best_tau


def test_threshold_perfectly_separated():
    scores = [(0.1, 0), (0.2, 0), (0.8, 1), (0.9, 1)]
    assert select_threshold(scores) == pytest.approx(0.5)


def test_threshold_all_equal_scores():
    scores = [(0.4, 0), (0.4, 1), (0.4, 1)]
    assert select_threshold(scores) == pytest.approx(0.4)


def test_threshold_matches_brute_force():
    rng = np.random.default_rng(12)
    for trial in range(50):
        n = int(rng.integers(4, 30))
        scores = [
            (float(np.round(rng.random(), 2)), int(rng.integers(2))) for _ in range(n)
        ]
        labels = {y for _, y in scores}
        if labels != {0, 1}:
            continue
        for objective in ThresholdObjective:
            assert select_threshold(scores, objective) == pytest.approx(
                brute_force_threshold(scores, objective)
            ), (trial, objective)


def test_threshold_single_class_errors():
    with pytest.raises(ValueError):
        select_threshold([(0.2, 1), (0.4, 1)])


# --- grid search ----------------------------------------------------------------

def test_grid_shapes_match_search_tables():
    assert len(IDENTIFICATION_GRID) == 25
    assert len(RISK_LASSO_GRID) == 20
    assert {c.C for c in IDENTIFICATION_GRID} == {1e-3, 7.5e-4, 5e-4, 2.5e-4, 1e-4}
    assert {c.tolerance for c in IDENTIFICATION_GRID} == {1.0, 1e-1, 1e-2, 1e-3, 1e-4}
    assert {c.C for c in RISK_LASSO_GRID} == {1.0, 1e-1, 1e-2, 1e-3, 1e-4}
    assert {c.tolerance for c in RISK_LASSO_GRID} == {1e-1, 1e-2, 1e-3, 1e-4}


def test_grid_search_evaluates_all_and_chooses_once():
    train = random_matrix(n_rows=80, n_cols=12, seed=21)
    val = random_matrix(n_rows=40, n_cols=12, seed=22)
    grid = [GlmConfig(Penalty.L1, C=c, tolerance=1e-4) for c in (0.01, 0.1, 1.0)]
    result, model = grid_search(train, val, grid)
    assert len(result.rows) == 3
    assert sum(r.chosen for r in result.rows) == 1
    assert all("val_accuracy" in r.metrics for r in result.rows)
    assert model.config is result.chosen.config


def test_grid_search_single_candidate():
    train = random_matrix(n_rows=40, n_cols=8, seed=31)
    val = random_matrix(n_rows=20, n_cols=8, seed=32)
    grid = [GlmConfig(Penalty.L1, C=0.5, tolerance=1e-4)]
    result, model = grid_search(train, val, grid)
    assert result.chosen.config.C == 0.5


def test_grid_search_failed_candidate_excluded(monkeypatch):
    import claimsight.glm as glm_mod

    train = random_matrix(n_rows=40, n_cols=8, seed=31)
    val = random_matrix(n_rows=20, n_cols=8, seed=32)
    bad = GlmConfig(Penalty.L1, C=123.0, tolerance=1e-4)
    real_fit = glm_mod.fit

    def flaky_fit(matrix, config):
        if config.C == 123.0:
            raise RuntimeError("solver blew up")
        return real_fit(matrix, config)

    monkeypatch.setattr(glm_mod, "fit", flaky_fit)
    grid = [bad, GlmConfig(Penalty.L1, C=0.5, tolerance=1e-4)]
    result, model = grid_search(train, val, grid)
    assert result.rows[0].failed
    assert "solver blew up" in result.rows[0].error
    assert result.chosen is result.rows[1]
    assert model.config.C == 0.5


def test_grid_result_requires_exactly_one_chosen():
    rows = [GridRow(config=GlmConfig()), GridRow(config=GlmConfig())]
    with pytest.raises(ValueError):
        GridResult(rows).chosen


def test_tie_breaks_to_first_in_grid_order():
    train = random_matrix(n_rows=40, n_cols=8, seed=31)
    val = random_matrix(n_rows=20, n_cols=8, seed=32)
    cfg = GlmConfig(Penalty.L1, C=0.5, tolerance=1e-4)
    result, _ = grid_search(train, val, [cfg, cfg])
    assert result.rows[0].chosen and not result.rows[1].chosen


# --- feature ranking and persistence --------------------------------------------

def build_toy_vocab():
    from claimsight.features import FeatureSpec, FeatureVocabulary

    return FeatureVocabulary(FeatureSpec().nontemporal, [(101, 5), (101, 10), (202, 10)], 18, 48)


def test_top_weighted_features_ordering():
    vocab = build_toy_vocab()
    model = LinearModel(
        classes=(0, 1),
        weights=({12: 2.0, 13: -3.0, 14: 1.0},),
        intercepts=(0.0,),
        n_columns=vocab.total_columns,
        vocab_fingerprint=vocab.fingerprint,
        config=GlmConfig(),
        converged=True,
    )
    top = top_weighted_features(model, 2, vocab)
    assert [t.weight for t in top] == [-3.0, 2.0]
    assert top[0].concept_id == 101 and top[0].window == 10
    # k beyond the nonzero count clamps
    assert len(top_weighted_features(model, 10, vocab)) == 3
    zero = LinearModel((0, 1), ({},), (0.0,), vocab.total_columns, vocab.fingerprint,
                       GlmConfig(), True)
    assert top_weighted_features(zero, 3, vocab) == []


def test_model_save_load_round_trip(tmp_path):
    m = random_matrix(n_rows=50, n_cols=12, n_classes=3, seed=77)
    model = fit(m, GlmConfig(Penalty.ELASTIC_NET, C=0.5, l1_ratio=0.25, tolerance=1e-6,
                             class_weighting=ClassWeighting.INVERSE_PRIOR))
    model.threshold = 0.42
    path = tmp_path / "m.model"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.classes == model.classes
    assert loaded.weights == model.weights
    assert loaded.intercepts == model.intercepts
    assert loaded.threshold == 0.42
    assert loaded.config == model.config
    assert loaded.converged == model.converged
    probs_a = predict_proba_matrix(model, m)
    probs_b = predict_proba_matrix(loaded, m)
    assert np.array_equal(probs_a, probs_b)
