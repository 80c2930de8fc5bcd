import math

import numpy as np
import pytest

from asthma_risk.explain import (
    exact_shapley,
    kernel_shap,
    model_output_fn,
    rank_features,
    reduce_and_retrain,
    sample_background,
    shapley_kernel_weight,
)
from asthma_risk.data_io import generate_cohort, planted_risk
from asthma_risk.gbdt import GbdtHyperparams, fit_matrix
from asthma_risk.pipeline import train_risk_model
from asthma_risk.schema import FeatureKind, FeatureSchema, FeatureSpec


def test_kernel_weight_example():
    assert shapley_kernel_weight(3, 1) == pytest.approx(1 / 3)
    assert shapley_kernel_weight(3, 0) == math.inf


def test_additive_model():
    rng = np.random.default_rng(0)
    bg = rng.normal(size=(40, 2))
    x = np.array([1.5, -0.7])
    e = kernel_shap(lambda X: X[:, 0] + X[:, 1], x, bg)
    np.testing.assert_allclose(e.phi, x - bg.mean(0), atol=1e-12)


def test_constant_model():
    bg = np.random.default_rng(1).normal(size=(10, 4))
    e = kernel_shap(lambda X: np.full(X.shape[0], 0.7), np.zeros(4), bg)
    assert e.base_value == pytest.approx(0.7)
    np.testing.assert_allclose(e.phi, 0.0, atol=1e-12)


def test_single_feature_and_limits():
    bg = np.arange(5.0)[:, None]
    e = exact_shapley(lambda X: X[:, 0] ** 2, np.array([3.0]), bg)
    assert e.phi[0] == pytest.approx(9.0 - np.mean(bg[:, 0] ** 2))
    with pytest.raises(ValueError):
        exact_shapley(lambda X: X[:, 0], np.zeros(13), np.zeros((1, 13)))
    with pytest.raises(ValueError, match="enumeration infeasible"):
        kernel_shap(lambda X: X[:, 0], np.zeros(26), np.zeros((1, 26)), "full")
    with pytest.raises(ValueError):
        kernel_shap(lambda X: X[:, 0], np.zeros(4), np.zeros((0, 4)))
    with pytest.raises(ValueError):
        kernel_shap(lambda X: X[:, 0], np.zeros(4), np.zeros((3, 4)), 7)


def test_symmetry():
    bg = np.random.default_rng(2).normal(size=(20, 3))
    bg[:, 1] = bg[:, 0]
    x = np.array([0.4, 0.4, -1.0])
    f = lambda X: X[:, 0] * X[:, 1] + np.sin(X[:, 2])  # noqa: E731
    for e in (kernel_shap(f, x, bg), exact_shapley(f, x, bg)):
        assert abs(e.phi[0] - e.phi[1]) <= 1e-9


def tree_model(M, seed, constant=()):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(300, M))
    X[:, list(constant)] = 0.0
    y = (rng.random(300) < 1 / (1 + np.exp(-(X[:, 0] - X[:, 1] * X[:, 2])))).astype(int)
    schema = FeatureSchema(tuple(FeatureSpec(f"x{j}", FeatureKind.CONTINUOUS) for j in range(M)))
    ens = fit_matrix(X, y, schema, GbdtHyperparams(max_rounds=20, max_depth=3, num_leaves=8,
                                                   min_data_in_leaf=10))
    return ens, X


def test_full_enumeration_matches_exact_on_trees():
    ens, X = tree_model(6, 0)
    bg = X[:30]
    for i in range(3):
        a = kernel_shap(ens.margin_matrix, X[100 + i], bg, "full")
        b = exact_shapley(ens.margin_matrix, X[100 + i], bg)
        np.testing.assert_allclose(a.phi, b.phi, atol=1e-9)
        assert abs(a.efficiency_gap) <= 1e-9


def test_unused_feature_gets_zero():
    ens, X = tree_model(6, 1, constant=(4,))
    unused = set(range(6)) - ens.used_features()
    assert 4 in unused
    x = X[5].copy()
    x[4] = 3.0  # never split on, so the value is irrelevant
    e = kernel_shap(ens.margin_matrix, x, X[:25], "full")
    for j in unused:
        assert abs(e.phi[j]) <= 1e-9


def test_sampled_mode_efficiency_and_convergence():
    ens, X = tree_model(8, 2)
    bg = X[:30]
    x = X[200]
    exact = exact_shapley(ens.margin_matrix, x, bg).phi
    e = kernel_shap(ens.margin_matrix, x, bg, 50 * 8, seed=0)
    assert abs(e.efficiency_gap) <= 1e-3
    errors = []
    for n in (16, 32, 64, 128):
        errors.append(np.mean([np.abs(kernel_shap(ens.margin_matrix, x, bg, n, seed=s).phi - exact).mean()
                               for s in range(10)]))
    assert all(a >= b for a, b in zip(errors, errors[1:]))


@pytest.fixture(scope="module")
def two_signal_setup(pre_manifest):
    risk = planted_risk("two_signal", pre_manifest)
    tr = generate_cohort(pre_manifest, 1500, risk, 41)
    params = GbdtHyperparams(log_learning_rate=math.log(0.1), max_depth=2, num_leaves=4,
                             min_data_in_leaf=20, max_rounds=300)
    model = train_risk_model(tr, params, seed=0).model
    return tr, model, params


def test_planted_signals_rank_first(two_signal_setup):
    tr, model, _ = two_signal_setup
    bg = sample_background(tr, 100, 0)
    ranking = rank_features(model, tr.take(range(20)), bg, 0)
    assert set(ranking.top(2)) == {"IsAsthmaEDVisitWithinOneYearPreIndex", "Allergen_Food"}
    again = rank_features(model, tr.take(range(20)), bg, 0)
    assert again.entries == ranking.entries
    assert again.to_csv() == ranking.to_csv()
    vals = [v for _, v in ranking.entries]
    assert vals == sorted(vals, reverse=True)
    unused = set(range(len(tr.schema))) - model.ensemble.used_features()
    means = dict(ranking.entries)
    # sampled mode leaves regression noise on unused features, far below the signals
    for j in unused:
        assert means[tr.schema.names[j]] <= 0.05 * vals[1]
    assert len(ranking.plot_csv().splitlines()) == 1 + 20 * len(tr.schema)
    assert ranking.to_csv(6).count("\n") == 7


def test_probability_and_margin_outputs(two_signal_setup):
    tr, model, _ = two_signal_setup
    X = tr.X[:5]
    np.testing.assert_allclose(model_output_fn(model)(X), model.calibrated_scores(tr.take(range(5))))
    np.testing.assert_array_equal(model_output_fn(model, "margin")(X), model.ensemble.margin_matrix(X))
    with pytest.raises(ValueError):
        model_output_fn(model, "logit")


def test_reduce_and_retrain_bounds(two_signal_setup, pre_manifest):
    tr, model, params = two_signal_setup
    risk = planted_risk("two_signal", pre_manifest)
    va = generate_cohort(pre_manifest, 800, risk, 42)
    bg = sample_background(tr, 100, 0)
    ranking = rank_features(model, tr.take(range(20)), bg, 0)
    M = len(tr.schema)
    full = reduce_and_retrain(tr, ranking, M, params, valid=va)
    assert full.model.ensemble.dumps() == model.ensemble.dumps()
    k2 = reduce_and_retrain(tr, ranking, 2, params, valid=va)
    assert k2.report.auc >= full.report.auc - 0.02
    k1 = reduce_and_retrain(tr, ranking, 1, params, valid=va)
    assert k1.report.auc < full.report.auc - 0.02
    # baselines are scored on the full records even for a reduced model
    assert k2.report.baseline("cheo").f1 == full.report.baseline("cheo").f1
    with pytest.raises(ValueError):
        reduce_and_retrain(tr, ranking, M + 1, params)
    with pytest.raises(ValueError):
        reduce_and_retrain(tr, ranking, 0, params)
