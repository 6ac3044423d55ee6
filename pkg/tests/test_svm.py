import math

import numpy as np
import pytest
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import SVC

from oracles import brute_force_dual

from oocytekit.errors import DegenerateLabels, DimensionMismatch, TooFewPerClass
from oocytekit.svm import (
    SMOClassifier,
    grid_search,
    load_model,
    loo_accuracy,
    rbf_gram,
    rbf_kernel,
    save_model,
    smo_solve,
    stratified_kfold,
    stratified_split,
)


def six_points(seed):
    rng = np.random.default_rng(seed)
    while True:
        X = rng.normal(size=(6, 2))
        y = rng.choice([-1, 1], size=6)
        if abs(y.sum()) < 6:
            return X, y


def test_kernel_examples():
    assert rbf_kernel((0, 0), (3, 4), 0.01) == pytest.approx(math.exp(-0.25), abs=1e-15)
    assert rbf_kernel((0, 0), (300, 400), 1e-12) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        rbf_kernel((0, 0), (1, 2, 3), 1.0)
    X = np.random.default_rng(0).normal(size=(5, 3))
    G = rbf_gram(X, X, 0.3)
    for i in range(5):
        for j in range(5):
            assert G[i, j] == pytest.approx(rbf_kernel(X[i], X[j], 0.3), abs=1e-15)


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("C", [0.5, 5.0])
def test_smo_matches_brute_force(seed, C):
    X, y = six_points(seed)
    K = rbf_gram(X, X, 0.5)
    res = smo_solve(K, y, C)
    best, alpha, _ = brute_force_dual(K, y, C)
    assert res.converged
    assert abs(res.objective - best) < 1e-6
    assert np.all(res.alpha >= 0) and np.all(res.alpha <= C)
    assert abs(res.alpha @ y) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_kkt_margin_of_free_vectors(seed):
    X, y = six_points(100 + seed)
    model = SMOClassifier(C=5.0, gamma=0.5, normalize=False).fit(X, y)
    alpha = np.zeros(6)
    alpha[model.support_] = np.abs(model.dual_coef_)
    free = (alpha > 1e-8) & (alpha < 5.0 - 1e-8)
    margins = y[free] * model.decision_function(X[free])
    assert np.all(np.abs(margins - 1) <= model.tol)


def test_symmetric_pair():
    X = np.array([[-1.0], [1.0]])
    model = SMOClassifier(C=100.0, gamma=0.5, normalize=False).fit(X, [-1, 1])
    assert abs(model.decision_function([[0.0]])[0]) < 1e-3
    assert model.predict([[-0.5], [0.5]]).tolist() == [-1, 1]


def test_zero_decision_is_negative():
    X = np.array([[-1.0], [1.0]])
    model = SMOClassifier(C=100.0, gamma=0.5, normalize=False).fit(X, ["nonviable", "viable"])
    model.dual_coef_ = np.zeros_like(model.dual_coef_)
    model.intercept_ = 0.0
    assert model.decision_function([[0.3]])[0] == 0.0
    assert model.predict([[0.3]])[0] == "nonviable"


def test_single_class_rejected():
    with pytest.raises(DegenerateLabels):
        SMOClassifier().fit(np.zeros((3, 2)), [1, 1, 1])


def test_agrees_with_libsvm():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 4))
    y = np.where(X[:, 0] + 0.5 * X[:, 1] ** 2 > 0.3, 1, -1)
    ours = SMOClassifier(C=3.0, gamma=0.2, tol=1e-6, normalize=False).fit(X, y)
    ref = SVC(C=3.0, gamma=0.2, tol=1e-6).fit(X, y)
    probe = rng.normal(size=(40, 4))
    np.testing.assert_allclose(ours.decision_function(probe), ref.decision_function(probe), atol=1e-4)


def test_duplicating_training_points_keeps_labels():
    rng = np.random.default_rng(6)
    X = np.r_[rng.normal(-2, 0.5, size=(5, 2)), rng.normal(2, 0.5, size=(5, 2))]
    y = np.r_[-np.ones(5), np.ones(5)]
    probe = rng.normal(0, 2, size=(30, 2))
    a = SMOClassifier(C=100.0, gamma=0.5).fit(X, y).predict(probe)
    b = SMOClassifier(C=100.0, gamma=0.5).fit(np.r_[X, X], np.r_[y, y]).predict(probe)
    np.testing.assert_array_equal(a, b)


def test_deterministic_fit():
    X, y = six_points(1)
    a = SMOClassifier(C=1.0, gamma=0.3, random_state=7).fit(X, y)
    b = SMOClassifier(C=1.0, gamma=0.3, random_state=7).fit(X, y)
    assert a.to_dict() == b.to_dict()


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 24))
    y = np.where(X[:, 3] > 0, 1, -1)
    model = SMOClassifier(C=10.0, gamma=0.01).fit(X, y)
    save_model(model, tmp_path / "model.json")
    back = load_model(tmp_path / "model.json")
    probe = rng.normal(size=(25, 24))
    np.testing.assert_allclose(back.decision_function(probe), model.decision_function(probe),
                               rtol=0, atol=1e-12)
    with pytest.raises(DimensionMismatch):
        back.decision_function(probe[:, :5])


def test_convergence_warning():
    X = np.random.default_rng(0).normal(size=(30, 2))
    y = np.where(X[:, 0] > 0, 1, -1)
    with pytest.warns(ConvergenceWarning):
        model = SMOClassifier(C=10.0, gamma=1.0, max_iter=2).fit(X, y)
    assert not model.converged_


def test_stratified_kfold_examples():
    y = np.r_[np.ones(10), -np.ones(10)]
    folds = stratified_kfold(y, 5, seed=0)
    for f in range(5):
        assert np.sum((folds == f) & (y > 0)) == 2
        assert np.sum((folds == f) & (y < 0)) == 2
    y = np.r_[np.ones(11), -np.ones(10)]
    folds = stratified_kfold(y, 5, seed=1)
    assert {int(np.sum((folds == f) & (y > 0))) for f in range(5)} <= {2, 3}
    assert {int(np.sum((folds == f) & (y < 0))) for f in range(5)} == {2}
    np.testing.assert_array_equal(folds, stratified_kfold(y, 5, seed=1))
    with pytest.raises(TooFewPerClass):
        stratified_kfold(np.r_[np.ones(3), -np.ones(10)], 5)


def test_stratified_split_proportions():
    y = np.r_[np.ones(50), -np.ones(30)]
    train, test = stratified_split(y, 0.2, seed=3)
    assert np.sum(y[test] > 0) == 10 and np.sum(y[test] < 0) == 6
    assert sorted(np.r_[train, test].tolist()) == list(range(80))


def blobs(n, seed, sep=4.0):
    rng = np.random.default_rng(seed)
    X = np.r_[rng.normal(0, 1, size=(n, 3)), rng.normal(sep, 1, size=(n, 3))]
    return X, np.r_[-np.ones(n, int), np.ones(n, int)]


def test_grid_search_properties():
    X, y = blobs(15, 0)
    single = grid_search(X, y, [1.0], [0.1], k=3)
    assert (single.C, single.gamma) == (1.0, 0.1)
    rep = grid_search(X, y, [0.1, 1.0, 10.0], [0.01, 0.1, 1.0], k=3, seed=2)
    assert all(rep.mean_accuracy >= g["mean_accuracy"] for g in rep.grid)
    first = next(g for g in rep.grid if g["mean_accuracy"] == rep.mean_accuracy)
    assert (first["C"], first["gamma"]) == (rep.C, rep.gamma)
    assert rep.to_dict() == grid_search(X, y, [0.1, 1.0, 10.0], [0.01, 0.1, 1.0], k=3, seed=2).to_dict()


def test_loo_examples():
    X, y = blobs(10, 1, sep=8.0)
    assert loo_accuracy(X, y, 1.0, 0.1) == 1.0
    assert loo_accuracy(X, y, 1.0, 0.1, columns=range(3)) == loo_accuracy(X, y, 1.0, 0.1)
    rng = np.random.default_rng(4)
    Xr = rng.normal(size=(60, 5))
    yr = rng.permutation(np.r_[np.ones(30, int), -np.ones(30, int)])
    assert abs(loo_accuracy(Xr, yr, 1.0, 0.1) - 0.5) <= 0.15
