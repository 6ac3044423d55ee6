"""RBF soft-margin SVM trained by sequential minimal optimisation.

The solver works on the dual

    min_a  1/2 a^T Q a - e^T a   s.t.  0 <= a_i <= C,  y^T a = 0,

with ``Q_ij = y_i y_j K(x_i, x_j)``, choosing each working pair by maximal
violation for the first index and by second-order gain for the second.
It stops when the maximal KKT violation drops below ``tol``.
"""
from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import (
    DegenerateLabels,
    DimensionMismatch,
    MissingFile,
    OocyteError,
    TooFewPerClass,
)
from .features import NormStats, apply_norm, fit_norm
from .imagery import write_json
from .synth import make_rng

DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
MODEL_FORMAT = "oocytekit-svm"
MODEL_VERSION = 1

_TAU = 1e-12


def rbf_kernel(x, z, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise DimensionMismatch(f"vectors of shape {x.shape} and {z.shape}")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(X, Z, gamma: float) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise DimensionMismatch(f"{X.shape[1]} vs {Z.shape[1]} features")
    sq = (X * X).sum(1)[:, None] + (Z * Z).sum(1)[None, :] - 2.0 * X @ Z.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    n_iter: int
    converged: bool
    objective: float = field(default=0.0)


def dual_objective(alpha, y, K) -> float:
    """Dual objective ``sum(a) - 1/2 a^T Q a`` (to be maximised)."""
    ay = np.asarray(alpha) * np.asarray(y, dtype=float)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


def smo_solve(K, y, C: float, tol: float = 1e-3, max_iter: int = 100_000, seed: int = 0) -> SmoResult:
    """Solve the SVM dual for a precomputed kernel matrix.

    ``seed`` fixes a permutation of the samples, which decides ties in the
    working-set selection.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    perm = make_rng(seed).permutation(n)
    inv = np.argsort(perm)
    K = K[np.ix_(perm, perm)]
    y = y[perm]
    Q = (y[:, None] * y[None, :]) * K
    qd = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    converged = False

    it = 0
    for it in range(1, max_iter + 1):
        ygrad = -y * grad
        up = np.where(y > 0, alpha < C, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < C)
        cand = np.where(up, ygrad, -np.inf)
        i = int(np.argmax(cand))
        g_max = cand[i]
        g_min = np.min(np.where(low, ygrad, np.inf))
        if g_max - g_min < tol:
            converged = True
            break

        b = g_max - ygrad
        a = qd[i] + qd - 2.0 * K[i]
        a = np.where(a > 0, a, _TAU)
        gain = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(gain))

        ai_old, aj_old = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(qd[i] + qd[j] + 2.0 * Q[i, j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = max(qd[i] + qd[j] - 2.0 * Q[i, j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += Q[:, i] * (ai - ai_old) + Q[:, j] * (aj - aj_old)

    if converged:
        polished = _polish(alpha, y, Q, C, tol)
        if polished is not None:
            alpha, grad = polished
    rho = _rho(alpha, y, grad, C)
    alpha = alpha[inv]
    y = y[inv]
    K = K[np.ix_(inv, inv)]
    return SmoResult(alpha, rho, it, converged, dual_objective(alpha, y, K))


def _max_violation(alpha, y, grad, C) -> float:
    ygrad = -y * grad
    up = np.where(y > 0, alpha < C, alpha > 0)
    low = np.where(y > 0, alpha > 0, alpha < C)
    if not up.any() or not low.any():
        return 0.0
    return float(ygrad[up].max() - ygrad[low].min())


def _polish(alpha, y, Q, C, tol):
    """Exact optimum on the face of the box fixed by the SMO solution.

    Solves the equality-constrained stationarity system for the free
    variables, holding bounded ones fixed. Returns ``None`` unless the result
    is feasible, no worse, and still meets ``tol``.
    """
    free = (alpha > 0) & (alpha < C)
    F = np.flatnonzero(free)
    if F.size == 0:
        return None
    B = np.flatnonzero(~free)
    m = F.size
    system = np.zeros((m + 1, m + 1))
    system[:m, :m] = Q[np.ix_(F, F)]
    system[:m, m] = y[F]
    system[m, :m] = y[F]
    rhs = np.empty(m + 1)
    rhs[:m] = 1.0 - Q[np.ix_(F, B)] @ alpha[B]
    rhs[m] = -y[B] @ alpha[B]
    try:
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.allclose(system @ sol, rhs, rtol=0.0, atol=1e-9):
        return None
    new = alpha.copy()
    new[F] = sol[:m]
    if np.any(new[F] <= 0) or np.any(new[F] >= C):
        return None
    grad = Q @ new - 1.0
    before = alpha.sum() - 0.5 * alpha @ Q @ alpha
    after = new.sum() - 0.5 * new @ Q @ new
    if after < before or _max_violation(new, y, grad, C) >= tol:
        return None
    return new, grad


def _rho(alpha, y, grad, C) -> float:
    yg = y * grad
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean())
    ub_set = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_set = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yg[ub_set].min() if ub_set.any() else np.inf
    lb = yg[lb_set].max() if lb_set.any() else -np.inf
    return float((ub + lb) / 2.0)


class SMOClassifier(ClassifierMixin, BaseEstimator):
    """Binary RBF-kernel SVM with built-in z-score normalisation.

    Parameters
    ----------
    C : float
        Soft-margin cost.
    gamma : float
        RBF width in ``exp(-gamma * |x - z|^2)``.
    tol : float
        KKT tolerance of the SMO stopping rule.
    max_iter : int
        Cap on SMO pair updates; hitting it keeps the last iterate and emits
        a ``ConvergenceWarning``.
    random_state : int
        Seed of the working-set tie-breaking permutation.
    normalize : bool
        z-score the features with training statistics before the kernel.

    The second entry of ``classes_`` (after sorting) is the positive class,
    so ``+1``, ``True`` and ``"viable"`` are positive. A decision value of
    exactly zero predicts the negative class.
    """

    def __init__(self, C: float = 1.0, gamma: float = 1e-2, tol: float = 1e-3,
                 max_iter: int = 100_000, random_state: int = 0, normalize: bool = True):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state
        self.normalize = normalize

    def fit(self, X, y):
        if not (self.C > 0 and self.gamma > 0):
            raise ValueError("C and gamma must be strictly positive")
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise DegenerateLabels(f"need exactly two classes, got {self.classes_.tolist()}")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        self.n_features_in_ = X.shape[1]
        if self.normalize:
            self.norm_stats_ = fit_norm(X)
        else:
            self.norm_stats_ = NormStats(np.zeros(X.shape[1]), np.ones(X.shape[1]))
        Z = apply_norm(X, self.norm_stats_)
        res = smo_solve(rbf_gram(Z, Z, self.gamma), signs, self.C, self.tol, self.max_iter,
                        self.random_state)
        if not res.converged:
            warnings.warn(f"SMO stopped after {res.n_iter} iterations without meeting tol={self.tol}",
                          ConvergenceWarning, stacklevel=2)
        self.support_ = np.flatnonzero(res.alpha > 0)
        self.support_vectors_ = Z[self.support_]
        self.dual_coef_ = res.alpha[self.support_] * signs[self.support_]
        self.intercept_ = -res.rho
        self.converged_ = res.converged
        self.n_iter_ = res.n_iter
        self.dual_objective_ = res.objective
        return self

    def _check_input(self, X) -> np.ndarray:
        check_is_fitted(self, "dual_coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatch(f"model expects {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def decision_function(self, X) -> np.ndarray:
        Z = apply_norm(self._check_input(X), self.norm_stats_)
        return rbf_gram(Z, self.support_vectors_, self.gamma) @ self.dual_coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])

    def to_dict(self) -> dict:
        check_is_fitted(self, "dual_coef_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "norm": self.norm_stats_.to_dict(),
            "support_vectors": self.support_vectors_.tolist(),
            "dual_coef": self.dual_coef_.tolist(),
            "intercept": float(self.intercept_),
            "converged": bool(self.converged_),
            "n_iter": int(self.n_iter_),
            "metadata": getattr(self, "metadata_", {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SMOClassifier":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise OocyteError("not a version-1 oocytekit SVM model")
        model = cls(**d["params"])
        model.classes_ = np.asarray(d["classes"])
        model.norm_stats_ = NormStats.from_dict(d["norm"])
        model.n_features_in_ = model.norm_stats_.mean.size
        sv = np.asarray(d["support_vectors"], dtype=float)
        model.support_vectors_ = sv.reshape(-1, model.n_features_in_)
        model.dual_coef_ = np.asarray(d["dual_coef"], dtype=float)
        model.intercept_ = float(d["intercept"])
        model.converged_ = bool(d.get("converged", True))
        model.n_iter_ = int(d.get("n_iter", 0))
        model.metadata_ = d.get("metadata", {})
        return model


def save_model(model: SMOClassifier, path) -> None:
    write_json(model.to_dict(), path)


def load_model(path) -> SMOClassifier:
    try:
        return SMOClassifier.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError as exc:
        raise MissingFile(str(path)) from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise OocyteError(f"{path}: malformed model file ({exc})") from exc


# --- model selection --------------------------------------------------------

def stratified_kfold(labels, k: int, seed: int = 0) -> np.ndarray:
    """Fold index (0..k-1) for every sample, balancing each class over folds."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = make_rng(seed)
    folds = np.empty(labels.size, dtype=int)
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if members.size < k:
            raise TooFewPerClass(f"class {cls!r} has {members.size} samples, fewer than k={k}")
        members = rng.permutation(members)
        folds[members] = (np.arange(members.size) + offset) % k
        offset += members.size
    return folds


def stratified_split(labels, test_fraction: float = 0.2, seed: int = 0):
    """Indices ``(train, test)`` holding out ``test_fraction`` of each class."""
    labels = np.asarray(labels)
    rng = make_rng(seed)
    test = []
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        test.extend(members[:int(round(members.size * test_fraction))].tolist())
    test = np.sort(np.asarray(test, dtype=int))
    train = np.setdiff1d(np.arange(labels.size), test)
    return train, test


@dataclass
class CvReport:
    C: float
    gamma: float
    fold_accuracies: list[float]
    mean_accuracy: float
    k: int
    seed: int
    grid: list[dict]

    def to_dict(self) -> dict:
        return {
            "best": {"C": self.C, "gamma": self.gamma},
            "mean_validation_accuracy": self.mean_accuracy,
            "fold_accuracies": self.fold_accuracies,
            "k": self.k,
            "seed": self.seed,
            "grid": self.grid,
        }


def cross_val_accuracy(X, y, C, gamma, folds, tol=1e-3, max_iter=100_000, seed=0) -> list[float]:
    accs = []
    for f in range(int(folds.max()) + 1):
        test = folds == f
        model = SMOClassifier(C=C, gamma=gamma, tol=tol, max_iter=max_iter, random_state=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model.fit(X[~test], y[~test])
        accs.append(float(np.mean(model.predict(X[test]) == y[test])))
    return accs


def grid_search(X, y, C_grid=DEFAULT_C_GRID, gamma_grid=DEFAULT_GAMMA_GRID, k: int = 5,
                seed: int = 0, tol: float = 1e-3, max_iter: int = 100_000) -> CvReport:
    """Exhaustive stratified k-fold search over ``C_grid x gamma_grid``.

    The best point has the highest mean fold accuracy; ties go to the smaller
    C, then the smaller gamma.
    """
    X, y = check_X_y(X, y)
    folds = stratified_kfold(y, k, seed)
    grid = []
    best = None
    for C, gamma in itertools.product(sorted(C_grid), sorted(gamma_grid)):
        accs = cross_val_accuracy(X, y, C, gamma, folds, tol, max_iter, seed)
        mean = float(np.mean(accs))
        grid.append({"C": float(C), "gamma": float(gamma), "fold_accuracies": accs,
                     "mean_accuracy": mean})
        if best is None or mean > best["mean_accuracy"]:
            best = grid[-1]
    return CvReport(best["C"], best["gamma"], best["fold_accuracies"], best["mean_accuracy"],
                    k, seed, grid)


def loo_decision(X, y, C: float, gamma: float, columns=None, tol: float = 1e-3,
                 max_iter: int = 100_000, seed: int = 0) -> np.ndarray:
    """Decision value of every sample from a model trained on all the others.

    ``columns`` selects features before normalisation; statistics are refit
    for each split.
    """
    X, y = check_X_y(X, y)
    if columns is not None:
        X = X[:, list(columns)]
    for cls in np.unique(y):
        if np.count_nonzero(y == cls) < 2:
            raise TooFewPerClass("leave-one-out needs two samples of every class")
    out = np.empty(y.size)
    keep = np.ones(y.size, dtype=bool)
    for i in range(y.size):
        keep[i] = False
        model = SMOClassifier(C=C, gamma=gamma, tol=tol, max_iter=max_iter, random_state=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model.fit(X[keep], y[keep])
        out[i] = model.decision_function(X[i:i + 1])[0]
        keep[i] = True
    return out


def loo_accuracy(X, y, C: float, gamma: float, columns=None, **kwargs) -> float:
    y = np.asarray(y)
    dec = loo_decision(X, y, C, gamma, columns, **kwargs)
    classes = np.unique(y)
    pred = np.where(dec > 0, classes[1], classes[0])
    return float(np.mean(pred == y))
