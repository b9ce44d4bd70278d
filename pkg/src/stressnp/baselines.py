"""Min-max scaling and the three general classifiers.

All solvers are self-contained so fitted models are deterministic
function of the training data: L1-penalized logistic regression by
proximal gradient, an RBF-kernel SVM by sequential minimal optimization
with Platt-scaled probabilities, and a k-nearest-neighbor vote.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

LASSO_REL_TOL = 1e-9
LASSO_MAX_ITER = 100_000
SMO_KKT_TOL = 1e-3
PLATT_FOLDS = 3


def _check_finite(X: np.ndarray, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------


@dataclass
class ScalerParams:
    col_min: np.ndarray
    col_max: np.ndarray


def scaler_fit(X_train: np.ndarray) -> ScalerParams:
    X_train = _check_finite(X_train)
    return ScalerParams(X_train.min(axis=0), X_train.max(axis=0))


def scaler_apply(p: ScalerParams, X: np.ndarray) -> np.ndarray:
    """Map to [-1, 1] via the training min/max; constant columns map to 0."""
    X = np.asarray(X, dtype=np.float64)
    span = p.col_max - p.col_min
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (X - p.col_min) / safe - 1.0
    return np.where(span > 0, out, 0.0)


# ---------------------------------------------------------------------------
# L1-penalized logistic regression
# ---------------------------------------------------------------------------


@dataclass
class LassoModel:
    weights: np.ndarray
    bias: float
    C: float = 1.0


def lasso_objective(w: np.ndarray, b: float, X: np.ndarray, y_pm: np.ndarray, C: float) -> float:
    u = X @ w + b
    return float(np.abs(w).sum() + C * np.logaddexp(0.0, -y_pm * u).sum())


def lasso_train(X: np.ndarray, y: np.ndarray, C: float = 1.0) -> LassoModel:
    """Minimize ||w||_1 + C * sum log(1 + exp(-y(Xw + b))), bias unpenalized.

    Proximal gradient (soft-thresholding) with backtracking line search;
    stops at relative objective change < 1e-9 or 1e5 iterations.
    """
    X = _check_finite(X)
    y = np.asarray(y)
    if not np.all(np.isin(y, (0, 1))):
        raise ValueError("labels must be 0/1")
    y_pm = np.where(y == 1, 1.0, -1.0)

    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    step = 1.0
    obj = lasso_objective(w, b, X, y_pm, C)

    for _ in range(LASSO_MAX_ITER):
        margin = y_pm * (X @ w + b)
        dloss = C * (-y_pm) * expit(-margin)
        grad_w = X.T @ dloss
        grad_b = float(dloss.sum())
        g_val = float(C * np.logaddexp(0.0, -margin).sum())

        while True:
            w_new = _soft_threshold(w - step * grad_w, step)
            b_new = b - step * grad_b
            dw = w_new - w
            db = b_new - b
            quad = g_val + grad_w @ dw + grad_b * db + (dw @ dw + db * db) / (2 * step)
            margin_new = y_pm * (X @ w_new + b_new)
            if C * np.logaddexp(0.0, -margin_new).sum() <= quad + 1e-12:
                break
            step *= 0.5
            if step < 1e-16:
                break
        w, b = w_new, b_new
        new_obj = lasso_objective(w, b, X, y_pm, C)
        if abs(obj - new_obj) <= LASSO_REL_TOL * max(1.0, abs(obj)):
            obj = new_obj
            break
        obj = new_obj
        step = min(step * 2.0, 1.0)
    return LassoModel(w, float(b), C)


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def lasso_proba(m: LassoModel, X: np.ndarray) -> np.ndarray:
    return expit(np.asarray(X, dtype=np.float64) @ m.weights + m.bias)


# ---------------------------------------------------------------------------
# RBF-kernel SVM (SMO) with Platt scaling
# ---------------------------------------------------------------------------


@dataclass
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i at the support vectors, in [-C, C]
    bias: float
    gamma: float
    C: float
    platt_a: float
    platt_b: float


def _rbf(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


class _Smo:
    """Sequential minimal optimization on the soft-margin dual."""

    def __init__(self, X, y_pm, C, gamma, tol=SMO_KKT_TOL):
        self.X = X
        self.y = y_pm
        self.C = C
        self.tol = tol
        self.n = len(y_pm)
        self.K = _rbf(X, X, gamma)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.errors = -y_pm.astype(np.float64)  # f(x)=0 initially

    def decision(self, i: int) -> float:
        return float((self.alpha * self.y) @ self.K[:, i] + self.b)

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        a1, a2 = self.alpha[i1], self.alpha[i2]
        y1, y2 = self.y[i1], self.y[i2]
        e1, e2 = self.errors[i1], self.errors[i2]
        s = y1 * y2
        if s > 0:
            lo, hi = max(0.0, a1 + a2 - self.C), min(self.C, a1 + a2)
        else:
            lo, hi = max(0.0, a2 - a1), min(self.C, self.C + a2 - a1)
        if lo >= hi:
            return False
        k11, k12, k22 = self.K[i1, i1], self.K[i1, i2], self.K[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta <= 0:
            # only duplicate points under an RBF kernel; nothing to gain
            return False
        a2_new = min(max(a2 + y2 * (e1 - e2) / eta, lo), hi)
        if abs(a2_new - a2) < 1e-8 * (a2_new + a2 + 1e-8):
            return False
        a1_new = a1 + s * (a2 - a2_new)

        da1, da2 = a1_new - a1, a2_new - a2
        b1 = self.b - e1 - y1 * da1 * k11 - y2 * da2 * k12
        b2 = self.b - e2 - y1 * da1 * k12 - y2 * da2 * k22
        if 0 < a1_new < self.C:
            b_new = b1
        elif 0 < a2_new < self.C:
            b_new = b2
        else:
            b_new = (b1 + b2) / 2.0

        db = b_new - self.b
        self.alpha[i1], self.alpha[i2] = a1_new, a2_new
        self.errors += y1 * da1 * self.K[i1] + y2 * da2 * self.K[i2] + db
        self.b = b_new
        return True

    def examine(self, i2: int) -> bool:
        y2, a2, e2 = self.y[i2], self.alpha[i2], self.errors[i2]
        r2 = e2 * y2
        if (r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0):
            non_bound = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
            if non_bound.size > 1:
                i1 = int(non_bound[np.argmax(np.abs(self.errors[non_bound] - e2))])
                if self.take_step(i1, i2):
                    return True
            for i1 in np.roll(non_bound, -(i2 % max(non_bound.size, 1))):
                if self.take_step(int(i1), i2):
                    return True
            for i1 in np.roll(np.arange(self.n), -(i2 + 1)):
                if self.take_step(int(i1), i2):
                    return True
        return False

    def solve(self, max_sweeps: int = 1000) -> None:
        num_changed = 0
        examine_all = True
        sweeps = 0
        while (num_changed > 0 or examine_all) and sweeps < max_sweeps:
            sweeps += 1
            num_changed = 0
            if examine_all:
                idx = range(self.n)
            else:
                idx = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
            for i in idx:
                num_changed += int(self.examine(int(i)))
            if examine_all:
                examine_all = False
            elif num_changed == 0:
                examine_all = True


def _platt_fit(decision: np.ndarray, y: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Newton fit of p = 1 / (1 + exp(A f + B)) with smoothed targets."""
    prior1 = int((y == 1).sum())
    prior0 = len(y) - prior1
    hi_t = (prior1 + 1.0) / (prior1 + 2.0)
    lo_t = 1.0 / (prior0 + 2.0)
    t = np.where(y == 1, hi_t, lo_t)
    f = np.asarray(decision, dtype=np.float64)

    a, b = 0.0, math.log((prior0 + 1.0) / (prior1 + 1.0))
    sigma = 1e-12

    def nll(a_, b_):
        z = f * a_ + b_
        return float(np.sum(np.where(z >= 0, t * z + np.logaddexp(0, -z), (t - 1) * z + np.logaddexp(0, z))))

    fval = nll(a, b)
    for _ in range(max_iter):
        z = f * a + b
        p = expit(-z)  # P(y=1)
        d1 = t - p
        d2 = p * (1 - p)
        g1 = float((f * d1).sum())
        g2 = float(d1.sum())
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        h11 = float((f * f * d2).sum()) + sigma
        h22 = float(d2.sum()) + sigma
        h21 = float((f * d2).sum())
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            a_new, b_new = a + step * da, b + step * db
            f_new = nll(a_new, b_new)
            if f_new < fval + 1e-4 * step * gd:
                a, b, fval = a_new, b_new, f_new
                break
            step /= 2.0
        else:
            break
    return a, b


def _stratified_folds(y: np.ndarray, n_folds: int) -> np.ndarray:
    """Deterministic fold ids: each class assigned round-robin by row index."""
    fold = np.zeros(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        fold[idx] = np.arange(len(idx)) % n_folds
    return fold


def svm_train(X: np.ndarray, y: np.ndarray, C: float = 1.0, gamma: float | None = None) -> SvmModel:
    """SMO-trained RBF SVM; gamma defaults to 1/n_features.

    Platt coefficients are fitted on out-of-sample decision values from an
    internal deterministic 3-fold split (falling back to in-sample values
    when the data are too small to split).
    """
    X = _check_finite(X)
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("svm training needs both classes")
    if gamma is None:
        gamma = 1.0 / X.shape[1]
    y_pm = np.where(y == 1, 1.0, -1.0)

    fold = _stratified_folds(y, PLATT_FOLDS)
    oos_f: list[np.ndarray] = []
    oos_y: list[np.ndarray] = []
    for k in range(PLATT_FOLDS):
        tr = fold != k
        te = ~tr
        if te.sum() == 0 or len(np.unique(y[tr])) < 2:
            continue
        sub = _Smo(X[tr], y_pm[tr], C, gamma)
        sub.solve()
        dec = _rbf(X[te], X[tr], gamma) @ (sub.alpha * sub.y) + sub.b
        oos_f.append(dec)
        oos_y.append(y[te])

    smo = _Smo(X, y_pm, C, gamma)
    smo.solve()
    full_dec = _rbf(X, X, gamma) @ (smo.alpha * smo.y) + smo.b
    if oos_f and len(np.unique(np.concatenate(oos_y))) == 2:
        platt_a, platt_b = _platt_fit(np.concatenate(oos_f), np.concatenate(oos_y))
    else:
        platt_a, platt_b = _platt_fit(full_dec, y)

    sv = smo.alpha > 1e-12
    return SvmModel(X[sv].copy(), (smo.alpha * y_pm)[sv].copy(), float(smo.b), float(gamma),
                    float(C), float(platt_a), float(platt_b))


def svm_decision(m: SvmModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return _rbf(X, m.support_vectors, m.gamma) @ m.dual_coef + m.bias


def svm_proba(m: SvmModel, X: np.ndarray) -> np.ndarray:
    return expit(-(m.platt_a * svm_decision(m, X) + m.platt_b))


# ---------------------------------------------------------------------------
# k-nearest neighbors
# ---------------------------------------------------------------------------


@dataclass
class KnnModel:
    X_train: np.ndarray
    y_train: np.ndarray
    k: int = 20


def knn_train(X: np.ndarray, y: np.ndarray, k: int = 20) -> KnnModel:
    X = _check_finite(X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if k > len(X):
        raise ValueError(f"k={k} exceeds n_train={len(X)}")
    return KnnModel(X.copy(), y.copy(), k)


def knn_proba(m: KnnModel, X: np.ndarray) -> np.ndarray:
    """Fraction of positives among the k nearest training rows.

    Euclidean distance; exact distance ties broken by lower training index.
    """
    if len(m.X_train) == 0:
        raise ValueError("empty training set")
    X = np.asarray(X, dtype=np.float64)
    d2 = ((X[:, None, :] - m.X_train[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")[:, : m.k]
    return m.y_train[order].mean(axis=1)


# ---------------------------------------------------------------------------
# serialization (round-trips reproduce predictions bit-exactly)
# ---------------------------------------------------------------------------


def model_to_dict(model) -> dict:
    if isinstance(model, ScalerParams):
        return {"kind": "scaler", "col_min": model.col_min.tolist(), "col_max": model.col_max.tolist()}
    if isinstance(model, LassoModel):
        return {"kind": "lasso", "C": model.C, "weights": model.weights.tolist(), "bias": model.bias}
    if isinstance(model, SvmModel):
        return {
            "kind": "svm",
            "C": model.C,
            "gamma": model.gamma,
            "support_vectors": model.support_vectors.tolist(),
            "dual_coef": model.dual_coef.tolist(),
            "bias": model.bias,
            "platt_a": model.platt_a,
            "platt_b": model.platt_b,
        }
    if isinstance(model, KnnModel):
        return {"kind": "knn", "k": model.k, "X_train": model.X_train.tolist(), "y_train": model.y_train.tolist()}
    raise TypeError(f"unknown model type {type(model)!r}")


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "scaler":
        return ScalerParams(np.array(d["col_min"]), np.array(d["col_max"]))
    if kind == "lasso":
        return LassoModel(np.array(d["weights"]), d["bias"], d["C"])
    if kind == "svm":
        return SvmModel(
            np.array(d["support_vectors"]), np.array(d["dual_coef"]), d["bias"],
            d["gamma"], d["C"], d["platt_a"], d["platt_b"],
        )
    if kind == "knn":
        return KnnModel(np.array(d["X_train"]), np.array(d["y_train"], dtype=np.int64), d["k"])
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path: str | Path):
    return model_from_dict(json.loads(Path(path).read_text()))
