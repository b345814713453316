"""Frozen-representation evaluation: linear-probe classification and ridge forecasting.

The probe is multinomial logistic regression with an L2 penalty on the
weights (bias unpenalized), optimized by deterministic full-batch gradient
descent.  The forecasting head is ridge regression with a free intercept,
solved as an augmented least-squares problem, from the representation at the
last context timestamp to the next ``h`` values.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, encode

__all__ = ["linear_probe_classify", "ridge_fit", "forecast_eval"]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe_classify(train_vecs: np.ndarray, train_labels: np.ndarray,
                          test_vecs: np.ndarray, test_labels: np.ndarray,
                          reg: float = 1e-2, tol: float = 1e-6,
                          max_steps: int = 10_000) -> float:
    """Train a softmax probe on frozen vectors and return test accuracy.

    Full-batch gradient descent from zero weights with a Lipschitz-safe step
    size, run until the gradient's max-norm drops below ``tol`` or the step
    budget is exhausted.
    """
    X = np.asarray(train_vecs, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.int64)
    Xt = np.asarray(test_vecs, dtype=np.float64)
    yt = np.asarray(test_labels, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError(f"probe needs >= 2 classes in the training set, got {len(classes)}")
    C = int(classes.max()) + 1
    n, k = X.shape

    Xb = np.concatenate([X, np.ones((n, 1))], axis=1)
    Y = np.zeros((n, C))
    Y[np.arange(n), y] = 1.0

    # gradient Lipschitz bound for softmax CE: 0.5 * sigma_max(X)^2 / n + reg
    sigma2 = np.linalg.norm(Xb, 2) ** 2
    step = 1.0 / (0.5 * sigma2 / n + reg)

    W = np.zeros((k + 1, C))
    penalty = np.ones((k + 1, 1))
    penalty[-1] = 0.0  # bias row unpenalized
    for _ in range(max_steps):
        P = _softmax(Xb @ W)
        G = Xb.T @ (P - Y) / n + reg * (penalty * W)
        if np.abs(G).max() < tol:
            break
        W -= step * G

    pred = np.argmax(np.concatenate([Xt, np.ones((len(Xt), 1))], axis=1) @ W, axis=1)
    return float((pred == yt).mean())


def ridge_fit(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Ridge with free intercept via augmented least squares.

    Minimizes ||X w + b - y||^2 + lam ||w||^2; returns the (k+1, m) solution
    with the intercept as the last row.  Solved by ``lstsq`` on the stacked
    system rather than by the normal equations, so the closed form stays
    available as an independent check.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n, k = X.shape
    A = np.concatenate([
        np.concatenate([X, np.ones((n, 1))], axis=1),
        np.concatenate([np.sqrt(lam) * np.eye(k), np.zeros((k, 1))], axis=1),
    ], axis=0)
    b = np.concatenate([y, np.zeros((k, y.shape[1]))], axis=0)
    theta, *_ = np.linalg.lstsq(A, b, rcond=None)
    return theta


def _ridge_predict(theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.concatenate([X, np.ones((len(X), 1))], axis=1) @ theta


def forecast_eval(enc: dict, enc_cfg: EncoderConfig, series: np.ndarray,
                  horizons: list[int], context: int, train_frac: float = 0.7,
                  lambdas: tuple[float, ...] = (0.1, 1.0, 10.0)) -> dict[int, dict]:
    """Per-horizon MSE/MAE of a ridge head on causal representations.

    The series is encoded once (the encoder is causal, so ``r[t]`` only sees
    ``x[:t+1]``); for each horizon a ridge map from ``r[t]`` to the next ``h``
    values is fit on the chronological training region, with the penalty
    selected on the last quarter of the training rows, and scored on the rest.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    T, F = series.shape
    if not np.isfinite(series).all():
        raise ValueError("forecast series contains non-finite values")
    max_h = max(horizons)
    n_train = int(T * train_frac)
    if context < 1 or n_train <= context or T - n_train < max_h + 1:
        raise ValueError(
            f"series too short: T={T}, context={context}, max horizon={max_h}, "
            f"train region={n_train}"
        )

    with ad.no_grad():
        r = encode(enc, enc_cfg, series[None]).data[0]  # (T, K)

    results: dict[int, dict] = {}
    for h in horizons:
        rows = np.arange(context - 1, T - h)
        feats = r[rows]
        targets = np.stack([series[t + 1: t + 1 + h].reshape(-1) for t in rows])
        is_train = rows < n_train
        Xtr, ytr = feats[is_train], targets[is_train]
        Xte, yte = feats[~is_train], targets[~is_train]
        if len(Xte) == 0 or len(Xtr) < 8:
            raise ValueError(f"not enough rows for horizon {h}")

        n_val = max(1, len(Xtr) // 4)
        Xfit, yfit = Xtr[:-n_val], ytr[:-n_val]
        Xval, yval = Xtr[-n_val:], ytr[-n_val:]
        best_lam, best_err = None, np.inf
        for lam in lambdas:
            theta = ridge_fit(Xfit, yfit, lam)
            err = float(np.mean((_ridge_predict(theta, Xval) - yval) ** 2))
            if err < best_err:
                best_lam, best_err = lam, err
        theta = ridge_fit(Xtr, ytr, best_lam)
        pred = _ridge_predict(theta, Xte)
        results[h] = {
            "mse": float(np.mean((pred - yte) ** 2)),
            "mae": float(np.mean(np.abs(pred - yte))),
            "lambda": best_lam,
        }
    return results
