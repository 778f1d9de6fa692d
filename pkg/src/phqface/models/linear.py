"""L2 logistic regression (gradient descent) and elastic net (coordinate descent)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

FORMAT_VERSION = 1


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite values in model input")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_loss(w, b, X, y, l2, sample_weight=None):
    z = X @ w + b
    per = np.logaddexp(0.0, z) - y * z
    if sample_weight is not None:
        per = per * sample_weight
    return float(per.mean() + 0.5 * l2 * (w @ w))


def logistic_grad(w, b, X, y, l2, sample_weight=None):
    resid = _sigmoid(X @ w + b) - y
    if sample_weight is not None:
        resid = resid * sample_weight
    n = X.shape[0]
    return X.T @ resid / n + l2 * w, float(resid.sum() / n)


@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    l2_strength: float
    iterations: int = 0
    grad_norm: float = float("nan")
    converged: bool = True
    loss_history: list = field(default_factory=list)
    task: str = "classify"

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.weights):
            raise ValueError(f"expected {len(self.weights)} features, got {X.shape}")
        return _sigmoid(X @ self.weights + self.intercept)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "logistic",
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "l2_strength": self.l2_strength,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d) -> "LogisticModel":
        return cls(np.array(d["weights"], dtype=float), float(d["intercept"]), float(d["l2_strength"]),
                   int(d["iterations"]), float(d["grad_norm"]), bool(d["converged"]))


def fit_logistic(X, y, l2: float = 0.01, max_iter: int = 500, tol: float = 1e-6,
                 sample_weight=None) -> LogisticModel:
    """Minimize mean log-loss + (l2/2)||w||^2 by gradient descent.

    Steps start from a Barzilai-Borwein estimate and are cut back until the
    Armijo condition holds, so the recorded loss never increases. The
    intercept is not penalized.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    sw = None if sample_weight is None else np.asarray(sample_weight, dtype=float)
    w = np.zeros(X.shape[1])
    b = 0.0
    loss = logistic_loss(w, b, X, y, l2, sw)
    gw, gb = logistic_grad(w, b, X, y, l2, sw)
    history = [loss]
    step = 1.0
    it = 0
    gnorm = float(np.sqrt(gw @ gw + gb * gb))
    while gnorm > tol and it < max_iter:
        g2 = gnorm * gnorm
        t = step
        while True:
            w_new, b_new = w - t * gw, b - t * gb
            new_loss = logistic_loss(w_new, b_new, X, y, l2, sw)
            if new_loss <= loss - 1e-4 * t * g2 or t < 1e-16:
                break
            t *= 0.5
        if new_loss > loss:
            break
        gw_new, gb_new = logistic_grad(w_new, b_new, X, y, l2, sw)
        s = np.append(w_new - w, b_new - b)
        d = np.append(gw_new - gw, gb_new - gb)
        sd = float(s @ d)
        step = float(s @ s) / sd if sd > 0 else 2.0 * t
        w, b, loss, gw, gb = w_new, b_new, new_loss, gw_new, gb_new
        history.append(loss)
        gnorm = float(np.sqrt(gw @ gw + gb * gb))
        it += 1
    converged = gnorm <= tol
    if not converged:
        warnings.warn(f"logistic regression stopped after {it} iterations (|grad|={gnorm:.2e})")
    return LogisticModel(w, float(b), float(l2), it, gnorm, converged, history)


@numba.njit(cache=True, nogil=True)
def _enet_objective(X, y, beta, lam, alpha):
    r = y - X @ beta
    n = X.shape[0]
    return (r @ r) / (2.0 * n) + lam * (alpha * np.abs(beta).sum() + 0.5 * (1.0 - alpha) * (beta @ beta))


@numba.njit(cache=True, nogil=True)
def _coordinate_descent(X, y, lam, alpha, max_sweeps, tol, beta, objectives):
    n, p = X.shape
    z = np.empty(p)
    for j in range(p):
        z[j] = (X[:, j] @ X[:, j]) / n
    r = y - X @ beta
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    sweeps = 0
    max_delta = 0.0
    gap_scale = max((y @ y) / n, 1e-300)
    while sweeps < max_sweeps:
        max_delta = 0.0
        for j in range(p):
            if z[j] == 0.0:
                continue
            col = X[:, j]
            rho = (col @ r) / n + z[j] * beta[j]
            if rho > l1:
                new = (rho - l1) / (z[j] + l2)
            elif rho < -l1:
                new = (rho + l1) / (z[j] + l2)
            else:
                new = 0.0
            d = new - beta[j]
            if d != 0.0:
                r -= d * col
                beta[j] = new
                if abs(d) > max_delta:
                    max_delta = abs(d)
        objectives[sweeps] = _enet_objective(X, y, beta, lam, alpha)
        sweeps += 1
        # Step size relative to the coefficient scale (absolute below 1).
        scale = max(1.0, np.abs(beta).max()) if p > 0 else 1.0
        if max_delta <= tol * scale:
            break
        # Correlated columns crawl; accept once the duality gap certifies optimality.
        # (Only a valid certificate with an l1 term.)
        if l1 > 0 and sweeps % 10 == 0 and _gap_nb(X, y, beta, r, lam, alpha) <= tol * gap_scale:
            break
    return sweeps, max_delta


@numba.njit(cache=True, nogil=True)
def _gap_nb(X, y, beta, r, lam, alpha):
    n = X.shape[0]
    l1_reg = alpha * lam * n
    l2_reg = (1.0 - alpha) * lam * n
    xta = X.T @ r - l2_reg * beta
    dual_norm = np.abs(xta).max() if xta.size > 0 else 0.0
    r2 = r @ r
    const = 1.0
    gap = r2
    if l1_reg > 0 and dual_norm > l1_reg:
        const = l1_reg / dual_norm
        gap = 0.5 * (r2 + r2 * const * const)
    gap += l1_reg * np.abs(beta).sum() - const * (r @ y) + 0.5 * l2_reg * (1 + const * const) * (beta @ beta)
    return gap / n


def _duality_gap(X, y, beta, lam, alpha):
    n = X.shape[0]
    l1_reg, l2_reg = alpha * lam * n, (1.0 - alpha) * lam * n
    R = y - X @ beta
    XtA = X.T @ R - l2_reg * beta
    dual_norm = float(np.max(np.abs(XtA))) if XtA.size else 0.0
    R2 = float(R @ R)
    if l1_reg > 0 and dual_norm > l1_reg:  # pure ridge needs no dual rescaling
        const = l1_reg / dual_norm
        gap = 0.5 * (R2 + R2 * const * const)
    else:
        const = 1.0
        gap = R2
    gap += l1_reg * np.abs(beta).sum() - const * float(R @ y) + 0.5 * l2_reg * (1 + const * const) * float(beta @ beta)
    return float(gap / n)


@dataclass
class ElasticNetModel:
    coef: np.ndarray
    intercept: float
    lam: float
    alpha_mix: float
    sweeps: int = 0
    max_change: float = 0.0
    duality_gap: float = float("nan")
    objective_history: list = field(default_factory=list)
    task: str = "regress"

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.coef):
            raise ValueError(f"expected {len(self.coef)} features, got {X.shape}")
        return X @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "elastic_net",
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "lambda": self.lam,
            "alpha_mix": self.alpha_mix,
            "sweeps": self.sweeps,
            "max_change": self.max_change,
            "duality_gap": self.duality_gap,
        }

    @classmethod
    def from_dict(cls, d) -> "ElasticNetModel":
        return cls(np.array(d["coef"], dtype=float), float(d["intercept"]), float(d["lambda"]),
                   float(d["alpha_mix"]), int(d["sweeps"]), float(d["max_change"]), float(d["duality_gap"]))


def fit_elastic_net(X, y, lam: float = 0.1, alpha_mix: float = 0.5, max_sweeps: int = 1000,
                    tol: float = 1e-8) -> ElasticNetModel:
    """Cyclic coordinate descent on

        (1/2n)||y - X b - b0||^2 + lam * (alpha_mix ||b||_1 + (1 - alpha_mix)/2 ||b||^2)

    with an unpenalized intercept handled by centering.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_finite(X, y)
    if lam < 0 or not 0.0 <= alpha_mix <= 1.0:
        raise ValueError("need lam >= 0 and alpha_mix in [0, 1]")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = np.asfortranarray(X - x_mean)
    yc = y - y_mean
    beta = np.zeros(X.shape[1])
    objectives = np.empty(max_sweeps)
    sweeps, max_delta = _coordinate_descent(Xc, yc, float(lam), float(alpha_mix), int(max_sweeps),
                                            float(tol), beta, objectives)
    gap = _duality_gap(Xc, yc, beta, lam, alpha_mix)
    step_ok = max_delta <= tol * max(1.0, float(np.abs(beta).max(initial=0.0)))
    gap_ok = lam * alpha_mix > 0 and gap <= tol * max(float(yc @ yc) / len(yc), 1e-300)
    if not step_ok and not gap_ok:
        warnings.warn(f"elastic net did not converge in {max_sweeps} sweeps (max change {max_delta:.2e}, "
                      f"duality gap {gap:.2e})")
    return ElasticNetModel(beta, float(y_mean - x_mean @ beta), float(lam), float(alpha_mix), int(sweeps),
                           float(max_delta), gap, objectives[:sweeps].tolist())
