"""Gaussian-process regression from frame features to vehicle counts.

Kernel::

    k(x_r, x_s) = b1 (x_r . x_s + 1) + b2 exp(-|x_r - x_s|^2 / b3) + b4 [r == s]

Hyperparameters are fitted by gradient ascent on the log marginal
likelihood in log-parameter space.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from trafficdt.errors import InputError, NumericalError

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
MODEL_HEADER = "trafficdt-gp-model"
MODEL_VERSION = 1

_JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class KernelParams:
    beta1: float
    beta2: float
    beta3: float
    beta4: float

    def __post_init__(self):
        for i, b in enumerate(self.as_array(), start=1):
            if not (np.isfinite(b) and b > 0):
                raise InputError(f"beta{i} must be a positive finite number, got {b}")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta1, self.beta2, self.beta3, self.beta4], dtype=float)

    @classmethod
    def from_array(cls, a) -> "KernelParams":
        return cls(*(float(v) for v in a))


def _finite(name: str, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name} contains non-finite values")
    return a


def kernel_eval(xr, xs, same_index: bool, beta: KernelParams) -> float:
    xr = _finite("xr", xr).ravel()
    xs = _finite("xs", xs).ravel()
    if xr.shape != xs.shape:
        raise InputError(f"vector lengths differ: {xr.size} vs {xs.size}")
    diff = xr - xs
    value = beta.beta1 * (float(xr @ xs) + 1.0) + beta.beta2 * math.exp(
        -float(diff @ diff) / beta.beta3
    )
    if same_index:
        value += beta.beta4
    return value


def _kernel_parts(A: np.ndarray, B: np.ndarray, beta: KernelParams):
    """Linear term, RBF term and squared distances between rows of A and B."""
    lin = beta.beta1 * (A @ B.T + 1.0)
    sq = cdist(A, B, "sqeuclidean")
    rbf = beta.beta2 * np.exp(-sq / beta.beta3)
    return lin, rbf, sq


def kernel_matrix(A, B, beta: KernelParams) -> np.ndarray:
    """Cross-covariance between distinct sample sets (no noise term)."""
    lin, rbf, _ = _kernel_parts(np.atleast_2d(A), np.atleast_2d(B), beta)
    return lin + rbf


def gram_matrix(X, beta: KernelParams) -> np.ndarray:
    X = np.atleast_2d(X)
    K = kernel_matrix(X, X, beta)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += beta.beta4
    return K


def _cholesky(K: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    for j in _JITTERS:
        try:
            return np.linalg.cholesky(K + j * scale * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("Gram matrix is not positive definite even after jitter")


def _lml_value(L: np.ndarray, alpha: np.ndarray, f: np.ndarray) -> float:
    return -0.5 * float(f @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * len(f) * LOG_2PI


def _check_data(X, f) -> tuple[np.ndarray, np.ndarray]:
    X = _finite("X", X)
    if X.ndim == 1:
        X = X[:, None]
    f = _finite("f", f).ravel()
    if X.ndim != 2 or X.shape[0] != f.shape[0]:
        raise InputError(f"X has shape {X.shape} but f has {f.shape[0]} targets")
    if X.shape[0] < 1:
        raise InputError("need at least one training sample")
    return X, f


def _lml_and_grad(X, f, beta: KernelParams, want_grad: bool = True):
    lin, rbf, sq = _kernel_parts(X, X, beta)
    K = lin + rbf
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += beta.beta4
    L = _cholesky(K)
    alpha = cho_solve((L, True), f)
    N = f.shape[0]
    lml = _lml_value(L, alpha, f)
    if not want_grad:
        return lml, None
    # d lml / d log(b_i) = 0.5 tr((alpha alpha' - K^-1) dK/dlog(b_i))
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(N))
    dK = (lin, rbf, rbf * sq / beta.beta3)
    grad = np.array([0.5 * np.sum(W * d) for d in dK] + [0.5 * beta.beta4 * np.trace(W)])
    return lml, grad


def log_marginal_likelihood(X, f, beta: KernelParams) -> float:
    X, f = _check_data(X, f)
    return _lml_and_grad(X, f, beta, want_grad=False)[0]


def lml_gradient(X, f, beta: KernelParams) -> np.ndarray:
    """Gradient of the log marginal likelihood with respect to log(beta)."""
    X, f = _check_data(X, f)
    return _lml_and_grad(X, f, beta)[1]


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    grad_tol: float = 1e-5
    step_tol: float = 1e-10
    armijo: float = 1e-4
    initial_step: float = 0.1
    free: tuple[bool, bool, bool, bool] = (True, True, True, True)
    log_bounds: tuple[float, float] = (-25.0, 25.0)


@dataclass
class GpModel:
    """Conditioned GP: training data, hyperparameters and cached factorization.

    ``Z`` is the standardized copy of ``X`` the kernel actually sees.
    """

    X: np.ndarray
    f: np.ndarray
    beta: KernelParams
    norm_mean: np.ndarray
    norm_scale: np.ndarray
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    lml: float = float("nan")
    n_iter: int = 0

    @property
    def Z(self) -> np.ndarray:
        return (self.X - self.norm_mean) / self.norm_scale

    @property
    def d(self) -> int:
        return self.X.shape[1]


def standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def condition(X, f, beta: KernelParams, standardize: bool = True) -> GpModel:
    """Build a predictive model for fixed hyperparameters."""
    X, f = _check_data(X, f)
    if standardize:
        mean, scale = standardization(X)
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = (X - mean) / scale
    L = _cholesky(gram_matrix(Z, beta))
    alpha = cho_solve((L, True), f)
    lml = _lml_value(L, alpha, f)
    return GpModel(X.copy(), f.copy(), beta, mean, scale, L, alpha, lml)


def default_beta0(d: int) -> KernelParams:
    return KernelParams(1.0, 1.0, float(d), 0.1)


def _maximize(objective, theta0: np.ndarray, opts: FitOptions) -> tuple[np.ndarray, float, int]:
    """Gradient ascent with Armijo backtracking over the free coordinates."""
    free = np.asarray(opts.free, dtype=bool)
    lo, hi = opts.log_bounds
    theta = theta0.copy()
    value, grad = objective(theta)
    step = opts.initial_step
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = np.where(free, grad, 0.0)
        gnorm = float(np.linalg.norm(g))
        if gnorm < opts.grad_tol:
            break
        accepted = False
        while step * gnorm > opts.step_tol:
            cand = np.clip(theta + step * g, lo, hi)
            try:
                cand_value, cand_grad = objective(cand)
            except NumericalError:
                cand_value = -np.inf
            if np.isfinite(cand_value) and cand_value >= value + opts.armijo * float(g @ (cand - theta)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        theta, value, grad = cand, cand_value, cand_grad
        step *= 2.0
    return theta, value, it


def fit(X, f, beta0: Optional[KernelParams] = None, opts: FitOptions = FitOptions()) -> GpModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    Inputs are standardized per dimension with training statistics before
    the kernel sees them. The returned hyperparameters never score below
    ``beta0``.
    """
    X, f = _check_data(X, f)
    if X.shape[0] < 2:
        raise InputError("need at least two training samples to fit")
    mean, scale = standardization(X)
    Z = (X - mean) / scale
    if beta0 is None:
        beta0 = default_beta0(X.shape[1])

    def objective(theta):
        return _lml_and_grad(Z, f, KernelParams.from_array(np.exp(theta)))

    theta0 = np.log(beta0.as_array())
    try:
        start_value, _ = objective(theta0)
    except NumericalError as exc:
        raise NumericalError(f"cannot factorize Gram matrix at beta0: {exc}") from exc
    if not np.isfinite(start_value):
        raise InputError("log marginal likelihood is not finite at beta0")

    theta, value, n_iter = _maximize(objective, theta0, opts)
    beta = KernelParams.from_array(np.exp(theta))
    log.info("GP fit: %d iterations, lml %.4f -> %.4f, beta=%s", n_iter, start_value, value, beta)
    model = condition(X, f, beta)
    model.n_iter = n_iter
    return model


def _prep_query(model: GpModel, xstar) -> np.ndarray:
    xs = _finite("xstar", xstar)
    xs = np.atleast_2d(xs)
    if xs.shape[1] != model.d:
        raise InputError(f"query has {xs.shape[1]} features, model expects {model.d}")
    return (xs - model.norm_mean) / model.norm_scale


def predict_batch(model: GpModel, Xstar) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances for each row of ``Xstar``."""
    Zs = _prep_query(model, Xstar)
    b = model.beta
    Ks = kernel_matrix(Zs, model.Z, b)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol, Ks.T, lower=True)
    prior = b.beta1 * (np.sum(Zs * Zs, axis=1) + 1.0) + b.beta2 + b.beta4
    var = prior - np.sum(v * v, axis=0)
    return mean, np.clip(var, 0.0, None)


def predict(model: GpModel, xstar) -> tuple[float, float]:
    xstar = np.asarray(xstar, dtype=float)
    if xstar.ndim != 1:
        raise InputError("predict takes a single feature vector; use predict_batch")
    mean, var = predict_batch(model, xstar)
    return float(mean[0]), float(var[0])


def round_count(mean) -> np.ndarray | int:
    """Round half up and clamp at zero."""
    out = np.maximum(np.floor(np.asarray(mean, dtype=float) + 0.5), 0.0).astype(int)
    return int(out) if out.ndim == 0 else out


def predict_count(model: GpModel, xstar) -> int:
    return round_count(predict(model, xstar)[0])


def _fmt(values: Sequence[float]) -> str:
    return " ".join(format(float(v), ".17g") for v in values)


def save_model(model: GpModel, path) -> None:
    N, d = model.X.shape
    lines = [
        f"{MODEL_HEADER} {MODEL_VERSION}",
        f"beta {_fmt(model.beta.as_array())}",
        f"norm_mean {_fmt(model.norm_mean)}",
        f"norm_scale {_fmt(model.norm_scale)}",
        f"shape {N} {d}",
        "X",
        *(_fmt(row) for row in model.X),
        "f",
        *(_fmt([v]) for v in model.f),
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> GpModel:
    """Read a model file; the factorization is recomputed from the stored data."""
    lines = Path(path).read_text().splitlines()
    try:
        header = lines[0].split()
        if header[0] != MODEL_HEADER:
            raise InputError(f"{path}: not a model file")
        if int(header[1]) != MODEL_VERSION:
            raise InputError(f"{path}: unsupported model version {header[1]}")
        fields = {}
        for line in lines[1:5]:
            key, *vals = line.split()
            fields[key] = vals
        N, d = (int(v) for v in fields["shape"])
        if lines[5] != "X" or lines[6 + N] != "f":
            raise InputError(f"{path}: malformed data section")
        X = np.array([[float(v) for v in line.split()] for line in lines[6 : 6 + N]]).reshape(N, d)
        f = np.array([float(v) for v in lines[7 + N : 7 + 2 * N]])
        beta = KernelParams.from_array([float(v) for v in fields["beta"]])
        mean = np.array([float(v) for v in fields["norm_mean"]])
        scale = np.array([float(v) for v in fields["norm_scale"]])
    except (IndexError, KeyError, ValueError) as exc:
        raise InputError(f"{path}: malformed model file ({exc})") from exc
    Z = (X - mean) / scale
    L = _cholesky(gram_matrix(Z, beta))
    alpha = cho_solve((L, True), f)
    lml = _lml_value(L, alpha, f)
    return GpModel(X, f, beta, mean, scale, L, alpha, lml)
