"""Linear dynamical systems (dynamic textures).

A dynamic texture is the output of

    x[t+1] = F x[t] + w[t],   w ~ N(0, Q)
    y[t]   = H x[t] + v[t],   v ~ N(0, R)
    x[1]   ~ N(mu, P)

Observation sequences are arrays of shape ``(m, T)``, one column per time
step. Batched routines take ``(N, m, T)`` stacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from trafficdt.errors import InputError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))

_SYM_TOL = 1e-10
_PSD_TOL = 1e-10
_JITTER_SCALE = 1e-8
_JITTER_STEPS = 6


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def project_psd(a: np.ndarray) -> np.ndarray:
    """Nearest symmetric PSD matrix in Frobenius norm (negative eigenvalues clipped)."""
    a = symmetrize(np.asarray(a, dtype=float))
    if a.size == 0:
        return a
    w, v = np.linalg.eigh(a)
    w = np.clip(w, 0.0, None)
    return symmetrize((v * w) @ v.T)


def _check_cov(name: str, a: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if not np.allclose(a, a.T, rtol=0.0, atol=_SYM_TOL * scale):
        raise InputError(f"{name} is not symmetric")
    if a.size and np.linalg.eigvalsh(symmetrize(a)).min() < -_PSD_TOL * scale:
        raise InputError(f"{name} is not positive semi-definite")


def robust_cholesky(s: np.ndarray, where: str = "") -> np.ndarray:
    """Lower Cholesky factor, retrying with trace-scaled diagonal jitter on failure."""
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        pass
    dim = s.shape[0]
    base = _JITTER_SCALE * max(float(np.trace(s)) / dim, 1e-12)
    for k in range(_JITTER_STEPS):
        try:
            return np.linalg.cholesky(s + base * 10.0**k * np.eye(dim))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"covariance not factorizable{where}")


@dataclass(frozen=True)
class LdsParams:
    """Parameters of one dynamic texture component.

    Arrays are copied and made read-only on construction.
    """

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in ("F", "H", "Q", "R", "mu", "P"):
            arr = np.array(getattr(self, name), dtype=float)
            if name == "mu":
                arr = arr.reshape(-1)
            elif arr.ndim != 2:
                raise InputError(f"{name} must be a matrix, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n, m = self.n, self.m
        expected = {"F": (n, n), "H": (m, n), "Q": (n, n), "R": (m, m), "P": (n, n)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InputError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )
        if self.mu.shape != (n,):
            raise InputError(f"mu has shape {self.mu.shape}, expected ({n},)")
        for name in ("Q", "R", "P"):
            _check_cov(name, getattr(self, name))

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def transformed(self, S: np.ndarray) -> "LdsParams":
        """Equivalent model in the state basis x' = S x."""
        S = np.asarray(S, dtype=float)
        Si = np.linalg.inv(S)
        return LdsParams(
            F=S @ self.F @ Si,
            H=self.H @ Si,
            Q=symmetrize(S @ self.Q @ S.T),
            R=self.R,
            mu=S @ self.mu,
            P=symmetrize(S @ self.P @ S.T),
        )


def _as_batch(seqs: np.ndarray, m: int) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=float)
    if seqs.ndim != 3:
        raise InputError(f"expected (N, m, T) stack, got shape {seqs.shape}")
    if seqs.shape[1] != m:
        raise InputError(f"observation dimension {seqs.shape[1]} != model dimension {m}")
    if seqs.shape[2] < 1:
        raise InputError("sequences must have at least one time step")
    if not np.all(np.isfinite(seqs)):
        raise InputError("observations contain non-finite values")
    return seqs


def kalman_loglik_batch(params: LdsParams, seqs: np.ndarray) -> np.ndarray:
    """Log-likelihood of each sequence in an ``(N, m, T)`` stack.

    The filter covariances do not depend on the data, so the predict/update
    recursion for them runs once and only the state means are batched.
    """
    F, H, Q, R = params.F, params.H, params.Q, params.R
    m = params.m
    Y = _as_batch(seqs, m)
    N, _, T = Y.shape

    x = np.broadcast_to(params.mu, (N, params.n)).copy()
    P = params.P.copy()
    ll = np.zeros(N)
    for t in range(T):
        if t > 0:
            with np.errstate(over="ignore", invalid="ignore"):
                x = x @ F.T
                P = symmetrize(F @ P @ F.T + Q)
        with np.errstate(over="ignore", invalid="ignore"):
            S = symmetrize(H @ P @ H.T + R)
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(x))):
            raise NumericalError(f"non-finite value in Kalman recursion at time step {t}")
        L = robust_cholesky(S, f" at time step {t}")
        e = Y[:, :, t] - x @ H.T
        z = solve_triangular(L, e.T, lower=True)
        ll -= 0.5 * (m * LOG_2PI + 2.0 * np.log(np.diag(L)).sum() + np.sum(z * z, axis=0))
        # gain K = P H' S^-1
        K = cho_solve((L, True), H @ P).T
        x = x + e @ K.T
        P = symmetrize(P - K @ H @ P)
        if not (np.all(np.isfinite(ll)) and np.all(np.isfinite(P))):
            raise NumericalError(f"non-finite value in Kalman recursion at time step {t}")
    return ll


def kalman_loglik(params: LdsParams, seq: np.ndarray) -> float:
    """log p(y_1..y_T | params) for one ``(m, T)`` observation sequence."""
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[None, :]
    if seq.ndim != 2:
        raise InputError(f"expected (m, T) sequence, got shape {seq.shape}")
    return float(kalman_loglik_batch(params, seq[None])[0])


def lds_sample(params: LdsParams, T: int, seed: int) -> np.ndarray:
    """Draw one ``(m, T)`` observation sequence."""
    if T < 1:
        raise InputError("T must be positive")
    rng = np.random.default_rng(seed)
    n, m = params.n, params.m
    zeros_n, zeros_m = np.zeros(n), np.zeros(m)
    x = rng.multivariate_normal(params.mu, params.P, method="eigh")
    w = rng.multivariate_normal(zeros_n, params.Q, size=T, method="eigh")
    v = rng.multivariate_normal(zeros_m, params.R, size=T, method="eigh")
    out = np.empty((m, T))
    for t in range(T):
        out[:, t] = params.H @ x + v[t]
        x = params.F @ x + w[t]
    return out


def learn_lds(sequences: Sequence[np.ndarray], n: int) -> LdsParams:
    """Fit one dynamic texture with the SVD subspace method.

    The observation matrix and state trajectories come from a rank-``n``
    SVD of all sequences placed side by side; the transition matrix is the
    least-squares fit over every within-sequence transition. Noise and
    initial-state covariances are sample covariances of the residuals and
    first states. With fewer than ``n + 1`` sequences the first-state
    covariance would be singular, so the covariance of all states is used
    for ``P`` instead.
    """
    seqs = [np.atleast_2d(np.asarray(s, dtype=float)) for s in sequences]
    if not seqs:
        raise InputError("no sequences given")
    m = seqs[0].shape[0]
    if any(s.shape[0] != m for s in seqs):
        raise InputError("sequences have differing observation dimensions")
    if n < 1:
        raise InputError("state dimension must be positive")
    total = sum(s.shape[1] for s in seqs)
    if total <= n:
        raise InputError(f"{total} time steps is not more than state dimension {n}")

    Y = np.hstack(seqs)
    if not np.all(np.isfinite(Y)):
        raise InputError("observations contain non-finite values")
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    tol = max(Y.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if n > rank:
        raise InputError(f"state dimension {n} exceeds data rank {rank}")

    H = U[:, :n]
    X = s[:n, None] * Vt[:n]
    bounds = np.cumsum([0] + [q.shape[1] for q in seqs])
    states = [X[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    X1 = np.hstack([x[:, :-1] for x in states])
    X2 = np.hstack([x[:, 1:] for x in states])
    if X1.shape[1] > 0:
        F = np.linalg.lstsq(X1.T, X2.T, rcond=None)[0].T
        W = X2 - F @ X1
        Q = W @ W.T / W.shape[1]
    else:
        F = np.zeros((n, n))
        Q = np.cov(X, bias=True).reshape(n, n)

    V = Y - H @ X
    R = V @ V.T / V.shape[1]

    firsts = np.stack([x[:, 0] for x in states], axis=1)
    mu = firsts.mean(axis=1)
    if firsts.shape[1] > n:
        P = np.cov(firsts, bias=True).reshape(n, n)
    else:
        P = np.cov(X, bias=True).reshape(n, n)

    return LdsParams(F=F, H=H, Q=project_psd(Q), R=project_psd(R), mu=mu, P=project_psd(P))
