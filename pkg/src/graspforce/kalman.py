"""Stationary Kalman filter tuned from the RLS noise estimates.

The estimator runs the one-step predictor

    x_hat(k) = (A - L C) x_hat(k-1) + B u(k-1) + L y(k-1)
    y_kf(k)  = C x_hat(k)

with a fixed gain ``L`` computed offline from the fixed point of the
Riccati difference equation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, InvalidArgumentError, NumericalFailureError
from .ssid import RlsEstimator, StateSpaceModel

DEFAULT_VARIANCE_FLOOR = 1e-9
DEFAULT_P0_SCALE = 1e3


class EstimatorStabilityWarning(RuntimeWarning):
    """The closed-loop estimator matrix A - LC is not strictly stable."""


@dataclass(frozen=True)
class NoiseCovariances:
    Q: np.ndarray
    R: np.ndarray
    Q_kf: np.ndarray
    R_kf: np.ndarray
    floor: float = DEFAULT_VARIANCE_FLOOR


def estimate_noise_covariances(
    est: RlsEstimator,
    gamma: np.ndarray,
    floor: float = DEFAULT_VARIANCE_FLOOR,
    skip: int = 0,
) -> NoiseCovariances:
    """Minimum-variance tuning: ``Q_kf = Gamma Q Gamma^T``, ``R_kf = R``.

    ``Q`` and ``R`` are diagonal matrices of unbiased sample variances of
    the recorded process- and measurement-noise histories, after dropping
    the first ``skip`` steps. Variances below ``floor`` are raised to it.
    """
    w = est.w[skip:]
    v = est.v[skip:]
    if w.shape[0] < 2 or v.shape[0] < 2:
        raise InvalidArgumentError("noise histories need at least 2 samples")
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (est.n, est.n):
        raise InvalidArgumentError(f"Gamma must be {est.n}x{est.n}")
    Q = np.diag(np.maximum(np.var(w, axis=0, ddof=1), floor))
    R = np.diag(np.maximum(np.var(v, axis=0, ddof=1), floor))
    Q_kf = gamma @ Q @ gamma.T
    return NoiseCovariances(Q=Q, R=R, Q_kf=0.5 * (Q_kf + Q_kf.T), R_kf=R.copy(), floor=floor)


def riccati_iterate(
    A,
    C,
    Q_kf,
    R_kf,
    P0=None,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> np.ndarray:
    """Iterate the estimator Riccati difference equation to its fixed point.

    Stops when the largest entry of ``P(k+1) - P(k)`` drops below
    ``tol * max(1, max|P|)``. ``P0`` defaults to ``1e3 * I``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q_kf, dtype=float))
    R = np.atleast_2d(np.asarray(R_kf, dtype=float))
    n = A.shape[0]
    P = DEFAULT_P0_SCALE * np.eye(n) if P0 is None else np.atleast_2d(np.asarray(P0, dtype=float))
    if P.shape != (n, n) or Q.shape != (n, n) or C.shape[1] != n or R.shape != (C.shape[0],) * 2:
        raise InvalidArgumentError("inconsistent Riccati dimensions")

    delta = np.inf
    for it in range(1, max_iter + 1):
        S = C @ P @ C.T + R
        CPAt = C @ P @ A.T
        try:
            gain_term = CPAt.T @ np.linalg.solve(S, CPAt)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(f"singular innovation covariance: {exc}", step=it) from None
        P_next = A @ P @ A.T - gain_term + Q
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise ConvergenceError("Riccati iteration diverged", float("inf"), it)
        delta = float(np.max(np.abs(P_next - P)))
        P = P_next
        if delta < tol * max(1.0, float(np.max(np.abs(P)))):
            return P
    raise ConvergenceError("Riccati iteration did not converge", delta, max_iter)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def kalman_gain(A, C, P_kf, R_kf) -> np.ndarray:
    """``L = A P C^T (C P C^T + R)^-1``; warns when ``A - LC`` is not strictly stable."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    P = np.atleast_2d(np.asarray(P_kf, dtype=float))
    R = np.atleast_2d(np.asarray(R_kf, dtype=float))
    S = C @ P @ C.T + R
    try:
        L = np.linalg.solve(S, C @ P @ A.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"singular innovation covariance: {exc}") from None
    rho = spectral_radius(A - L @ C)
    if rho >= 1.0 - 1e-9:
        warnings.warn(f"estimator A - LC has spectral radius {rho:.6f}", EstimatorStabilityWarning, stacklevel=2)
    return L


@dataclass
class KalmanEstimator:
    model: StateSpaceModel
    L: np.ndarray
    P_kf: np.ndarray
    noise: NoiseCovariances | None = None
    x_hat: np.ndarray | None = None

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float).reshape(self.model.n, self.model.j)
        if self.x_hat is None:
            self.x_hat = np.zeros(self.model.n)
        self._F = self.model.A - self.L @ self.model.C

    @property
    def closed_loop(self) -> np.ndarray:
        """``A - LC``."""
        return self._F

    @property
    def stable(self) -> bool:
        return spectral_radius(self._F) < 1.0 - 1e-9

    def reset(self, x0=None) -> None:
        self.x_hat = np.zeros(self.model.n) if x0 is None else np.asarray(x0, dtype=float).copy()

    def step(self, u_prev, y_prev) -> float:
        """Advance one window and return ``y_kf(k)`` (first output)."""
        self.x_hat = self._F @ self.x_hat + self.model.B @ u_prev + self.L @ np.atleast_1d(y_prev)
        return float(self.x_hat[0])


def tune(
    model: StateSpaceModel,
    est: RlsEstimator,
    floor: float = DEFAULT_VARIANCE_FLOOR,
    skip: int = 0,
    P0=None,
) -> KalmanEstimator:
    """Build the stationary estimator for an identified model."""
    noise = estimate_noise_covariances(est, model.Gamma, floor=floor, skip=skip)
    P = riccati_iterate(model.A, model.C, noise.Q_kf, noise.R_kf, P0=P0)
    L = kalman_gain(model.A, model.C, P, noise.R_kf)
    return KalmanEstimator(model=model, L=L, P_kf=P, noise=noise)


def kf_run(kf: KalmanEstimator, u, y, x0=None) -> np.ndarray:
    """Filter a whole sequence; returns ``y_kf`` with ``y_kf[0] = C x0``.

    The measured output enters with a one-window delay. No clamping is
    applied here.
    """
    model = kf.model
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None] if model.i == 1 else u[None, :]
    y = np.asarray(y, dtype=float).reshape(-1, model.j)
    if u.ndim != 2 or u.shape[1] != model.i:
        raise InvalidArgumentError(f"u must have {model.i} columns, got shape {u.shape}")
    if y.shape[0] != u.shape[0]:
        raise InvalidArgumentError(f"u has {u.shape[0]} rows but y has {y.shape[0]}")
    x = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)
    if x.shape != (model.n,):
        raise InvalidArgumentError(f"x0 must have {model.n} entries")
    F, B, L, C = kf.closed_loop, model.B, kf.L, model.C
    N = u.shape[0]
    out = np.empty((N, model.j))
    if N:
        out[0] = C @ x
    for k in range(1, N):
        x = F @ x + B @ u[k - 1] + L @ y[k - 1]
        out[k] = C @ x
    kf.x_hat = x
    return out[:, 0] if model.j == 1 else out
