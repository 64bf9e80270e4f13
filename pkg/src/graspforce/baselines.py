"""Comparison regressors: MLP, NARX network, and LDA projection + quadratic fit.

Networks have one hidden layer (sigmoid by default) and a linear output,
trained sample-by-sample with RMSprop on the squared error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np
import scipy.linalg

from .exceptions import DivergenceError, InvalidArgumentError
from .features import FeatureMatrix


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    hidden: int = 4
    activation: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.epochs <= 1000:
            raise InvalidArgumentError("epochs must be in 0..1000")
        if self.hidden < 1:
            raise InvalidArgumentError("hidden must be >= 1")
        if self.activation not in ("sigmoid", "linear"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")


@dataclass
class MlpModel:
    """``y = w2 . [1; f(w1 . [1; u])]`` with bias in column/entry 0."""

    w1: np.ndarray
    w2: np.ndarray
    activation: str = "sigmoid"
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    config: TrainConfig | None = None

    @property
    def hidden_count(self) -> int:
        return self.w1.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.w1.shape[1] - 1

    @property
    def final_mse(self) -> float | None:
        return float(self.losses[-1]) if self.losses.size else None


@numba.njit(cache=True)
def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


@numba.njit(cache=True)
def _forward(w1, w2, x, linear):
    H = w1.shape[0]
    h = np.empty(H)
    for j in range(H):
        a = w1[j, 0]
        for k in range(x.shape[0]):
            a += w1[j, k + 1] * x[k]
        h[j] = a if linear else _sigmoid(a)
    out = w2[0]
    for j in range(H):
        out += w2[j + 1] * h[j]
    return out, h


@numba.njit(cache=True)
def _mse(w1, w2, X, y, linear):
    s = 0.0
    for r in range(X.shape[0]):
        out, _ = _forward(w1, w2, X[r], linear)
        d = out - y[r]
        s += d * d
    return s / X.shape[0]


@numba.njit(cache=True)
def _train(X, y, w1, w2, perms, lr, rho, eps, linear):
    """RMSprop, batch size 1. Returns per-epoch MSE and the failing epoch (or -1)."""
    H, D = w1.shape
    c1 = np.zeros((H, D))
    c2 = np.zeros(H + 1)
    g1 = np.empty((H, D))
    g2 = np.empty(H + 1)
    E = perms.shape[0]
    losses = np.empty(E)
    for e in range(E):
        for r in perms[e]:
            x = X[r]
            out, h = _forward(w1, w2, x, linear)
            d = 2.0 * (out - y[r])
            g2[0] = d
            for j in range(H):
                g2[j + 1] = d * h[j]
                dh = d * w2[j + 1]
                if not linear:
                    dh *= h[j] * (1.0 - h[j])
                g1[j, 0] = dh
                for k in range(D - 1):
                    g1[j, k + 1] = dh * x[k]
            for j in range(H + 1):
                c2[j] = rho * c2[j] + (1.0 - rho) * g2[j] * g2[j]
                w2[j] -= lr * g2[j] / (np.sqrt(c2[j]) + eps)
            for j in range(H):
                for k in range(D):
                    c1[j, k] = rho * c1[j, k] + (1.0 - rho) * g1[j, k] * g1[j, k]
                    w1[j, k] -= lr * g1[j, k] / (np.sqrt(c1[j, k]) + eps)
        losses[e] = _mse(w1, w2, X, y, linear)
        if not np.isfinite(losses[e]):
            return losses[: e + 1], e
    return losses, -1


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _fit_network(X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> MlpModel:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise InvalidArgumentError("training data is empty or misaligned")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("training data contains non-finite values")
    rng = np.random.default_rng(cfg.seed)
    d = X.shape[1]
    w1 = np.zeros((cfg.hidden, d + 1))
    w1[:, 1:] = _glorot(rng, d, cfg.hidden, (cfg.hidden, d))
    w2 = np.zeros(cfg.hidden + 1)
    w2[1:] = _glorot(rng, cfg.hidden, 1, cfg.hidden)
    perms = np.array([rng.permutation(X.shape[0]) for _ in range(cfg.epochs)], dtype=np.int64)
    perms = perms.reshape(cfg.epochs, X.shape[0])
    linear = cfg.activation == "linear"
    losses, failed = _train(X, y, w1, w2, perms, cfg.learning_rate, cfg.rho, cfg.eps, linear)
    if failed >= 0:
        raise DivergenceError("training loss became non-finite", epoch=int(failed) + 1)
    return MlpModel(w1=w1, w2=w2, activation=cfg.activation, losses=np.asarray(losses), config=cfg)


def mlp_train(fm: FeatureMatrix, cfg: TrainConfig = TrainConfig()) -> MlpModel:
    """Fit the MLP on the rows of ``fm`` (inputs ``u``, target ``y``)."""
    if len(fm) == 0:
        raise InvalidArgumentError("empty feature matrix")
    return _fit_network(fm.u, fm.y, cfg)


def mlp_forward(m: MlpModel, X) -> np.ndarray:
    """Vectorised forward pass over rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != m.n_inputs:
        raise InvalidArgumentError(f"expected {m.n_inputs} inputs, got {X.shape[1]}")
    a = X @ m.w1[:, 1:].T + m.w1[:, 0]
    h = a if m.activation == "linear" else 1.0 / (1.0 + np.exp(-a))
    return h @ m.w2[1:] + m.w2[0]


def mlp_predict(m: MlpModel, u_row) -> float:
    u_row = np.asarray(u_row, dtype=float)
    if u_row.ndim != 1:
        raise InvalidArgumentError("mlp_predict takes a single input row")
    return float(mlp_forward(m, u_row[None, :])[0])


@dataclass
class NarxModel:
    inner: MlpModel
    n_u: int
    n_y: int

    @property
    def n_inputs(self) -> int:
        return (self.inner.n_inputs - self.n_y) // (self.n_u + 1)


def narx_regressors(u: np.ndarray, y: np.ndarray, n_u: int, n_y: int) -> tuple[np.ndarray, np.ndarray]:
    """Series-parallel rows ``[u(k), ..., u(k-n_u), y(k-1), ..., y(k-n_y)]`` and targets ``y(k)``."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    start = max(n_u, n_y)
    N = u.shape[0]
    rows = []
    for k in range(start, N):
        parts = [u[k - l] for l in range(n_u + 1)]
        parts.append(y[k - n_y:k][::-1])
        rows.append(np.concatenate(parts))
    X = np.array(rows).reshape(N - start, u.shape[1] * (n_u + 1) + n_y)
    return X, y[start:]


def narx_train(fm: FeatureMatrix, cfg: TrainConfig = TrainConfig(), n_u: int = 4, n_y: int = 4) -> NarxModel:
    """Teacher-forced training: the lagged outputs are the measured ones."""
    if n_u < 0 or n_y < 0:
        raise InvalidArgumentError("memory orders must be >= 0")
    if len(fm) <= max(n_u, n_y):
        raise InvalidArgumentError(f"{len(fm)} rows is too few for memories ({n_u}, {n_y})")
    X, t = narx_regressors(fm.u, fm.y, n_u, n_y)
    return NarxModel(inner=_fit_network(X, t, cfg), n_u=n_u, n_y=n_y)


def narx_predict(m: NarxModel, u, y_init, u_init=None) -> np.ndarray:
    """Free-run (parallel mode): feed back the model's own predictions.

    ``y_init`` are the ``n_y`` outputs preceding ``u[0]`` (oldest first);
    ``u_init`` the ``n_u`` preceding input rows, defaulting to copies of
    ``u[0]``. Returns one prediction per row of ``u``.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    i = m.n_inputs
    if u.shape[1] != i:
        raise InvalidArgumentError(f"expected {i} inputs, got {u.shape[1]}")
    y_init = np.atleast_1d(np.asarray(y_init, dtype=float))
    if y_init.size < m.n_y:
        raise InvalidArgumentError(f"need {m.n_y} seed outputs, got {y_init.size}")
    if u_init is None:
        u_init = np.repeat(u[:1], m.n_u, axis=0)
    u_init = np.asarray(u_init, dtype=float).reshape(-1, i)
    if u_init.shape[0] < m.n_u:
        raise InvalidArgumentError(f"need {m.n_u} seed input rows")
    uu = np.vstack([u_init[u_init.shape[0] - m.n_u:], u]) if m.n_u else u
    hist = list(y_init[y_init.size - m.n_y:]) if m.n_y else []
    out = np.empty(u.shape[0])
    w1, w2, linear = m.inner.w1, m.inner.w2, m.inner.activation == "linear"
    for k in range(u.shape[0]):
        kk = k + m.n_u
        parts = [uu[kk - l] for l in range(m.n_u + 1)]
        parts.append(np.array(hist[::-1][: m.n_y]))
        x = np.concatenate(parts)
        a = w1[:, 1:] @ x + w1[:, 0]
        h = a if linear else 1.0 / (1.0 + np.exp(-a))
        out[k] = float(h @ w2[1:] + w2[0])
        if m.n_y:
            hist.append(out[k])
            hist = hist[-m.n_y:]
    return out


class LdaWarning(UserWarning):
    pass


@dataclass
class LdaQpfModel:
    W: np.ndarray
    poly: np.ndarray
    levels: int = 3
    sse: float = 0.0

    def project(self, U) -> np.ndarray:
        return np.atleast_2d(np.asarray(U, dtype=float)) @ self.W


def quantize(y, levels: int) -> np.ndarray:
    """Equal-width class index of each force value over [0, 1]."""
    y = np.asarray(y, dtype=float)
    return np.clip(np.floor(y * levels), 0, levels - 1).astype(int)


def lda_fit(fm: FeatureMatrix, levels: int = 3, reg: float = 1e-6) -> np.ndarray:
    """Unit-norm discriminant direction separating force-level classes.

    Classes come from :func:`quantize`. A class with fewer than two
    members is merged into its nearest populated neighbour. The sign is
    chosen so that the projection correlates positively with force.
    """
    if levels < 2:
        raise InvalidArgumentError("need at least 2 levels")
    X, y = fm.u, fm.y
    labels = quantize(y, levels)
    counts = np.bincount(labels, minlength=levels)
    for c in range(levels):
        if 0 < counts[c] < 2:
            populated = [d for d in range(levels) if d != c and counts[d] >= 2]
            if populated:
                target = min(populated, key=lambda d: abs(d - c))
                warnings.warn(f"class {c} has {counts[c]} member(s); merged into class {target}", LdaWarning, stacklevel=2)
                labels[labels == c] = target
                counts = np.bincount(labels, minlength=levels)
    classes = [c for c in range(levels) if counts[c] > 0]
    if len(classes) < 2:
        raise InvalidArgumentError("LDA needs at least 2 non-empty force classes")

    mu = X.mean(axis=0)
    d = X.shape[1]
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for c in classes:
        Xc = X[labels == c]
        mc = Xc.mean(axis=0)
        D = Xc - mc
        Sw += D.T @ D
        Sb += Xc.shape[0] * np.outer(mc - mu, mc - mu)
    ev = np.linalg.eigvalsh(Sw)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        warnings.warn("within-class scatter is singular; regularising", LdaWarning, stacklevel=2)
        Sw = Sw + reg * np.eye(d)
    _, vecs = scipy.linalg.eigh(Sb, Sw)
    W = vecs[:, -1]
    W = W / np.linalg.norm(W)
    z = X @ W
    if np.cov(z, y)[0, 1] < 0:
        W = -W
    return W


def qpf_fit(z, y) -> tuple[np.ndarray, float]:
    """Least-squares ``y ~ c0 + c1 z + c2 z^2``; returns ``(coeffs, sse)``."""
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if z.size < 3 or z.shape != y.shape:
        raise InvalidArgumentError("need at least 3 aligned samples")
    V = np.column_stack([np.ones_like(z), z, z * z])
    rank = np.linalg.matrix_rank(V)
    if rank < 3:
        warnings.warn(f"projection has too few distinct values (rank {rank}); fitting the mean", LdaWarning, stacklevel=2)
        coef = np.array([y.mean(), 0.0, 0.0])
    else:
        coef = np.linalg.lstsq(V, y, rcond=None)[0]
    r = y - V @ coef
    return coef, float(r @ r)


def ldaqpf_train(fm: FeatureMatrix, levels: int = 3) -> LdaQpfModel:
    W = lda_fit(fm, levels)
    coef, sse = qpf_fit(fm.u @ W, fm.y)
    return LdaQpfModel(W=W, poly=coef, levels=levels, sse=sse)


def ldaqpf_forward(m: LdaQpfModel, U) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != m.W.size:
        raise InvalidArgumentError(f"expected {m.W.size} inputs, got {U.shape[1]}")
    z = U @ m.W
    c0, c1, c2 = m.poly
    return c0 + c1 * z + c2 * z * z


def ldaqpf_predict(m: LdaQpfModel, u_row, clamp: bool = True) -> float:
    """Force estimate for one row; clamped to [0, 1] unless ``clamp`` is false."""
    u_row = np.asarray(u_row, dtype=float)
    if u_row.ndim != 1:
        raise InvalidArgumentError("ldaqpf_predict takes a single input row")
    val = float(ldaqpf_forward(m, u_row[None, :])[0])
    return min(max(val, 0.0), 1.0) if clamp else val


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
