"""Recursive least-squares identification of a stochastic state-space MISO model.

The model is

    x(k) = A x(k-1) + B u(k-1) + Gamma w(k-1)
    y(k) = C x(k) + v(k),        C = [I 0]

with the state built from the measured output and its scaled backward
differences. All parameters are packed into one matrix

    theta = [A^T; B^T; Gamma^T]        shape (2n + i, n)

so that ``x_hat(k) = theta^T phi(k)`` with ``phi(k) = [x(k-1); u(k-1); w(k-1)]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError, NumericalFailureError
from .features import FeatureMatrix

log = logging.getLogger(__name__)

DEFAULT_THETA0 = 0.3
DEFAULT_P0_SCALE = 1e3
DEFAULT_AIC_THRESHOLD = 0.05


@dataclass
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    Gamma: np.ndarray
    C: np.ndarray
    ts: float

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise InvalidArgumentError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise InvalidArgumentError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.Gamma.shape != (n, n):
            raise InvalidArgumentError(f"Gamma must be {n}x{n}, got {self.Gamma.shape}")
        if self.C.shape[1] != n or self.C.shape[0] > n:
            raise InvalidArgumentError(f"C must be j x {n}, got {self.C.shape}")
        if not self.ts > 0:
            raise InvalidArgumentError("ts must be > 0")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def i(self) -> int:
        return self.B.shape[1]

    @property
    def j(self) -> int:
        return self.C.shape[0]


def output_matrix(n: int, j: int = 1) -> np.ndarray:
    """``C = [I_j 0]``: the first ``j`` states are the measured outputs."""
    C = np.zeros((j, n))
    C[:, :j] = np.eye(j)
    return C


def build_states(y, n: int, ts: float) -> np.ndarray:
    """Stack ``y`` and its scaled backward differences into an (N, n) state matrix.

    ``x[:, 0]`` is ``y`` itself; column ``m`` is the backward difference of
    column ``m-1`` divided by ``ts``, with a zero value assumed before the
    first sample.
    """
    y = np.asarray(y, dtype=float)
    if n < 1:
        raise InvalidArgumentError(f"order must be >= 1, got {n}")
    if y.ndim != 1 or y.size == 0:
        raise InvalidArgumentError("y must be a non-empty 1-D sequence")
    if not ts > 0:
        raise InvalidArgumentError("ts must be > 0")
    x = np.empty((y.size, n))
    x[:, 0] = y
    for m in range(1, n):
        x[:, m] = np.diff(x[:, m - 1], prepend=0.0) / ts
    return x


def regressor(x_prev, u_prev, w_prev) -> np.ndarray:
    """``phi(k) = [x(k-1); u(k-1); w(k-1)]``."""
    x_prev = np.atleast_1d(np.asarray(x_prev, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    w_prev = np.atleast_1d(np.asarray(w_prev, dtype=float))
    if x_prev.ndim != 1 or u_prev.ndim != 1 or w_prev.ndim != 1:
        raise InvalidArgumentError("regressor parts must be vectors")
    if w_prev.shape != x_prev.shape:
        raise InvalidArgumentError(f"w has {w_prev.size} entries, state has {x_prev.size}")
    return np.concatenate([x_prev, u_prev, w_prev])


@dataclass
class RlsEstimator:
    """State of the multivariable RLS recursion (unit forgetting factor)."""

    theta: np.ndarray
    P: np.ndarray
    n: int
    i: int
    j: int = 1
    theta0: float = DEFAULT_THETA0
    p0_scale: float = DEFAULT_P0_SCALE
    w_last: np.ndarray = None
    x_last: np.ndarray = None
    steps: int = 0
    w_history: list = field(default_factory=list)
    v_history: list = field(default_factory=list)

    @classmethod
    def initial(cls, n: int, i: int, j: int = 1, theta0: float = DEFAULT_THETA0,
                p0_scale: float = DEFAULT_P0_SCALE) -> "RlsEstimator":
        if n < 1 or i < 0 or not 1 <= j <= n:
            raise InvalidArgumentError(f"invalid dimensions n={n}, i={i}, j={j}")
        if not p0_scale > 0:
            raise InvalidArgumentError("p0_scale must be > 0")
        d = 2 * n + i
        return cls(
            theta=np.full((d, n), float(theta0)),
            P=p0_scale * np.eye(d),
            n=n, i=i, j=j, theta0=float(theta0), p0_scale=float(p0_scale),
            w_last=np.zeros(n),
            x_last=np.zeros(n),
        )

    @property
    def d(self) -> int:
        return 2 * self.n + self.i

    @property
    def w(self) -> np.ndarray:
        """Process-noise history, shape (steps, n)."""
        return np.array(self.w_history).reshape(-1, self.n)

    @property
    def v(self) -> np.ndarray:
        """Measurement-noise history, shape (steps, j)."""
        return np.array(self.v_history).reshape(-1, self.j)

    def blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unpack theta into (A, B, Gamma)."""
        n, i = self.n, self.i
        th = self.theta
        return th[:n].T.copy(), th[n:n + i].T.copy(), th[n + i:].T.copy()


def rls_step(est: RlsEstimator, x_k, phi, y_k) -> tuple[np.ndarray, np.ndarray]:
    """Advance ``est`` by one sample, in place.

    Returns the a-priori state prediction ``x_hat(k)`` and output
    prediction ``y_hat(k)``.
    """
    x_k = np.atleast_1d(np.asarray(x_k, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    y_k = np.atleast_1d(np.asarray(y_k, dtype=float))
    step = est.steps + 1
    if x_k.shape != (est.n,) or phi.shape != (est.d,) or y_k.shape != (est.j,):
        raise InvalidArgumentError(
            f"dimension mismatch: x {x_k.shape}, phi {phi.shape}, y {y_k.shape} "
            f"for n={est.n}, i={est.i}, j={est.j}"
        )
    if not (np.all(np.isfinite(x_k)) and np.all(np.isfinite(phi)) and np.all(np.isfinite(y_k))):
        raise NumericalFailureError("non-finite input to the RLS update", step=step)

    # overflow is detected below and reported as an error, not a warning
    with np.errstate(all="ignore"):
        x_hat = phi @ est.theta
        y_hat = x_hat[: est.j]
        e = x_k - x_hat
        Pphi = est.P @ phi
        K = Pphi / (1.0 + phi @ Pphi)
        theta = est.theta + np.outer(K, e)
        w = x_k - phi @ theta
        v = y_k - y_hat
        P = est.P - np.outer(K, Pphi)
        P = 0.5 * (P + P.T)

    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(P)) and np.all(np.isfinite(w))):
        raise NumericalFailureError("RLS estimate diverged", step=step)

    est.theta = theta
    est.P = P
    est.w_last = w
    est.x_last = x_k
    est.steps = step
    est.w_history.append(w)
    est.v_history.append(v)
    return x_hat, y_hat


def identify(
    fm: FeatureMatrix,
    n: int = 4,
    theta0: float = DEFAULT_THETA0,
    p0_scale: float = DEFAULT_P0_SCALE,
    ts: float | None = None,
) -> tuple[StateSpaceModel, RlsEstimator]:
    """Run the RLS recursion over every row of ``fm`` and unpack the model.

    ``ts`` defaults to the feature-row spacing of ``fm``.
    """
    if n < 1:
        raise InvalidArgumentError(f"order must be >= 1, got {n}")
    N, i = fm.u.shape
    if N < 2 * n + i:
        raise InvalidArgumentError(f"{N} rows is too few to identify {2 * n + i} regressors")
    ts = fm.ts if ts is None else ts
    x = build_states(fm.y, n, ts)
    est = RlsEstimator.initial(n, i, 1, theta0, p0_scale)
    for k in range(1, N):
        phi = np.concatenate([x[k - 1], fm.u[k - 1], est.w_last])
        rls_step(est, x[k], phi, fm.y[k : k + 1])
    A, B, G = est.blocks()
    return StateSpaceModel(A=A, B=B, Gamma=G, C=output_matrix(n), ts=ts), est


def simulate(model: StateSpaceModel, u, x0=None) -> np.ndarray:
    """Deterministic response: ``x(k) = A x(k-1) + B u(k-1)``, ``y(k) = C x(k)``.

    ``y[0]`` is ``C x0``. Returns shape (N,) for single-output models.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None] if model.i == 1 else u[None, :]
    if u.ndim != 2 or u.shape[1] != model.i:
        raise InvalidArgumentError(f"u must have {model.i} columns, got shape {u.shape}")
    x = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)
    if x.shape != (model.n,):
        raise InvalidArgumentError(f"x0 must have {model.n} entries")
    A, B, C = model.A, model.B, model.C
    N = u.shape[0]
    y = np.empty((N, model.j))
    if N:
        y[0] = C @ x
    for k in range(1, N):
        x = A @ x + B @ u[k - 1]
        y[k] = C @ x
    return y[:, 0] if model.j == 1 else y


def aic(residuals, p: int, N: int | None = None) -> float:
    """``(1 + 2p/N) * sum(residuals**2)``; ``N`` defaults to the residual count."""
    r = np.asarray(residuals, dtype=float).ravel()
    N = r.size if N is None else N
    if N <= 0:
        raise InvalidArgumentError("AIC needs N > 0")
    sse = float(np.sum(r * r))
    if p == 0:
        return sse
    return (1.0 + 2.0 * p / N) * sse


def parameter_count(n: int, i: int) -> int:
    """Number of estimated entries in theta."""
    return n * (2 * n + i)


@dataclass(frozen=True)
class OrderRow:
    order: int
    parameters: int
    samples: int
    sse: float | None
    aic: float | None
    error: str | None = None


@dataclass(frozen=True)
class OrderSelection:
    order: int
    threshold: float
    table: tuple[OrderRow, ...]

    def improvement_beyond(self, n: int) -> float:
        """Largest relative AIC drop of any order above ``n`` against AIC(n)."""
        rows = {r.order: r for r in self.table if r.aic is not None}
        base = rows[n].aic
        later = [r.aic for o, r in rows.items() if o > n]
        if not later or base <= 0:
            return 0.0
        return (base - min(later)) / base


def select_order(
    fm: FeatureMatrix,
    orders=range(1, 13),
    threshold: float = DEFAULT_AIC_THRESHOLD,
    theta0: float = DEFAULT_THETA0,
    p0_scale: float = DEFAULT_P0_SCALE,
    burn_in: int | None = None,
) -> OrderSelection:
    """Sweep model orders and pick the smallest one past which AIC stops improving.

    For each order the AIC is computed on the one-step output residuals of
    the identification run. Every order is scored on the same samples:
    the first ``burn_in`` steps are dropped, by default ``2 * max(orders) + i``
    (the regressor length of the largest candidate), which keeps the RLS
    start-up transient out of the comparison. The selected order is the
    smallest ``n`` for which no higher order lowers the AIC by more than
    ``threshold`` (relative to AIC(n)).
    """
    orders = sorted(set(int(o) for o in orders))
    if not orders:
        raise InvalidArgumentError("empty order range")
    skip = 2 * orders[-1] + fm.n_inputs if burn_in is None else int(burn_in)
    if skip < 0:
        raise InvalidArgumentError("burn_in must be >= 0")
    rows = []
    for n in orders:
        p = parameter_count(n, fm.n_inputs)
        try:
            _, est = identify(fm, n, theta0, p0_scale)
            resid = est.v[max(skip, n):, 0]
            if resid.size == 0:
                raise InvalidArgumentError("no residuals left after the burn-in")
            if not np.all(np.isfinite(resid)):
                raise NumericalFailureError("non-finite residuals")
            rows.append(OrderRow(n, p, resid.size, float(resid @ resid), aic(resid, p)))
        except (InvalidArgumentError, NumericalFailureError, np.linalg.LinAlgError) as exc:
            log.warning("order %d skipped: %s", n, exc)
            rows.append(OrderRow(n, p, 0, None, None, str(exc)))
    return OrderSelection(order=choose_order(rows, threshold), threshold=threshold, table=tuple(rows))


def choose_order(rows, threshold: float = DEFAULT_AIC_THRESHOLD) -> int:
    """Smallest order whose AIC no higher order beats by more than ``threshold``.

    Rows without an AIC (failed orders) are ignored.
    """
    ok = sorted((r for r in rows if r.aic is not None), key=lambda r: r.order)
    if not ok:
        raise NumericalFailureError("identification failed for every order")
    for idx, r in enumerate(ok):
        later = [s.aic for s in ok[idx + 1:]]
        if not later or min(later) > (1.0 - threshold) * r.aic:
            return r.order
    return ok[-1].order


@dataclass(frozen=True)
class StructuralReport:
    stable: bool
    controllable: bool
    observable: bool
    pole_moduli: tuple[float, ...]

    @property
    def spectral_radius(self) -> float:
        return max(self.pole_moduli)


def _rank(M: np.ndarray) -> int:
    # columns index states; equilibrate them since difference states scale with 1/ts**m
    norms = np.linalg.norm(M, axis=0)
    norms[norms == 0] = 1.0
    return int(np.linalg.matrix_rank(M / norms))


def analyze(model: StateSpaceModel) -> StructuralReport:
    """Stability (poles inside the unit circle), controllability and observability."""
    A, B, C = model.A, model.B, model.C
    n = model.n
    moduli = np.abs(np.linalg.eigvals(A))
    ctrb = [B]
    obsv = [C]
    for _ in range(1, n):
        ctrb.append(A @ ctrb[-1])
        obsv.append(obsv[-1] @ A)
    Wc = np.hstack(ctrb)
    Wo = np.vstack(obsv)
    return StructuralReport(
        stable=bool(np.all(moduli < 1.0)),
        controllable=_rank(Wc.T) == n,
        observable=_rank(Wo) == n,
        pole_moduli=tuple(float(m) for m in np.sort(moduli)[::-1]),
    )
