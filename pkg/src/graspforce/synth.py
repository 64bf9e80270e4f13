"""Synthetic stand-ins for the human dataset, plus a batch least-squares oracle.

Everything here is a pure function of its arguments and seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.linalg
import scipy.signal

from .exceptions import InvalidArgumentError
from .features import MUSCLES, SessionRecording
from .ssid import StateSpaceModel, output_matrix


def difference_basis(n: int, ts: float) -> np.ndarray:
    """Map lagged outputs ``[y(k), ..., y(k-n+1)]`` to the difference-chain state.

    Row ``m`` holds the coefficients of the ``m``-th backward difference
    divided by ``ts**m``.
    """
    T = np.zeros((n, n))
    for m in range(n):
        for l in range(m + 1):
            T[m, l] = (-1) ** l * comb(m, l) / ts**m
    return T


def _random_poles(n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    poles = []
    while len(poles) < n:
        r = radius * np.sqrt(rng.uniform(0.05, 1.0))
        if n - len(poles) >= 2 and rng.uniform() < 0.5:
            ang = rng.uniform(0.05, np.pi - 0.05)
            poles += [r * np.exp(1j * ang), r * np.exp(-1j * ang)]
        else:
            poles.append(r * rng.choice([-1.0, 1.0]) if rng.uniform() < 0.2 else r)
    return np.array(poles)


def gen_lti(
    n: int,
    i: int,
    spectral_radius_max: float = 0.9,
    seed: int = 0,
    ts: float = 1.0,
    gamma: str = "zero",
    chain: bool = True,
) -> StateSpaceModel:
    """Random stable single-output system of order ``n`` with ``i`` inputs.

    With ``chain=True`` (default) the state is the output followed by its
    scaled backward differences, i.e. exactly the state that
    :func:`graspforce.ssid.build_states` reconstructs from ``y``. The
    system is drawn as random poles inside ``spectral_radius_max`` and
    mapped into that basis, so simulated data lies inside the identified
    model class. With ``chain=False`` a dense random ``A`` is rescaled to
    the requested spectral radius instead.

    ``gamma`` is ``"zero"`` or ``"random"``.
    """
    if n < 1 or i < 1:
        raise InvalidArgumentError("n and i must be >= 1")
    if not 0 < spectral_radius_max < 1:
        raise InvalidArgumentError("spectral_radius_max must lie in (0, 1)")
    if gamma not in ("zero", "random"):
        raise InvalidArgumentError(f"gamma must be 'zero' or 'random', got {gamma!r}")
    rng = np.random.default_rng(seed)
    if chain:
        poles = _random_poles(n, spectral_radius_max, rng)
        # z^n - a1 z^(n-1) - ... - an = prod(z - p)
        alpha = -np.real(np.poly(poles))[1:]
        comp = np.zeros((n, n))
        comp[0] = alpha
        comp[1:, :-1] = np.eye(n - 1)
        T = difference_basis(n, ts)
        A = T @ comp @ np.linalg.inv(T)
        c = T[:, 0]
        B = np.outer(c, rng.normal(size=i))
        G = np.outer(c, rng.normal(size=n)) if gamma == "random" else np.zeros((n, n))
    else:
        A = rng.normal(size=(n, n))
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        A *= rng.uniform(0.3, 1.0) * spectral_radius_max / rho
        B = rng.normal(size=(n, i))
        G = rng.normal(size=(n, n)) if gamma == "random" else np.zeros((n, n))
    return StateSpaceModel(A=A, B=B, Gamma=G, C=output_matrix(n), ts=ts)


def simulate_stochastic(
    model: StateSpaceModel,
    u: np.ndarray,
    process_sd: float = 0.0,
    measurement_sd: float = 0.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate the full model with Gaussian ``w`` and ``v``.

    Returns ``(y, y_true, x)`` where ``y`` carries measurement noise and
    ``y_true = C x``. Starts from ``x(0) = 0``.
    """
    rng = np.random.default_rng(seed)
    u = np.asarray(u, dtype=float).reshape(len(u), model.i)
    N = u.shape[0]
    w = process_sd * rng.normal(size=(N, model.n))
    v = measurement_sd * rng.normal(size=N)
    x = np.zeros((N, model.n))
    for k in range(1, N):
        x[k] = model.A @ x[k - 1] + model.B @ u[k - 1] + model.Gamma @ w[k - 1]
    y_true = x @ model.C[0]
    return y_true + v, y_true, x


@dataclass(frozen=True)
class SynthSessionSpec:
    """Parameters of a simulated squeeze-the-ball session.

    ``plateaus`` are the MVC fractions of the small/medium/high squeezes,
    repeated ``cycles`` times so that both halves of a temporal split see
    every level. ``mixing`` is a (channels x channels) crosstalk matrix
    with non-negative entries; ``None`` draws a neighbour-coupling matrix
    from the seed. Force follows muscle activation through a critically
    damped second-order low-pass (time constant ``muscle_tau_s``) after an
    electromechanical delay of ``emg_delay_ms``.

    While squeezing, the activation wanders with band-limited noise of SD
    ``drive_fluctuation_sd`` (visible in both sEMG and force); the force
    alone carries a further wander of SD ``fluctuation_sd`` that the sEMG
    cannot explain.
    """

    duration_s: float = 60.0
    sample_rate: float = 200.0
    plateaus: tuple[float, ...] = (0.3, 0.6, 0.9)
    cycles: int = 2
    ramp_s: float = 0.6
    plateau_jitter: float = 0.08
    force_noise_sd: float = 0.005
    fluctuation_sd: float = 0.02
    drive_fluctuation_sd: float = 0.1
    fluctuation_band_hz: tuple[float, float] = (0.3, 2.0)
    emg_floor: float = 0.03
    emg_gain_range: tuple[float, float] = (0.4, 1.0)
    emg_delay_ms: float = 30.0
    muscle_tau_s: float = 0.1
    crosstalk: float = 0.15
    mixing: np.ndarray | None = field(default=None, compare=False)
    n_channels: int = 8
    seed: int = 0

    def __post_init__(self):
        if not all(0 < p <= 1 for p in self.plateaus):
            raise InvalidArgumentError("plateau MVC fractions must lie in (0, 1]")
        if self.duration_s <= 0 or self.sample_rate <= 0 or self.cycles < 1:
            raise InvalidArgumentError("duration, sample_rate and cycles must be positive")
        if min(self.emg_floor, self.force_noise_sd, self.fluctuation_sd, self.drive_fluctuation_sd, self.muscle_tau_s) < 0:
            raise InvalidArgumentError("noise levels and time constants must be non-negative")
        if self.mixing is not None:
            M = np.asarray(self.mixing, dtype=float)
            if M.shape != (self.n_channels, self.n_channels) or np.any(M < 0):
                raise InvalidArgumentError("mixing must be a non-negative channels x channels matrix")


# flexors respond strongly to a power grasp, the rest weakly
_CHANNEL_DRIVE = np.array([0.35, 0.3, 0.25, 0.2, 0.25, 1.0, 0.9, 1.0])


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def squeeze_profile(spec: SynthSessionSpec, rng: np.random.Generator) -> np.ndarray:
    """Activation trace: smooth ramps into jittered plateaus separated by rest."""
    N = int(round(spec.duration_s * spec.sample_rate))
    t = np.arange(N) / spec.sample_rate
    levels = [p for _ in range(spec.cycles) for p in spec.plateaus]
    act = np.zeros(N)
    if not levels:
        return act
    slot = spec.duration_s / len(levels)
    for s, level in enumerate(levels):
        level = float(np.clip(level * (1.0 + spec.plateau_jitter * rng.uniform(-1, 1)), 0.0, 1.0))
        hold = slot * rng.uniform(0.35, 0.5)
        start = s * slot + slot * rng.uniform(0.15, 0.3)
        up = _smoothstep((t - start) / spec.ramp_s)
        down = _smoothstep((t - (start + spec.ramp_s + hold)) / spec.ramp_s)
        act += level * (up - down)
    return act


def muscle_force(activation: np.ndarray, spec: SynthSessionSpec) -> np.ndarray:
    """Delayed, critically damped low-pass of the activation (unit DC gain)."""
    fs = spec.sample_rate
    out = activation
    if spec.muscle_tau_s > 0:
        a = np.exp(-1.0 / (spec.muscle_tau_s * fs))
        out = scipy.signal.lfilter([(1.0 - a) ** 2], [1.0, -2.0 * a, a * a], activation)
    lag = int(round(spec.emg_delay_ms * fs / 1000.0))
    if lag:
        out = np.concatenate([np.zeros(lag), out[: out.size - lag]])
    return out


def fluctuation(N: int, spec: SynthSessionSpec, rng: np.random.Generator, sd: float | None = None) -> np.ndarray:
    """Band-limited wander scaled to ``sd`` (default ``fluctuation_sd``)."""
    sd = spec.fluctuation_sd if sd is None else sd
    raw = rng.normal(size=N)
    if sd == 0 or N < 16:
        return np.zeros(N)
    lo, hi = spec.fluctuation_band_hz
    sos = scipy.signal.butter(2, [lo, hi], btype="bandpass", fs=spec.sample_rate, output="sos")
    band = scipy.signal.sosfiltfilt(sos, raw)
    return sd * band / band.std()


def gen_session(spec: SynthSessionSpec = SynthSessionSpec()) -> SessionRecording:
    """Simulate one recording: activation-driven sEMG and the resulting force.

    Each source channel is zero-mean white noise scaled by
    ``gain * activation + floor``; the sources are mixed through the
    crosstalk matrix, so every channel's energy rises with the squeeze
    level. Force is the muscle response to the same activation plus a
    small force-only wander while squeezing and white sensor noise,
    clipped to [0, 1].
    """
    rng = np.random.default_rng(spec.seed)
    act = squeeze_profile(spec, rng)
    N = act.size
    if spec.drive_fluctuation_sd > 0:
        act = np.clip(act + fluctuation(N, spec, rng, spec.drive_fluctuation_sd) * (act > 0.02), 0.0, 1.0)
    force = muscle_force(act, spec) + spec.force_noise_sd * rng.normal(size=N)
    force += fluctuation(N, spec, rng) * (act > 0.02)
    force = np.clip(force, 0.0, 1.0)

    nc = spec.n_channels
    gains = np.resize(_CHANNEL_DRIVE, nc) * rng.uniform(*spec.emg_gain_range, size=nc)
    if spec.mixing is not None:
        M = np.asarray(spec.mixing, dtype=float)
    else:
        M = np.eye(nc)
        for c in range(nc):
            for d in (c - 1, c + 1):
                if 0 <= d < nc:
                    M[c, d] = spec.crosstalk * rng.uniform(0.5, 1.0)

    envelope = gains[None, :] * act[:, None] + spec.emg_floor
    emg = (envelope * rng.normal(size=(N, nc))) @ M.T
    labels = MUSCLES if nc == len(MUSCLES) else tuple(f"ch{c + 1}" for c in range(nc))
    return SessionRecording(sample_rate=spec.sample_rate, emg=emg, force=force, channel_labels=labels)


class RankDeficiencyError(InvalidArgumentError):
    def __init__(self, columns):
        self.columns = tuple(int(c) for c in columns)
        super().__init__(f"regressor matrix is rank deficient; dependent column(s) {list(self.columns)}")


def batch_ls(regressors, targets, prior_mean=None, prior_precision: float | None = None) -> np.ndarray:
    """Least-squares ``theta`` minimising ``sum_k ||target_k - phi_k^T theta||^2``.

    Solved with a column-pivoted QR factorisation. When ``prior_precision``
    is given, the penalty ``prior_precision * ||theta - prior_mean||^2`` is
    added as pseudo-observations; with ``prior_precision = 1 / p0_scale``
    and ``prior_mean = theta0`` this is exactly the problem a unit-forgetting
    RLS run started from ``(theta0, p0_scale * I)`` solves.
    """
    Phi = np.asarray(regressors, dtype=float)
    Y = np.asarray(targets, dtype=float)
    vector = Y.ndim == 1
    if vector:
        Y = Y[:, None]
    if Phi.ndim != 2 or Y.shape[0] != Phi.shape[0]:
        raise InvalidArgumentError(f"regressors {Phi.shape} and targets {Y.shape} disagree")
    d = Phi.shape[1]
    if prior_precision is not None:
        s = np.sqrt(prior_precision)
        mean = np.asarray(0.0 if prior_mean is None else prior_mean, dtype=float)
        if mean.ndim == 1:
            mean = mean[:, None]
        mean = np.broadcast_to(mean, (d, Y.shape[1]))
        Phi = np.vstack([Phi, s * np.eye(d)])
        Y = np.vstack([Y, s * mean])
    if Phi.shape[0] < d:
        raise RankDeficiencyError(range(Phi.shape[0], d))
    Q, R, piv = scipy.linalg.qr(Phi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(Phi.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < d:
        raise RankDeficiencyError(sorted(piv[rank:]))
    theta = np.empty((d, Y.shape[1]))
    theta[piv] = scipy.linalg.solve_triangular(R, Q.T @ Y)
    return theta[:, 0] if vector else theta


def subject_specs(n_subjects: int, base_seed: int = 0, **overrides) -> list[SynthSessionSpec]:
    """Session specs for a cohort of simulated subjects with distinct seeds."""
    return [SynthSessionSpec(seed=base_seed + 1000 * s, **overrides) for s in range(n_subjects)]
