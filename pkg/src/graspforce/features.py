"""Sliding-window sEMG features and min-max normalization.

Channels are addressed by their 1-based electrode number (1..8), matching the
``emg1..emg8`` columns of the CSV format and the armband labelling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import InvalidArgumentError

FEATURES = ("MAV", "RMS", "WL")

MUSCLES = (
    "Pronator Teres",
    "Brachioradialis",
    "Extensor Carpi Radialis",
    "Extensor Digitorum Communis",
    "Extensor Carpi Ulnaris",
    "Flexor Carpi Ulnaris",
    "Palmaris Longus",
    "Flexor Carpi Radialis",
)

# Flexor Carpi Ulnaris, Palmaris Longus, Flexor Carpi Radialis
DEFAULT_CHANNELS = (6, 7, 8)


class DegenerateColumnWarning(UserWarning):
    """A feature column was constant on the fitting set."""


def _as_window(window) -> np.ndarray:
    x = np.asarray(window, dtype=float)
    if x.ndim != 1:
        raise InvalidArgumentError(f"window must be 1-D, got shape {x.shape}")
    return x


def mav(window) -> float:
    """Mean absolute value of a window."""
    x = _as_window(window)
    if x.size == 0:
        raise InvalidArgumentError("MAV of an empty window")
    return float(np.mean(np.abs(x)))


def rms(window) -> float:
    """Root mean square of a window."""
    x = _as_window(window)
    if x.size == 0:
        raise InvalidArgumentError("RMS of an empty window")
    return float(np.sqrt(np.mean(x * x)))


def wl(window) -> float:
    """Waveform length: summed absolute first differences."""
    x = _as_window(window)
    if x.size < 2:
        raise InvalidArgumentError("WL needs at least 2 samples")
    return float(np.sum(np.abs(np.diff(x))))


@dataclass(frozen=True)
class SessionRecording:
    """Time-aligned multichannel sEMG and MVC-normalized force.

    ``emg`` has shape (samples, channels); ``force`` has shape (samples,).
    """

    sample_rate: float
    emg: np.ndarray
    force: np.ndarray
    channel_labels: tuple[str, ...] = MUSCLES

    def __post_init__(self):
        emg = np.asarray(self.emg, dtype=float)
        force = np.asarray(self.force, dtype=float)
        if emg.ndim == 1:
            emg = emg[:, None]
        if not self.sample_rate > 0:
            raise InvalidArgumentError(f"sample_rate must be > 0, got {self.sample_rate}")
        if emg.ndim != 2 or force.ndim != 1 or emg.shape[0] != force.shape[0]:
            raise InvalidArgumentError(
                f"emg {emg.shape} and force {force.shape} are not time-aligned"
            )
        if force.size == 0:
            raise InvalidArgumentError("empty recording")
        if np.any(force < 0.0) or np.any(force > 1.0):
            raise InvalidArgumentError("force must be MVC-normalized into [0, 1]")
        labels = tuple(self.channel_labels)
        if len(labels) != emg.shape[1]:
            labels = tuple(f"ch{c + 1}" for c in range(emg.shape[1]))
        object.__setattr__(self, "emg", emg)
        object.__setattr__(self, "force", force)
        object.__setattr__(self, "channel_labels", labels)

    @property
    def n_samples(self) -> int:
        return self.force.shape[0]

    @property
    def n_channels(self) -> int:
        return self.emg.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SessionRecording):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.channel_labels == other.channel_labels
            and np.array_equal(self.emg, other.emg)
            and np.array_equal(self.force, other.force)
        )


@dataclass(frozen=True)
class WindowSpec:
    length_ms: float = 400.0
    increment_ms: float = 125.0

    def __post_init__(self):
        if not 0 < self.increment_ms <= self.length_ms:
            raise InvalidArgumentError(
                f"need 0 < increment_ms <= length_ms, got {self.increment_ms}, {self.length_ms}"
            )

    def in_samples(self, sample_rate: float) -> tuple[int, int]:
        """Window length and step in samples at ``sample_rate``."""
        length = int(round(self.length_ms * sample_rate / 1000.0))
        step = int(round(self.increment_ms * sample_rate / 1000.0))
        if length < 2:
            raise InvalidArgumentError(f"window is {length} samples; WL needs at least 2")
        if step < 1:
            raise InvalidArgumentError("window increment rounds to zero samples")
        return length, step

    def n_windows(self, n_samples: int, sample_rate: float) -> int:
        length, step = self.in_samples(sample_rate)
        if n_samples < length:
            return 0
        return (n_samples - length) // step + 1


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-window feature rows ``u`` aligned with the windowed force ``y``.

    ``norm_ranges`` holds the per-column (min, max) in raw feature units that
    produced ``u``; it is ``None`` for raw matrices. ``y_range`` plays the same
    role for the force column.
    """

    u: np.ndarray
    y: np.ndarray
    feature_layout: tuple[tuple[int, str], ...]
    ts: float
    t: np.ndarray | None = None
    norm_ranges: np.ndarray | None = None
    y_range: tuple[float, float] | None = None
    degenerate: tuple[int, ...] = field(default=())

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.ndim != 2 or y.ndim != 1 or u.shape[0] != y.shape[0]:
            raise InvalidArgumentError(f"u {u.shape} and y {y.shape} row counts differ")
        if len(self.feature_layout) != u.shape[1]:
            raise InvalidArgumentError("feature_layout does not match the column count")
        if not self.ts > 0:
            raise InvalidArgumentError("ts must be > 0")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_layout", tuple((int(c), str(f)) for c, f in self.feature_layout))
        if self.t is not None:
            object.__setattr__(self, "t", np.asarray(self.t, dtype=float))

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.u.shape[1]

    @property
    def column_names(self) -> list[str]:
        return [f"ch{c}_{f}" for c, f in self.feature_layout]

    @property
    def is_normalized(self) -> bool:
        return self.norm_ranges is not None

    def rows(self, start: int | None = None, stop: int | None = None) -> "FeatureMatrix":
        sl = slice(start, stop)
        return replace(self, u=self.u[sl], y=self.y[sl], t=None if self.t is None else self.t[sl])

    def split(self, ratio: float = 0.5) -> tuple["FeatureMatrix", "FeatureMatrix"]:
        """Temporal split: the first ``ratio`` of rows, then the rest."""
        if not 0 < ratio < 1:
            raise InvalidArgumentError(f"split ratio must be in (0, 1), got {ratio}")
        cut = int(round(len(self) * ratio))
        return self.rows(None, cut), self.rows(cut, None)

    def denormalize_force(self, y) -> np.ndarray:
        """Map normalized force values back to MVC units."""
        y = np.asarray(y, dtype=float)
        if self.y_range is None:
            return y
        lo, hi = self.y_range
        return lo + y * (hi - lo)


def extract_features(
    rec: SessionRecording,
    spec: WindowSpec = WindowSpec(),
    channels: Sequence[int] = DEFAULT_CHANNELS,
    features: Sequence[str] = FEATURES,
) -> FeatureMatrix:
    """Slide a window over ``rec`` and compute the requested features.

    Window ``k`` covers samples ``[k*step, k*step + length)``; a trailing
    partial window is dropped. The force target of each row is the mean
    force over the same window. Columns are channel-major, features in
    (MAV, RMS, WL) order regardless of the order requested.
    """
    channels = tuple(int(c) for c in channels)
    if not channels:
        raise InvalidArgumentError("no channels selected")
    bad = [c for c in channels if not 1 <= c <= rec.n_channels]
    if bad:
        raise InvalidArgumentError(f"channel(s) {bad} outside 1..{rec.n_channels}")
    unknown = set(features) - set(FEATURES)
    if unknown or not features:
        raise InvalidArgumentError(f"unknown or empty feature set {sorted(unknown)}")
    feats = tuple(f for f in FEATURES if f in features)

    length, step = spec.in_samples(rec.sample_rate)
    if rec.n_samples < length:
        raise InvalidArgumentError(
            f"recording has {rec.n_samples} samples, shorter than one {length}-sample window"
        )

    # (windows, channels, length)
    win = sliding_window_view(rec.emg[:, [c - 1 for c in channels]], length, axis=0)[::step]
    computed = {}
    if "MAV" in feats:
        computed["MAV"] = np.mean(np.abs(win), axis=2)
    if "RMS" in feats:
        computed["RMS"] = np.sqrt(np.mean(win * win, axis=2))
    if "WL" in feats:
        computed["WL"] = np.sum(np.abs(np.diff(win, axis=2)), axis=2)
    u = np.stack([computed[f] for f in feats], axis=2).reshape(win.shape[0], -1)

    y = np.mean(sliding_window_view(rec.force, length)[::step], axis=1)
    starts = np.arange(win.shape[0]) * step
    t = (starts + length) / rec.sample_rate
    layout = tuple((c, f) for c in channels for f in feats)
    return FeatureMatrix(u=u, y=y, feature_layout=layout, ts=step / rec.sample_rate, t=t)


def _fit_ranges(a: np.ndarray) -> np.ndarray:
    return np.column_stack([a.min(axis=0), a.max(axis=0)])


def _apply(a: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    lo, hi = ranges[:, 0], ranges[:, 1]
    span = hi - lo
    scale = np.divide(1.0, span, out=np.zeros_like(span), where=span > 0)
    return (a - lo) * scale


def normalize(
    m: FeatureMatrix,
    ranges: np.ndarray | None = None,
    y_range: tuple[float, float] | None = None,
) -> FeatureMatrix:
    """Min-max normalize the columns of ``m`` (and its force target).

    With ``ranges``/``y_range`` omitted they are fit on ``m`` itself; pass
    the ranges of an identification matrix to map validation data with the
    same affine transform. Values outside the fitting range are not clamped.
    Constant columns map to 0 and are listed in ``degenerate``.

    Ranges are always expressed in raw units: normalizing an already
    normalized matrix composes the transforms.
    """
    if len(m) == 0:
        raise InvalidArgumentError("cannot normalize an empty feature matrix")
    fitted = ranges is None
    new_ranges = _fit_ranges(m.u) if fitted else np.asarray(ranges, dtype=float)
    if new_ranges.shape != (m.n_inputs, 2):
        raise InvalidArgumentError(f"ranges shape {new_ranges.shape} != ({m.n_inputs}, 2)")
    if y_range is None:
        y_range = (float(m.y.min()), float(m.y.max())) if fitted else (0.0, 1.0)
    y_rng = np.array([y_range], dtype=float)

    u = _apply(m.u, new_ranges)
    y = _apply(m.y[:, None], y_rng)[:, 0]

    degenerate = tuple(int(c) for c in np.flatnonzero(new_ranges[:, 1] <= new_ranges[:, 0]))
    if fitted and degenerate:
        names = [m.column_names[c] for c in degenerate]
        warnings.warn(f"constant feature column(s) {names} mapped to 0", DegenerateColumnWarning, stacklevel=2)

    # compose with any transform already applied so ranges stay in raw units
    if m.norm_ranges is not None:
        lo0, hi0 = m.norm_ranges[:, 0], m.norm_ranges[:, 1]
        span0 = hi0 - lo0
        new_ranges = np.column_stack([lo0 + new_ranges[:, 0] * span0, lo0 + new_ranges[:, 1] * span0])
    if m.y_range is not None:
        ylo, yhi = m.y_range
        y_rng = ylo + y_rng * (yhi - ylo)

    return replace(
        m,
        u=u,
        y=y,
        norm_ranges=new_ranges,
        y_range=(float(y_rng[0, 0]), float(y_rng[0, 1])),
        degenerate=degenerate,
    )


def apply_normalization(raw: FeatureMatrix, fitted: FeatureMatrix) -> FeatureMatrix:
    """Normalize ``raw`` with the ranges stored on ``fitted``."""
    if fitted.norm_ranges is None:
        raise InvalidArgumentError("reference matrix carries no normalization ranges")
    if raw.norm_ranges is not None:
        raise InvalidArgumentError("matrix is already normalized")
    return normalize(raw, fitted.norm_ranges, fitted.y_range)
