"""File formats: recording CSV, feature CSV, and JSON documents for models.

Floats are written with ``repr`` so every value survives a write/read
cycle bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .baselines import LdaQpfModel, MlpModel, NarxModel, TrainConfig
from .exceptions import DataError, InvalidArgumentError
from .features import MUSCLES, FeatureMatrix, SessionRecording
from .kalman import KalmanEstimator, NoiseCovariances
from .ssid import StateSpaceModel

FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return repr(float(x))


def write_recording(rec: SessionRecording, path) -> None:
    """Write ``t_ms, emg1..emgK, force`` with one row per sample."""
    path = Path(path)
    header = ["t_ms"] + [f"emg{c + 1}" for c in range(rec.n_channels)] + ["force"]
    t_ms = np.arange(rec.n_samples) * (1000.0 / rec.sample_rate)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(rec.n_samples):
            w.writerow([_fmt(t_ms[k])] + [_fmt(v) for v in rec.emg[k]] + [_fmt(rec.force[k])])


def read_recording(path, mvc: float | None = None, sample_rate: float | None = None) -> SessionRecording:
    """Parse a recording CSV.

    The sample rate is inferred from the ``t_ms`` column unless given.
    With ``mvc`` the force column is in newtons and is divided by it;
    otherwise it must already be a fraction of MVC in [0, 1].
    """
    path = Path(path)
    if mvc is not None and not mvc > 0:
        raise InvalidArgumentError("mvc must be > 0")
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    n_emg = len(header) - 2
    expected = ["t_ms"] + [f"emg{c + 1}" for c in range(n_emg)] + ["force"]
    if n_emg < 1 or header != expected:
        raise DataError(f"bad header {header!r}; expected t_ms, emg1..emgK, force", line=1)
    body = rows[1:]
    if not body:
        raise DataError(f"{path} has a header but no samples", line=1)

    data = np.empty((len(body), len(header)))
    for idx, row in enumerate(body):
        line = idx + 2
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", line=line)
        for col, field in enumerate(row):
            try:
                val = float(field)
            except ValueError:
                raise DataError(f"column {header[col]!r}: {field!r} is not a number", line=line) from None
            if not math.isfinite(val):
                raise DataError(f"column {header[col]!r}: non-finite value {field!r}", line=line)
            data[idx, col] = val

    force = data[:, -1] / mvc if mvc is not None else data[:, -1]
    bad = np.flatnonzero((force < 0) | (force > 1))
    if bad.size:
        hint = "" if mvc is not None else " (pass the MVC in newtons to normalize)"
        raise DataError(f"force {data[bad[0], -1]!r} outside [0, 1]{hint}", line=int(bad[0]) + 2)

    if sample_rate is None:
        if data.shape[0] < 2:
            raise DataError("cannot infer the sample rate from a single sample; pass it explicitly")
        dt = np.diff(data[:, 0])
        if np.any(dt <= 0):
            raise DataError("t_ms is not strictly increasing", line=int(np.argmax(dt <= 0)) + 3)
        sample_rate = 1000.0 / float(np.median(dt))
    labels = MUSCLES if n_emg == len(MUSCLES) else tuple(f"ch{c + 1}" for c in range(n_emg))
    return SessionRecording(sample_rate=sample_rate, emg=data[:, 1:-1], force=force, channel_labels=labels)


def write_features(fm: FeatureMatrix, path) -> None:
    """Feature rows with the layout as header: ``t_s, ch6_MAV, ..., force``."""
    t = fm.t if fm.t is not None else (np.arange(len(fm)) + 1) * fm.ts
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s"] + fm.column_names + ["force"])
        for k in range(len(fm)):
            w.writerow([_fmt(t[k])] + [_fmt(v) for v in fm.u[k]] + [_fmt(fm.y[k])])


def write_table(rows: list[list], path) -> None:
    with Path(path).open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def dump_json(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})", line=exc.lineno) from None


def _mat(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _arr(doc: dict, key: str, ndim: int = 2) -> np.ndarray:
    try:
        a = np.asarray(doc[key], dtype=float)
    except KeyError:
        raise DataError(f"model document lacks {key!r}") from None
    except (TypeError, ValueError):
        raise DataError(f"model field {key!r} is not numeric") from None
    if a.ndim != ndim:
        raise DataError(f"model field {key!r} should have {ndim} dimension(s)")
    return a


def model_to_dict(
    model: StateSpaceModel,
    reference: FeatureMatrix,
    theta0: float,
    p0_scale: float,
    kf: KalmanEstimator | None = None,
    config_hash: str | None = None,
) -> dict:
    """JSON-ready description of an identified model.

    ``reference`` is the normalized identification matrix; its ranges and
    layout are stored so new recordings can be mapped identically.
    """
    doc = {
        "format": "graspforce.state_space",
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        "n": model.n,
        "i": model.i,
        "j": model.j,
        "ts": model.ts,
        "A": _mat(model.A),
        "B": _mat(model.B),
        "Gamma": _mat(model.Gamma),
        "C": _mat(model.C),
        "theta0": theta0,
        "p0_scale": p0_scale,
        "feature_layout": [[c, f] for c, f in reference.feature_layout],
        "norm_ranges": None if reference.norm_ranges is None else _mat(reference.norm_ranges),
        "y_range": None if reference.y_range is None else list(reference.y_range),
        "kalman": None,
    }
    if kf is not None:
        doc["kalman"] = {
            "L": _mat(kf.L),
            "P_kf": _mat(kf.P_kf),
            "Q_kf": None if kf.noise is None else _mat(kf.noise.Q_kf),
            "R_kf": None if kf.noise is None else _mat(kf.noise.R_kf),
            "Q": None if kf.noise is None else _mat(kf.noise.Q),
            "R": None if kf.noise is None else _mat(kf.noise.R),
            "floor": None if kf.noise is None else kf.noise.floor,
        }
    return doc


def model_from_dict(doc: dict) -> tuple[StateSpaceModel, KalmanEstimator | None, dict]:
    """Inverse of :func:`model_to_dict`; also returns the normalization metadata."""
    if doc.get("format") != "graspforce.state_space":
        raise DataError("not a state-space model document")
    try:
        model = StateSpaceModel(
            A=_arr(doc, "A"), B=_arr(doc, "B"), Gamma=_arr(doc, "Gamma"), C=_arr(doc, "C"), ts=float(doc["ts"])
        )
    except InvalidArgumentError as exc:
        raise DataError(f"inconsistent model matrices: {exc}") from None
    if (model.n, model.i, model.j) != (doc.get("n"), doc.get("i"), doc.get("j")):
        raise DataError("declared dimensions do not match the matrices")
    meta = {
        "feature_layout": tuple((int(c), str(f)) for c, f in doc["feature_layout"]),
        "norm_ranges": None if doc.get("norm_ranges") is None else _arr(doc, "norm_ranges"),
        "y_range": None if doc.get("y_range") is None else tuple(float(v) for v in doc["y_range"]),
        "theta0": doc.get("theta0"),
        "p0_scale": doc.get("p0_scale"),
        "config_hash": doc.get("config_hash"),
    }
    kf = None
    k = doc.get("kalman")
    if k is not None:
        noise = None
        if k.get("Q_kf") is not None:
            noise = NoiseCovariances(
                Q=_arr(k, "Q"), R=_arr(k, "R"), Q_kf=_arr(k, "Q_kf"), R_kf=_arr(k, "R_kf"), floor=float(k["floor"])
            )
        kf = KalmanEstimator(model=model, L=_arr(k, "L"), P_kf=_arr(k, "P_kf"), noise=noise)
    return model, kf, meta


def _cfg_dict(cfg: TrainConfig | None) -> dict | None:
    return None if cfg is None else dict(cfg.__dict__)


def baseline_to_dict(m) -> dict:
    """Serialize an MLP, NARX or LDA+QPF model (weights, config and seed)."""
    if isinstance(m, NarxModel):
        return {"kind": "narx", "n_u": m.n_u, "n_y": m.n_y, "inner": baseline_to_dict(m.inner)}
    if isinstance(m, MlpModel):
        return {
            "kind": "mlp",
            "w1": _mat(m.w1),
            "w2": _mat(m.w2),
            "activation": m.activation,
            "final_mse": m.final_mse,
            "config": _cfg_dict(m.config),
        }
    if isinstance(m, LdaQpfModel):
        return {"kind": "lda_qpf", "W": _mat(m.W), "poly": _mat(m.poly), "levels": m.levels, "sse": m.sse}
    raise InvalidArgumentError(f"cannot serialize {type(m).__name__}")


def baseline_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "narx":
        return NarxModel(inner=baseline_from_dict(doc["inner"]), n_u=int(doc["n_u"]), n_y=int(doc["n_y"]))
    if kind == "mlp":
        cfg = None if doc.get("config") is None else TrainConfig(**doc["config"])
        final = doc.get("final_mse")
        return MlpModel(
            w1=_arr(doc, "w1"),
            w2=_arr(doc, "w2", 1),
            activation=doc["activation"],
            losses=np.zeros(0) if final is None else np.array([final]),
            config=cfg,
        )
    if kind == "lda_qpf":
        return LdaQpfModel(W=_arr(doc, "W", 1), poly=_arr(doc, "poly", 1), levels=int(doc["levels"]), sse=float(doc["sse"]))
    raise DataError(f"unknown baseline kind {kind!r}")
