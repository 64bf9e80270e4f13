"""Configuration and the end-to-end pipeline shared by the CLI and the tests.

A session goes through: feature extraction, temporal split, min-max
normalization fit on the identification half, model fitting, and
prediction on the validation half. Predictions are mapped back to MVC
units and clamped to [0, 1] before scoring, identically for every model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import baselines as bl
from .exceptions import ConfigError, GraspForceError, NumericalFailureError
from .features import FEATURES, FeatureMatrix, SessionRecording, WindowSpec, apply_normalization, extract_features, normalize
from .kalman import KalmanEstimator, kf_run, tune
from .metrics import EvalReport, TimingStats, evaluate, time_block
from .ssid import OrderSelection, StateSpaceModel, identify, select_order, simulate

log = logging.getLogger(__name__)

COMPARE_MODELS = ("SS_KF", "MLP", "NARX", "LDA_QPF")


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline. Defaults are the reference settings."""

    window_length_ms: float = 400.0
    window_increment_ms: float = 125.0
    channels: tuple[int, ...] = (6, 7, 8)
    features: tuple[str, ...] = FEATURES
    order: int | str = 4
    max_order: int = 12
    theta0: float = 0.3
    p0_scale: float = 1e3
    aic_threshold: float = 0.05
    kf: bool = True
    variance_floor: float = 1e-9
    split_ratio: float = 0.5
    seed: int = 0
    hidden: int | None = None
    narx_memory: int | None = None
    epochs: int = 1000
    learning_rate: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    lda_levels: int = 3
    mvc: float | None = None
    workers: int = 1
    timing_repeats: int = 100
    timing_warmup: int = 10

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "features", tuple(str(f).upper() for f in self.features))
        if isinstance(self.order, str):
            if self.order != "auto":
                try:
                    object.__setattr__(self, "order", int(self.order))
                except ValueError:
                    raise ConfigError(f"order must be a positive integer or 'auto', got {self.order!r}") from None
        if self.order != "auto" and not (isinstance(self.order, int) and self.order >= 1):
            raise ConfigError(f"order must be a positive integer or 'auto', got {self.order!r}")
        checks = [
            (self.window_length_ms > 0 and self.window_increment_ms > 0, "window sizes must be > 0"),
            (bool(self.channels) and min(self.channels) >= 1, "channels are 1-based and non-empty"),
            (bool(self.features) and set(self.features) <= set(FEATURES), f"features must be a subset of {FEATURES}"),
            (self.max_order >= 1, "max_order must be >= 1"),
            (self.p0_scale > 0, "p0_scale must be > 0"),
            (0 <= self.aic_threshold < 1, "aic_threshold must be in [0, 1)"),
            (self.variance_floor > 0, "variance_floor must be > 0"),
            (0 < self.split_ratio < 1, "split_ratio must be in (0, 1)"),
            (self.hidden is None or self.hidden >= 1, "hidden must be >= 1"),
            (self.narx_memory is None or self.narx_memory >= 0, "narx_memory must be >= 0"),
            (0 <= self.epochs <= 1000, "epochs must be in 0..1000"),
            (self.learning_rate > 0 and 0 <= self.rho < 1 and self.eps > 0, "invalid RMSprop settings"),
            (self.lda_levels >= 2, "lda_levels must be >= 2"),
            (self.mvc is None or self.mvc > 0, "mvc must be > 0"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.timing_repeats >= 1 and self.timing_warmup >= 0, "invalid timing repeats"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.window_length_ms, self.window_increment_ms)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["features"] = list(self.features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def hash(self) -> str:
        """Digest of every setting that can change results (``workers`` excluded)."""
        d = self.to_dict()
        d.pop("workers")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def train_config(self, order: int) -> bl.TrainConfig:
        return bl.TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            rho=self.rho,
            eps=self.eps,
            hidden=self.hidden or order,
            seed=self.seed,
        )


@dataclass
class SubjectData:
    """A recording prepared for fitting: normalized halves and the resolved order."""

    ident: FeatureMatrix
    valid: FeatureMatrix
    valid_raw: FeatureMatrix
    order: int
    selection: OrderSelection | None = None

    def to_force(self, y_hat) -> np.ndarray:
        """Normalized prediction -> MVC units, clamped to [0, 1]."""
        return np.clip(self.valid.denormalize_force(y_hat), 0.0, 1.0)


def features_of(rec: SessionRecording, cfg: PipelineConfig) -> FeatureMatrix:
    return extract_features(rec, cfg.window, cfg.channels, cfg.features)


def prepare(rec: SessionRecording, cfg: PipelineConfig) -> SubjectData:
    fm = features_of(rec, cfg)
    a, b = fm.split(cfg.split_ratio)
    ident = normalize(a)
    valid = apply_normalization(b, ident)
    selection = None
    if cfg.order == "auto":
        selection = select_order(ident, range(1, cfg.max_order + 1), cfg.aic_threshold, cfg.theta0, cfg.p0_scale)
        order = selection.order
    else:
        order = cfg.order
    return SubjectData(ident=ident, valid=valid, valid_raw=b, order=order, selection=selection)


class Regressor:
    """Common interface: ``fit`` on the identification half, ``predict`` on validation.

    ``predict`` returns normalized force, one value per validation row.
    ``step`` returns a zero-argument callable performing one per-window
    estimate, used for loop-runtime timing.
    """

    name = ""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg

    def fit(self, data: SubjectData) -> None:
        raise NotImplementedError

    def predict(self, data: SubjectData) -> np.ndarray:
        raise NotImplementedError

    def step(self, data: SubjectData) -> Callable[[], object]:
        raise NotImplementedError


class StateSpaceRegressor(Regressor):
    def __init__(self, cfg: PipelineConfig, use_kf: bool = True):
        super().__init__(cfg)
        self.use_kf = use_kf
        self.name = "SS_KF" if use_kf else "SS"
        self.model: StateSpaceModel | None = None
        self.kf: KalmanEstimator | None = None

    def fit(self, data: SubjectData) -> None:
        self.model, est = identify(data.ident, data.order, self.cfg.theta0, self.cfg.p0_scale)
        # the noise estimator always runs so the model document is complete
        self.kf = tune(self.model, est, floor=self.cfg.variance_floor)
        if self.use_kf and not self.kf.stable:
            raise NumericalFailureError("estimator A - LC is not strictly stable; identification rejected")

    def predict(self, data: SubjectData) -> np.ndarray:
        if self.use_kf:
            return kf_run(self.kf, data.valid.u, data.valid.y)
        return simulate(self.model, data.valid.u)

    def step(self, data: SubjectData):
        u0, y0 = data.valid.u[0].copy(), data.valid.y[0]
        if self.use_kf:
            kf = self.kf
            return lambda: kf.step(u0, y0)
        A, B, C = self.model.A, self.model.B, self.model.C[0]
        x = np.zeros(self.model.n)
        return lambda: C @ (A @ x + B @ u0)


class MlpRegressor(Regressor):
    name = "MLP"

    def fit(self, data):
        self.model = bl.mlp_train(data.ident, self.cfg.train_config(data.order))

    def predict(self, data):
        return bl.mlp_forward(self.model, data.valid.u)

    def step(self, data):
        row = data.valid.u[0].copy()
        return lambda: bl.mlp_predict(self.model, row)


class NarxRegressor(Regressor):
    name = "NARX"

    def _memory(self, data) -> int:
        return data.order if self.cfg.narx_memory is None else self.cfg.narx_memory

    def fit(self, data):
        m = self._memory(data)
        self.model = bl.narx_train(data.ident, self.cfg.train_config(data.order), n_u=m, n_y=m)

    def _seeds(self, data):
        m = self.model
        return data.ident.y[len(data.ident) - m.n_y:], data.ident.u[len(data.ident) - m.n_u:]

    def predict(self, data):
        y0, u0 = self._seeds(data)
        return bl.narx_predict(self.model, data.valid.u, y0, u0)

    def step(self, data):
        y0, u0 = self._seeds(data)
        row = data.valid.u[:1].copy()
        return lambda: bl.narx_predict(self.model, row, y0, u0)


class LdaQpfRegressor(Regressor):
    name = "LDA_QPF"

    def fit(self, data):
        self.model = bl.ldaqpf_train(data.ident, self.cfg.lda_levels)

    def predict(self, data):
        return bl.ldaqpf_forward(self.model, data.valid.u)

    def step(self, data):
        row = data.valid.u[0].copy()
        return lambda: bl.ldaqpf_predict(self.model, row, clamp=False)


REGISTRY: dict[str, Callable[[PipelineConfig], Regressor]] = {
    "SS_KF": lambda cfg: StateSpaceRegressor(cfg, use_kf=True),
    "SS": lambda cfg: StateSpaceRegressor(cfg, use_kf=False),
    "MLP": MlpRegressor,
    "NARX": NarxRegressor,
    "LDA_QPF": LdaQpfRegressor,
}


def make_regressor(name: str, cfg: PipelineConfig) -> Regressor:
    try:
        return REGISTRY[name](cfg)
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(REGISTRY)}") from None


@dataclass
class SubjectResult:
    subject: str
    y: np.ndarray | None = None
    predictions: dict[str, np.ndarray] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    training_ms: dict[str, float] = field(default_factory=dict)
    loop: dict[str, TimingStats] = field(default_factory=dict)
    stages: dict[str, TimingStats] = field(default_factory=dict)


def _describe(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def run_subject(subject: str, rec: SessionRecording, cfg: PipelineConfig, models: Sequence[str], timing: bool = False) -> SubjectResult:
    """Fit and score every model on one recording, isolating per-model failures."""
    res = SubjectResult(subject)
    try:
        data = prepare(rec, cfg)
    except GraspForceError as exc:
        res.errors = {m: _describe(exc) for m in models}
        return res
    res.y = data.valid_raw.y
    for name in models:
        reg = make_regressor(name, cfg)
        try:
            t0 = time.perf_counter_ns()
            reg.fit(data)
            res.training_ms[name] = (time.perf_counter_ns() - t0) / 1e6
            res.predictions[name] = data.to_force(reg.predict(data))
            if timing:
                res.loop[name] = time_block(reg.step(data), cfg.timing_repeats, cfg.timing_warmup)
                if name == "SS_KF":
                    res.stages = stage_timing(rec, data, reg, cfg)
        except (GraspForceError, np.linalg.LinAlgError) as exc:
            log.warning("%s / %s failed: %s", subject, name, exc)
            res.errors[name] = _describe(exc)
    return res


def stage_timing(rec: SessionRecording, data: SubjectData, reg: Regressor, cfg: PipelineConfig) -> dict[str, TimingStats]:
    """Per-window cost of each stage: features, normalization, estimation, and all three."""
    length, _ = cfg.window.in_samples(rec.sample_rate)
    one = SessionRecording(rec.sample_rate, rec.emg[:length], rec.force[:length], rec.channel_labels)
    lo, hi = data.ident.norm_ranges[:, 0], data.ident.norm_ranges[:, 1]
    span = np.where(hi > lo, hi - lo, 1.0)
    estimate = reg.step(data)
    state = {}

    def features():
        state["u"] = features_of(one, cfg).u[0]

    def norm():
        return (state["u"] - lo) / span

    def chain():
        features()
        norm()
        estimate()

    features()
    n, w = cfg.timing_repeats, cfg.timing_warmup
    return {
        "features": time_block(features, n, w),
        "normalize": time_block(norm, n, w),
        "estimate": time_block(estimate, n, w),
        "window_total": time_block(chain, n, w),
    }


def _task(args):
    return run_subject(*args)


def run_cohort(
    sessions: Sequence[tuple[str, SessionRecording]],
    cfg: PipelineConfig,
    models: Sequence[str] = COMPARE_MODELS,
    timing: bool = False,
) -> list[SubjectResult]:
    """Process subjects, in a worker pool when ``cfg.workers > 1``; output order follows input order."""
    for m in models:
        make_regressor(m, cfg)
    jobs = [(s, rec, cfg, tuple(models), timing) for s, rec in sessions]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_task, jobs))
    return [_task(j) for j in jobs]


class ModelFailure(GraspForceError):
    """Replays a failure recorded while fitting, so the report lists it."""


def _raise(msg: str):
    raise ModelFailure(msg)


def report_of(results: Sequence[SubjectResult], models: Sequence[str]) -> EvalReport:
    cells = {}
    for r in results:
        for m in models:
            if m in r.predictions:
                cells[(r.subject, m)] = (lambda y=r.y, p=r.predictions[m]: (y, p))
            else:
                cells[(r.subject, m)] = (lambda msg=r.errors.get(m, "no prediction"): _raise(msg))
    report = evaluate(cells, list(models), [r.subject for r in results])
    prefix = "ModelFailure: "
    report.failures = [(s, m, e[len(prefix):] if e.startswith(prefix) else e) for s, m, e in report.failures]
    return report


def compare(sessions, cfg: PipelineConfig, models: Sequence[str] = COMPARE_MODELS) -> EvalReport:
    return report_of(run_cohort(sessions, cfg, models), models)


def _pool(values: list[float]) -> TimingStats:
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return TimingStats(mean_ms=statistics.fmean(values), sd_ms=sd, repeats=len(values))


def bench(sessions, cfg: PipelineConfig, models: Sequence[str] = COMPARE_MODELS) -> dict:
    """Training time and per-window loop runtime per model, plus the stage breakdown.

    Training time statistics are across subjects; loop runtime is the mean
    over subjects of each subject's repeated-call mean, with the SD of
    those means.
    """
    results = run_cohort(sessions, cfg, models, timing=True)
    out = {"models": {}, "stages": {}, "failures": []}
    for m in models:
        train = [r.training_ms[m] for r in results if m in r.loop]
        loop = [r.loop[m].mean_ms for r in results if m in r.loop]
        if train:
            out["models"][m] = {"training_ms": _pool(train).as_dict(), "loop_ms": _pool(loop).as_dict()}
    stage_names = ("features", "normalize", "estimate", "window_total")
    for st in stage_names:
        vals = [r.stages[st].mean_ms for r in results if r.stages]
        if vals:
            out["stages"][st] = _pool(vals).as_dict()
    for r in results:
        out["failures"] += [{"subject": r.subject, "model": m, "error": e} for m, e in r.errors.items()]
    return out


def with_overrides(cfg: PipelineConfig, **kw) -> PipelineConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
