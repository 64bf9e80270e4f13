"""Goodness-of-fit metrics, per-subject aggregation and wall-clock timing."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .exceptions import InvalidArgumentError

log = logging.getLogger(__name__)


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray, float]:
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.size == 0 or y.shape != y_hat.shape:
        raise InvalidArgumentError(f"need equal non-zero lengths, got {y.shape} and {y_hat.shape}")
    dev = y - y.mean()
    sst = float(dev @ dev)
    if sst == 0.0:
        raise InvalidArgumentError("metric undefined for a constant reference signal")
    return y, y_hat, sst


def nrmse(y, y_hat) -> float:
    """``1 - ||y - y_hat|| / ||y - mean(y)||``; 1 is a perfect fit."""
    y, y_hat, sst = _pair(y, y_hat)
    r = y - y_hat
    return 1.0 - float(np.sqrt(r @ r) / np.sqrt(sst))


def r2(y, y_hat) -> float:
    """Coefficient of determination ``1 - SSE/SST`` (negative for fits worse than the mean)."""
    y, y_hat, sst = _pair(y, y_hat)
    r = y - y_hat
    return 1.0 - float(r @ r) / sst


@dataclass(frozen=True)
class EvalRow:
    subject: str
    model: str
    r2: float
    nrmse: float


@dataclass(frozen=True)
class Aggregate:
    model: str
    count: int
    r2_mean: float
    r2_sd: float
    nrmse_mean: float
    nrmse_sd: float


@dataclass(frozen=True)
class TimingStats:
    mean_ms: float
    sd_ms: float
    repeats: int

    def as_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "sd_ms": self.sd_ms, "repeats": self.repeats}


@dataclass
class EvalReport:
    rows: list[EvalRow]
    models: list[str]
    subjects: list[str]
    timing: dict[str, dict[str, TimingStats]] = field(default_factory=dict)
    failures: list[tuple[str, str, str]] = field(default_factory=list)

    def aggregate(self) -> dict[str, Aggregate]:
        """Mean and unbiased SD per model over the available cells."""
        out = {}
        for name in self.models:
            cells = [r for r in self.rows if r.model == name]
            if not cells:
                continue
            out[name] = Aggregate(
                model=name,
                count=len(cells),
                r2_mean=statistics.fmean(r.r2 for r in cells),
                r2_sd=_sd([r.r2 for r in cells]),
                nrmse_mean=statistics.fmean(r.nrmse for r in cells),
                nrmse_sd=_sd([r.nrmse for r in cells]),
            )
        return out

    def cell(self, subject: str, model: str) -> EvalRow | None:
        for r in self.rows:
            if r.subject == subject and r.model == model:
                return r
        return None

    def table_rows(self) -> list[list[str]]:
        """Wide layout: one row per subject, (R2, NRMSE) per model, then Average and SD."""
        header = ["subject"] + [f"{m}_{k}" for m in self.models for k in ("R2", "NRMSE")]
        lines = [header]
        for s in self.subjects:
            line = [s]
            for m in self.models:
                c = self.cell(s, m)
                line += ["", ""] if c is None else [repr(c.r2), repr(c.nrmse)]
            lines.append(line)
        agg = self.aggregate()
        for label, keys in (("Average", ("r2_mean", "nrmse_mean")), ("SD", ("r2_sd", "nrmse_sd"))):
            line = [label]
            for m in self.models:
                a = agg.get(m)
                line += ["", ""] if a is None else [repr(getattr(a, keys[0])), repr(getattr(a, keys[1]))]
            lines.append(line)
        return lines

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "subjects": list(self.subjects),
            "per_subject": [r.__dict__ for r in self.rows],
            "aggregate": {m: a.__dict__ for m, a in self.aggregate().items()},
            "failures": [{"subject": s, "model": m, "error": e} for s, m, e in self.failures],
            "timing": {
                m: {k: v.as_dict() for k, v in d.items()} for m, d in self.timing.items()
            },
        }


def _sd(values: list[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


def evaluate(
    predictions: Mapping[tuple[str, str], Callable[[], tuple[np.ndarray, np.ndarray]]]
    | Iterable[tuple[str, str, Callable[[], tuple[np.ndarray, np.ndarray]]]],
    models: list[str] | None = None,
    subjects: list[str] | None = None,
) -> EvalReport:
    """Score every (subject, model) cell.

    Each cell is a zero-argument callable returning ``(y, y_hat)`` on the
    validation data. A cell that raises is recorded in ``failures`` and left
    out of the report; the remaining cells are still scored.
    """
    items = predictions.items() if isinstance(predictions, Mapping) else (((s, m), f) for s, m, f in predictions)
    rows, failures = [], []
    seen_models, seen_subjects = [], []
    for (subject, model), produce in items:
        if model not in seen_models:
            seen_models.append(model)
        if subject not in seen_subjects:
            seen_subjects.append(subject)
        try:
            y, y_hat = produce()
            rows.append(EvalRow(subject, model, r2(y, y_hat), nrmse(y, y_hat)))
        except Exception as exc:  # per-cell isolation
            log.warning("cell (%s, %s) failed: %s", subject, model, exc)
            failures.append((subject, model, f"{type(exc).__name__}: {exc}"))
    return EvalReport(
        rows=rows,
        models=models or seen_models,
        subjects=subjects or seen_subjects,
        failures=failures,
    )


def time_block(action: Callable[[], object], repeats: int = 100, warmup: int = 10) -> TimingStats:
    """Wall-clock statistics of ``action`` over ``repeats`` calls, after ``warmup`` discarded calls."""
    if repeats < 1:
        raise InvalidArgumentError("repeats must be >= 1")
    for _ in range(warmup):
        action()
    samples = []
    clock = time.perf_counter_ns
    for _ in range(repeats):
        t0 = clock()
        action()
        samples.append((clock() - t0) / 1e6)
    return TimingStats(mean_ms=statistics.fmean(samples), sd_ms=_sd(samples), repeats=repeats)
