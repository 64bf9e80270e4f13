"""Command-line entry point: ``graspforce <command> [options]``.

Every option named after a :class:`PipelineConfig` field overrides the
value from ``--config`` (a JSON file), which overrides the defaults.
Recording inputs may be files or directories of ``*.csv``; with none
given, the directory in ``$GRASPFORCE_DATA_DIR`` is used.

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. On failure a JSON error document is written to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .exceptions import ConfigError, DataError, GraspForceError, InvalidArgumentError, NumericalFailureError
from .features import normalize
from .kalman import kf_run
from .metrics import nrmse, r2
from .pipeline import COMPARE_MODELS, PipelineConfig, StateSpaceRegressor, bench, compare, features_of, prepare, report_of, run_cohort
from .ssid import analyze, select_order, simulate
from .synth import gen_session, subject_specs

DATA_DIR_ENV = "GRASPFORCE_DATA_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("graspforce")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _csv_list(kind):
    def parse(text: str):
        try:
            return tuple(kind(t.strip()) for t in text.split(",") if t.strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _on_off(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError("expected on/off")


def _order(text: str):
    return text if text == "auto" else int(text)


_FIELD_TYPES = {
    "channels": _csv_list(int),
    "features": _csv_list(str),
    "order": _order,
    "kf": _on_off,
    "hidden": int,
    "narx_memory": int,
    "mvc": float,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--config", type=Path, help="JSON file with PipelineConfig fields")
    for f in fields(PipelineConfig):
        kind = _FIELD_TYPES.get(f.name) or type(f.default)
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", type=kind, default=None,
                       metavar=f.name.upper())


def config_from_args(ns: argparse.Namespace) -> PipelineConfig:
    base = {}
    if getattr(ns, "config", None) is not None:
        try:
            base = json.loads(Path(ns.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {ns.config} is not valid JSON: {exc.msg}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    for f in fields(PipelineConfig):
        val = getattr(ns, f"cfg_{f.name}", None)
        if val is not None:
            base[f.name] = val
    return PipelineConfig.from_dict(base)


def _inputs(paths: Sequence[str]) -> list[Path]:
    if not paths:
        env = os.environ.get(DATA_DIR_ENV)
        if not env:
            raise ConfigError(f"no input given and ${DATA_DIR_ENV} is not set")
        paths = [env]
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out += sorted(p.glob("*.csv"))
        elif p.exists():
            out.append(p)
        else:
            raise DataError(f"{p} does not exist")
    if not out:
        raise DataError("no recordings found")
    return out


def _sessions(paths: Sequence[str], cfg: PipelineConfig):
    return [(p.stem, io.read_recording(p, mvc=cfg.mvc)) for p in _inputs(paths)]


def _meta(cfg: PipelineConfig, command: str, **extra) -> dict:
    return {"command": command, "config_hash": cfg.hash(), "config": cfg.to_dict(), **extra}


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_synth(ns, cfg):
    out = _out_dir(ns.out)
    specs = subject_specs(ns.subjects, base_seed=cfg.seed, duration_s=ns.duration)
    written = []
    for k, spec in enumerate(specs):
        path = out / f"S{k + 1:02d}.csv"
        io.write_recording(gen_session(spec), path)
        written.append(path.name)
    io.dump_json(_meta(cfg, "synth", files=written, seeds=[s.seed for s in specs], duration_s=ns.duration),
                 out / "synth.json")
    _emit({"written": written})


def cmd_extract(ns, cfg):
    rec = io.read_recording(ns.input, mvc=cfg.mvc)
    fm = features_of(rec, cfg)
    io.write_features(fm, ns.out)
    io.dump_json(_meta(cfg, "extract", source=Path(ns.input).name, rows=len(fm)), Path(f"{ns.out}.meta.json"))
    _emit({"rows": len(fm), "columns": fm.column_names})


def cmd_identify(ns, cfg):
    rec = io.read_recording(ns.input, mvc=cfg.mvc)
    data = prepare(rec, cfg)
    sel = data.selection or select_order(data.ident, range(1, cfg.max_order + 1), cfg.aic_threshold, cfg.theta0, cfg.p0_scale)
    reg = StateSpaceRegressor(cfg, use_kf=cfg.kf)
    reg.fit(data)
    doc = io.model_to_dict(reg.model, data.ident, cfg.theta0, cfg.p0_scale, reg.kf if cfg.kf else None, cfg.hash())
    doc["selected_order"] = sel.order
    rep = analyze(reg.model)
    doc["analysis"] = {
        "stable": rep.stable,
        "controllable": rep.controllable,
        "observable": rep.observable,
        "pole_moduli": [float(m) for m in rep.pole_moduli],
    }
    io.dump_json(doc, ns.out)
    table = ns.aic_table or Path(f"{ns.out}.aic.csv")
    rows = [["order", "parameters", "samples", "sse", "aic", "error"]]
    for r in sel.table:
        rows.append([r.order, r.parameters, r.samples, "" if r.sse is None else repr(r.sse),
                     "" if r.aic is None else repr(r.aic), r.error or ""])
    io.write_table(rows, table)
    _emit({"order": data.order, "aic_selected_order": sel.order, "model": str(ns.out), "aic_table": str(table)})


def cmd_estimate(ns, cfg):
    rec = io.read_recording(ns.input, mvc=cfg.mvc)
    if ns.model is not None:
        model, kf, meta = io.model_from_dict(io.load_json(ns.model))
        raw = features_of(rec, cfg)
        if raw.feature_layout != meta["feature_layout"]:
            raise ConfigError("feature layout of the model does not match the configured channels/features")
        fm = normalize(raw, meta["norm_ranges"], meta["y_range"])
        y_true = raw.y
        if cfg.kf and kf is None:
            raise ConfigError("model document has no Kalman block; identify with --kf on or pass --kf off")
    else:
        data = prepare(rec, cfg)
        reg = StateSpaceRegressor(cfg)
        reg.fit(data)
        model, kf, fm, y_true = reg.model, reg.kf, data.valid, data.valid_raw.y

    def to_force(y_hat):
        return np.clip(fm.denormalize_force(y_hat), 0.0, 1.0)

    ss = to_force(simulate(model, fm.u))
    header = ["t_s", "force", "ss"]
    cols = [fm.t, y_true, ss]
    summary = {"rows": len(fm), "ss": {"r2": r2(y_true, ss), "nrmse": nrmse(y_true, ss)}}
    if cfg.kf:
        est = to_force(kf_run(kf, fm.u, fm.y))
        header.append("kf")
        cols.append(est)
        summary["kf"] = {"r2": r2(y_true, est), "nrmse": nrmse(y_true, est)}
    rows = [header] + [[repr(float(c[k])) for c in cols] for k in range(len(fm))]
    io.write_table(rows, ns.out)
    io.dump_json(_meta(cfg, "estimate", source=Path(ns.input).name, summary=summary), Path(f"{ns.out}.meta.json"))
    _emit(summary)


def _write_report(report, out: Path, cfg, command):
    io.write_table(report.table_rows(), out / "report.csv")
    io.dump_json({**_meta(cfg, command), **report.to_dict()}, out / "report.json")


def _models(ns, default):
    return tuple(ns.models) if ns.models else default


def cmd_evaluate(ns, cfg):
    models = _models(ns, ("SS_KF", "SS") if cfg.kf else ("SS",))
    report = report_of(run_cohort(_sessions(ns.inputs, cfg), cfg, models), models)
    _write_report(report, _out_dir(ns.out), cfg, "evaluate")
    _emit({"aggregate": {m: a.__dict__ for m, a in report.aggregate().items()}, "failures": len(report.failures)})


def cmd_compare(ns, cfg):
    models = _models(ns, COMPARE_MODELS)
    report = compare(_sessions(ns.inputs, cfg), cfg, models)
    _write_report(report, _out_dir(ns.out), cfg, "compare")
    _emit({"aggregate": {m: a.__dict__ for m, a in report.aggregate().items()}, "failures": len(report.failures)})


def cmd_bench(ns, cfg):
    models = _models(ns, COMPARE_MODELS)
    out = _out_dir(ns.out)
    result = bench(_sessions(ns.inputs, cfg), cfg, models)
    io.dump_json({**_meta(cfg, "bench"), **result}, out / "timing.json")
    rows = [["model", "training_ms_mean", "training_ms_sd", "loop_ms_mean", "loop_ms_sd"]]
    for m, d in result["models"].items():
        rows.append([m, repr(d["training_ms"]["mean_ms"]), repr(d["training_ms"]["sd_ms"]),
                     repr(d["loop_ms"]["mean_ms"]), repr(d["loop_ms"]["sd_ms"])])
    io.write_table(rows, out / "timing.csv")
    stage_rows = [["stage", "mean_ms", "sd_ms"]] + [
        [s, repr(d["mean_ms"]), repr(d["sd_ms"])] for s, d in result["stages"].items()
    ]
    io.write_table(stage_rows, out / "stages.csv")
    _emit({"models": list(result["models"]), "failures": len(result["failures"])})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="graspforce", description="Grasping-force estimation from sEMG.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic recordings")
    s.add_argument("--subjects", type=int, default=10)
    s.add_argument("--duration", type=float, default=60.0, help="seconds per recording")
    s.add_argument("--out", type=Path, required=True, help="output directory")
    _add_config_flags(s)

    s = sub.add_parser("extract", help="write the feature matrix of one recording")
    s.add_argument("input")
    s.add_argument("--out", type=Path, required=True)
    _add_config_flags(s)

    s = sub.add_parser("identify", help="identify a state-space model and its Kalman gain")
    s.add_argument("input")
    s.add_argument("--out", type=Path, required=True, help="model JSON")
    s.add_argument("--aic-table", type=Path, help="AIC table CSV (default: <out>.aic.csv)")
    _add_config_flags(s)

    s = sub.add_parser("estimate", help="per-window force estimates (raw and filtered)")
    s.add_argument("input")
    s.add_argument("--model", type=Path, help="model JSON; without it the recording's first half is used to identify")
    s.add_argument("--out", type=Path, required=True)
    _add_config_flags(s)

    for name, helptext in (
        ("evaluate", "score state-space models on each recording"),
        ("compare", "train and score all models on each recording"),
        ("bench", "training time, loop runtime and per-stage timing"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("inputs", nargs="*", help="recording files or directories")
        s.add_argument("--models", type=_csv_list(str), help="comma-separated model names")
        s.add_argument("--out", type=Path, required=True, help="output directory")
        _add_config_flags(s)
    return p


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "identify": cmd_identify,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, NumericalFailureError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, InvalidArgumentError, OSError)):
        return EXIT_DATA
    return EXIT_NUMERIC if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)) else EXIT_DATA


def error_document(exc: BaseException) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": exit_code_for(exc)}
    for attr in ("line", "step", "epoch"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = getattr(exc, attr)
    return doc


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.ERROR, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = config_from_args(ns)
        COMMANDS[ns.command](ns, cfg)
        return EXIT_OK
    except (GraspForceError, OSError, np.linalg.LinAlgError) as exc:
        doc = error_document(exc)
        print(json.dumps(doc, sort_keys=True), file=sys.stderr)
        return doc["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
