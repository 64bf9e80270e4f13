"""Acceptance checks, one test per criterion, on seeded synthetic data."""

import time
import warnings

import numpy as np
import pytest

from conftest import lti_matrix
from graspforce.cli import main
from graspforce.features import FeatureMatrix
from graspforce.kalman import kalman_gain, riccati_iterate
from graspforce.metrics import nrmse, r2
from graspforce.pipeline import COMPARE_MODELS, PipelineConfig, StateSpaceRegressor, bench, compare, prepare
from graspforce.ssid import analyze, build_states, identify, select_order, simulate
from graspforce.synth import SynthSessionSpec, batch_ls, gen_lti, gen_session, simulate_stochastic, subject_specs

SYSTEMS = [(n, i, seed) for seed, (n, i) in enumerate((n, i) for n in (1, 2, 3, 4) for i in (1, 3, 9) for _ in (0, 1))][:20]


@pytest.fixture(scope="module")
def sessions50():
    """Fifty seeded sessions fitted with the reference configuration."""
    cfg = PipelineConfig()
    out = []
    for seed in range(50):
        data = prepare(gen_session(SynthSessionSpec(seed=seed)), cfg)
        reg = StateSpaceRegressor(cfg)
        try:
            reg.fit(data)
        except Exception as exc:  # counted as a failed seed
            out.append({"seed": seed, "error": str(exc)})
            continue
        y = data.valid_raw.y
        kf = data.to_force(reg.predict(data))
        ss = data.to_force(simulate(reg.model, data.valid.u))
        out.append({
            "seed": seed,
            "error": None,
            "model": reg.model,
            "r2_kf": r2(y, kf),
            "r2_ss": r2(y, ss),
            "nrmse_kf": nrmse(y, kf),
            "nrmse_ss": nrmse(y, ss),
        })
    return out


def test_criterion_01_rls_matches_batch_oracle(verdict):
    worst, t0 = 0.0, time.perf_counter()
    for n, i, seed in SYSTEMS:
        _, fm = lti_matrix(n, i, seed, steps=500)
        _, est = identify(fm, n)
        x = build_states(fm.y, n, fm.ts)
        w_prev = np.vstack([np.zeros((1, n)), est.w[:-1]])
        Phi = np.hstack([x[:-1], fm.u[:-1], w_prev])
        theta = batch_ls(Phi, x[1:], prior_mean=est.theta0, prior_precision=1.0 / est.p0_scale)
        worst = max(worst, float(np.max(np.abs(theta - est.theta))))
    elapsed = time.perf_counter() - t0
    verdict(1, worst < 1e-6 and elapsed < 10, f"max |theta_rls - theta_ls| = {worst:.2e} over 20 systems in {elapsed:.2f} s")


def test_criterion_02_parameter_recovery(verdict):
    worst = 0.0
    for n, i, seed in SYSTEMS:
        model, fm = lti_matrix(n, i, seed, steps=500)
        got, _ = identify(fm, n, p0_scale=1e6)
        worst = max(worst, float(np.max(np.abs(got.A - model.A))), float(np.max(np.abs(got.B - model.B))))
    verdict(2, worst < 1e-4, f"max |A, B error| = {worst:.2e} over 20 systems (P0 = 1e6 I)")


def test_criterion_03_riccati(verdict):
    a, c, q, r = 0.5, 1.0, 1.0, 1.0
    b = 1 - a * a - q
    analytic = (-b + np.sqrt(b * b + 4 * q * r)) / 2
    p = riccati_iterate([[a]], [[c]], [[q]], [[r]])[0, 0]
    gain = kalman_gain([[a]], [[c]], [[p]], [[r]])[0, 0]
    spread = 0.0
    for seed in range(10):
        m = gen_lti(3, 2, seed=seed, gamma="random")
        Q = m.Gamma @ m.Gamma.T + 1e-3 * np.eye(3)
        P3 = riccati_iterate(m.A, m.C, Q, [[0.1]], P0=1e3 * np.eye(3))
        P6 = riccati_iterate(m.A, m.C, Q, [[0.1]], P0=1e6 * np.eye(3))
        spread = max(spread, float(np.max(np.abs(P3 - P6))))
    ok = abs(p - analytic) < 1e-9 and spread < 1e-8
    verdict(3, ok, f"p = {p:.6f} (root {analytic:.6f}), L = {gain:.5f}, P0 spread {spread:.1e}")


def test_criterion_04_kf_improves(sessions50, verdict):
    fitted = [s for s in sessions50 if s["error"] is None]
    better = sum(s["r2_kf"] >= s["r2_ss"] and s["nrmse_kf"] >= s["nrmse_ss"] for s in fitted)
    gain = np.mean([s["r2_kf"] - s["r2_ss"] for s in fitted]) if fitted else 0.0
    ok = better >= 45 and gain > 0
    verdict(4, ok, f"KF >= SS in {better}/50 sessions, mean R2 gain {gain:+.4f}")


def test_criterion_05_pipeline_quality(sessions50, verdict):
    scores = [s["r2_kf"] if s["error"] is None else -np.inf for s in sessions50]
    passing = sum(v >= 0.85 for v in scores)
    verdict(5, passing >= 45, f"R2 >= 0.85 in {passing}/50 sessions (median {np.median(scores):.4f})")


def test_criterion_06_order_selection(verdict):
    hits = {}
    for n in (2, 3):
        hits[n] = 0
        for seed in range(25):
            m = gen_lti(n, 3, seed=seed, gamma="random")
            u = np.random.default_rng(seed + 99).normal(size=(500, 3))
            y, _, _ = simulate_stochastic(m, u, process_sd=0.01, measurement_sd=0.01 * np.std(u @ m.B[0]), seed=seed)
            fm = FeatureMatrix(u=u, y=y, feature_layout=((1, "MAV"), (2, "MAV"), (3, "MAV")), ts=1.0)
            hits[n] += select_order(fm, range(1, 7)).order == n
    cfg = PipelineConfig()
    beyond = []
    for seed in range(10):
        data = prepare(gen_session(SynthSessionSpec(seed=seed)), cfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            beyond.append(select_order(data.ident).improvement_beyond(4))
    ok = hits[2] >= 20 and hits[3] >= 20 and max(beyond) <= 0.05
    verdict(6, ok, f"true order found {hits[2]}/25 (n=2), {hits[3]}/25 (n=3); max AIC gain beyond n=4 on sessions {max(beyond):+.3f}")


def test_criterion_07_metric_identities(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        size = int(rng.integers(3, 200))
        y = rng.normal(size=size) * rng.uniform(0.1, 10)
        y_hat = y + rng.normal(size=size) * rng.uniform(0.01, 3)
        worst = max(worst, abs(r2(y, y_hat) - (1 - (1 - nrmse(y, y_hat)) ** 2)))
    y = rng.normal(size=50)
    perfect = (r2(y, y), nrmse(y, y))
    mean = (r2(y, np.full(50, y.mean())), nrmse(y, np.full(50, y.mean())))
    ok = worst < 1e-12 and perfect == (1.0, 1.0) and np.allclose(mean, (0.0, 0.0), atol=1e-12)
    verdict(7, ok, f"max identity error {worst:.1e}; perfect {perfect}; mean predictor ({mean[0]:.1e}, {mean[1]:.1e})")


def test_criterion_08_model_analysis(sessions50, verdict):
    passing = [s for s in sessions50 if s["error"] is None and s["r2_kf"] >= 0.85]
    reports = [analyze(s["model"]) for s in passing]
    good = sum(r.stable and r.controllable and r.observable and np.all(np.asarray(r.pole_moduli) < 1) for r in reports)
    radius = max(r.spectral_radius for r in reports) if reports else np.nan
    verdict(8, bool(reports) and good == len(reports), f"{good}/{len(reports)} models stable/controllable/observable, max pole modulus {radius:.4f}")


def test_criterion_09_timing(verdict):
    cohort = [(f"S{k + 1:02d}", gen_session(s)) for k, s in enumerate(subject_specs(3))]
    out = bench(cohort, PipelineConfig(), ("SS_KF",))
    loop = out["models"]["SS_KF"]["loop_ms"]["mean_ms"]
    total = out["stages"]["window_total"]["mean_ms"]
    verdict(9, loop < 0.1 and total < 300, f"SS+KF step {loop:.4f} ms, features+normalize+estimate {total:.3f} ms per window")


def test_criterion_10_baseline_parity(verdict):
    cfg = PipelineConfig()
    floor, smallest_sd, draws = np.inf, 0, 5
    means = {m: [] for m in COMPARE_MODELS}
    for d in range(draws):
        cohort = [(f"S{k + 1:02d}", gen_session(s)) for k, s in enumerate(subject_specs(10, base_seed=1 + 100_000 * d))]
        report = compare(cohort, cfg)
        agg = report.aggregate()
        floor = min([floor] + [r.r2 for r in report.rows])
        floor = -np.inf if report.failures else floor
        for m in COMPARE_MODELS:
            means[m].append(agg[m].r2_mean)
        smallest_sd += min(agg, key=lambda m: agg[m].r2_sd) == "SS_KF"
    band = ", ".join(f"{m} {np.mean(v):.3f}" for m, v in means.items())
    ok = floor >= 0.8 and smallest_sd >= 0.6 * draws
    verdict(10, ok, f"lowest per-subject R2 {floor:.3f}; mean R2 {band}; SS_KF smallest SD in {smallest_sd}/{draws} draws")


def test_criterion_11_determinism(tmp_path, capsys, verdict):
    def run_all(root):
        data = root / "data"
        commands = [
            ["synth", "--subjects", "2", "--duration", "40", "--out", data],
            ["extract", data / "S01.csv", "--out", root / "features.csv"],
            ["identify", data / "S01.csv", "--out", root / "model.json", "--order", "auto", "--max-order", "6"],
            ["estimate", data / "S02.csv", "--model", root / "model.json", "--out", root / "estimate.csv"],
            ["evaluate", data, "--out", root / "evaluate"],
            ["compare", data, "--out", root / "compare"],
        ]
        codes = [main([str(a) for a in c]) for c in commands]
        capsys.readouterr()
        return codes

    a, b = tmp_path / "a", tmp_path / "b"
    codes = run_all(a) + run_all(b)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    differ = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    ok = not any(codes) and not differ and len(files) >= 12
    verdict(11, ok, f"{len(files)} artifacts from 6 commands byte-identical across two runs" + (f"; differ: {differ}" if differ else ""))
