import numpy as np
import pytest
from hypothesis import settings

from graspforce.features import FeatureMatrix
from graspforce.pipeline import PipelineConfig, prepare
from graspforce.synth import SynthSessionSpec, gen_lti, gen_session

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def session():
    return gen_session(SynthSessionSpec(seed=3))


@pytest.fixture(scope="session")
def prepared(session):
    return prepare(session, PipelineConfig())


@pytest.fixture
def fast_cfg():
    """Pipeline settings with short network training for quick tests."""
    return PipelineConfig(epochs=20)


def lti_matrix(n, i, seed, steps=500, ts=1.0, gamma="zero"):
    """Noise-free input/output data of a random chain-form system, as a FeatureMatrix."""
    model = gen_lti(n, i, seed=seed, ts=ts, gamma=gamma)
    u = np.random.default_rng(seed + 10_000).normal(size=(steps, i))
    x = np.zeros((steps, n))
    for k in range(1, steps):
        x[k] = model.A @ x[k - 1] + model.B @ u[k - 1]
    layout = tuple((c + 1, "MAV") for c in range(i))
    return model, FeatureMatrix(u=u, y=x[:, 0].copy(), feature_layout=layout, ts=ts)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
