import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from graspforce.exceptions import InvalidArgumentError
from graspforce.features import mav
from graspforce.kalman import spectral_radius
from graspforce.ssid import build_states
from graspforce.synth import (
    RankDeficiencyError,
    SynthSessionSpec,
    batch_ls,
    difference_basis,
    gen_lti,
    gen_session,
    simulate_stochastic,
    subject_specs,
)


def test_difference_basis():
    assert np.array_equal(difference_basis(3, 1.0), [[1, 0, 0], [1, -1, 0], [1, -2, 1]])
    assert np.allclose(difference_basis(2, 0.5), [[1, 0], [2, -2]])


@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 10_000))
def test_gen_lti_is_stable_and_reproducible(n, i, seed):
    m = gen_lti(n, i, spectral_radius_max=0.8, seed=seed)
    assert m.A.shape == (n, n) and m.B.shape == (n, i)
    assert spectral_radius(m.A) < 0.8 + 1e-9
    again = gen_lti(n, i, spectral_radius_max=0.8, seed=seed)
    assert np.array_equal(m.A, again.A) and np.array_equal(m.B, again.B)


def test_gen_lti_dense_variant():
    m = gen_lti(4, 2, seed=3, chain=False, gamma="random")
    assert spectral_radius(m.A) < 0.9
    assert np.any(m.Gamma != 0)


def test_chain_state_is_difference_chain():
    m = gen_lti(3, 2, seed=11, ts=0.125)
    u = np.random.default_rng(0).normal(size=(100, 2))
    y, y_true, x = simulate_stochastic(m, u)
    assert np.array_equal(y, y_true)
    assert np.allclose(build_states(y, 3, 0.125), x, atol=1e-9)


def test_simulate_stochastic_noise_levels():
    m = gen_lti(2, 1, seed=0, gamma="random")
    y, y_true, _ = simulate_stochastic(m, np.zeros((4000, 1)), measurement_sd=0.1, seed=2)
    assert np.std(y - y_true) == pytest.approx(0.1, rel=0.05)
    assert np.all(y_true == 0)


def test_gen_lti_validation():
    with pytest.raises(InvalidArgumentError):
        gen_lti(0, 1)
    with pytest.raises(InvalidArgumentError):
        gen_lti(2, 1, spectral_radius_max=1.0)
    with pytest.raises(InvalidArgumentError):
        gen_lti(2, 1, gamma="ones")


def test_session_is_reproducible():
    spec = SynthSessionSpec(duration_s=20.0, seed=5)
    assert gen_session(spec) == gen_session(spec)
    assert gen_session(spec) != gen_session(SynthSessionSpec(duration_s=20.0, seed=6))


def test_session_shape_and_range():
    rec = gen_session(SynthSessionSpec(duration_s=12.0))
    assert rec.emg.shape == (2400, 8)
    assert rec.force.min() >= 0 and rec.force.max() <= 1
    assert rec.channel_labels[5] == "Flexor Carpi Ulnaris"


def test_zero_floor_gives_silent_rest():
    spec = SynthSessionSpec(duration_s=30.0, emg_floor=0.0, seed=1)
    rec = gen_session(spec)
    # every squeeze starts at least 15% into its slot, so the first 0.7 s is rest
    assert np.all(rec.emg[:140] == 0)
    assert np.any(rec.emg != 0)


def test_plateau_levels_order_channel_energy():
    """Over 100 sessions, every channel is louder at each higher squeeze level."""
    ordered = 0
    for seed in range(100):
        rec = gen_session(SynthSessionSpec(duration_s=24.0, cycles=1, seed=seed))
        f = rec.force
        levels = [(f > 0.2) & (f < 0.4), (f > 0.5) & (f < 0.7), f > 0.75]
        for c in range(rec.n_channels):
            small, medium, high = (mav(rec.emg[mask, c]) for mask in levels)
            ordered += high > medium > small
    assert ordered == 100 * 8


def test_subject_specs_distinct_seeds():
    specs = subject_specs(4, base_seed=7, duration_s=10.0)
    assert [s.seed for s in specs] == [7, 1007, 2007, 3007]
    assert all(s.duration_s == 10.0 for s in specs)


def test_session_spec_validation():
    with pytest.raises(InvalidArgumentError):
        SynthSessionSpec(plateaus=(0.3, 1.2))
    with pytest.raises(InvalidArgumentError):
        SynthSessionSpec(emg_floor=-0.1)
    with pytest.raises(InvalidArgumentError):
        SynthSessionSpec(mixing=np.eye(3))


def test_batch_ls_exact_recovery():
    rng = np.random.default_rng(0)
    Phi = rng.normal(size=(50, 4))
    theta = np.array([0.5, -1.0, 2.0, 0.0])
    assert np.allclose(batch_ls(Phi, Phi @ theta), theta, atol=1e-12)
    Theta = rng.normal(size=(4, 2))
    assert np.allclose(batch_ls(Phi, Phi @ Theta), Theta, atol=1e-12)


def test_batch_ls_prior_is_ridge():
    rng = np.random.default_rng(1)
    Phi, y = rng.normal(size=(20, 3)), rng.normal(size=20)
    lam, mean = 0.5, np.array([1.0, 0.0, -1.0])
    expected = np.linalg.solve(Phi.T @ Phi + lam * np.eye(3), Phi.T @ y + lam * mean)
    assert np.allclose(batch_ls(Phi, y, prior_mean=mean, prior_precision=lam), expected, atol=1e-12)


def test_batch_ls_rank_deficiency_names_columns():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(30, 2))
    Phi = np.column_stack([a, a[:, 0] + a[:, 1]])
    with pytest.raises(RankDeficiencyError) as info:
        batch_ls(Phi, rng.normal(size=30))
    assert len(info.value.columns) == 1
    # a prior makes the problem well posed again
    assert np.all(np.isfinite(batch_ls(Phi, rng.normal(size=30), prior_precision=1e-3)))


def test_batch_ls_too_few_rows():
    with pytest.raises(RankDeficiencyError):
        batch_ls(np.ones((2, 3)), np.ones(2))
