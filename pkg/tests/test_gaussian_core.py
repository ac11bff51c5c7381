import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from cvteleport.exceptions import InvalidStateError
from cvteleport.gaussian_core import (
    SYSTEM_LABELS,
    CoherentSpec,
    ModeState,
    SystemState,
    coherent_fidelity,
    initial_system_state,
    make_coherent,
    make_squeezed_vacuum,
    make_vacuum,
    overlap_fidelity,
    sample,
    symplectic_form,
)
from cvteleport.streams import substream

finite = st.floats(-5, 5, allow_nan=False)


def test_vacuum_moments():
    v = make_vacuum()
    assert (v.mean_y, v.mean_q, v.var_y, v.var_q, v.cov_yq) == (0, 0, 0.5, 0.5, 0)
    assert v.uncertainty_product == 0.25


def test_vacuum_sample_mean_within_three_sigma():
    draws = sample(make_vacuum(), substream(1, 0), size=10**6)
    se = np.sqrt(0.5 / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * se)


def test_vacuum_sample_variance_within_chi2_band():
    n = 10**5
    draws = sample(make_vacuum(), substream(2, 0), size=n)
    se = 0.5 * np.sqrt(2 / (n - 1))
    assert np.all(np.abs(draws.var(axis=0, ddof=1) - 0.5) < 3 * se)


def test_coherent_state_amplitude_convention():
    s = make_coherent(CoherentSpec(5.0))
    assert s.mean_y == pytest.approx(np.sqrt(10)) and s.mean_q == 0
    s = make_coherent(CoherentSpec(5.0, np.pi / 2))
    assert s.mean_y == pytest.approx(0, abs=1e-15) and s.mean_q == pytest.approx(np.sqrt(10))
    assert make_coherent(CoherentSpec(0.0, 1.3)) == make_vacuum()


def test_photon_number_recovered_from_samples():
    # n = (<y^2 + q^2> - 1) / 2
    draws = sample(make_coherent(CoherentSpec(5.0, 0.7)), substream(3, 0), size=10**5)
    n_est = (np.mean(np.sum(draws**2, axis=1)) - 1) / 2
    assert n_est == pytest.approx(5.0, abs=0.05)


def test_negative_photon_number_rejected():
    with pytest.raises(ValueError):
        CoherentSpec(-1.0)


def test_squeezed_vacuum_levels():
    assert make_squeezed_vacuum(0.0) == make_vacuum()
    s = make_squeezed_vacuum(6.0, "y")
    assert s.var_y == pytest.approx(0.12559, abs=1e-5)
    assert s.var_q == pytest.approx(1.9905, abs=1e-4)
    assert make_squeezed_vacuum(10.0, "y").var_y == pytest.approx(0.05)
    q = make_squeezed_vacuum(10.0, "q")
    assert q.var_q == pytest.approx(0.05) and q.var_y == pytest.approx(5.0)


def test_squeeze_validation():
    with pytest.raises(ValueError):
        make_squeezed_vacuum(-1.0)
    with pytest.raises(ValueError):
        make_squeezed_vacuum(3.0, "x")


def test_heisenberg_violation_rejected():
    with pytest.raises(InvalidStateError):
        ModeState(0, 0, 0.1, 0.5)
    with pytest.raises(InvalidStateError):
        ModeState(0, 0, -1, 0.5)
    with pytest.raises(InvalidStateError):
        ModeState(np.nan, 0)


@given(st.floats(0, 30), st.floats(0, 2 * np.pi), st.sampled_from(["y", "q"]))
def test_constructors_respect_uncertainty_bound(db, phase, axis):
    for s in (make_squeezed_vacuum(db, axis), make_coherent(CoherentSpec(db, phase)), make_vacuum()):
        assert s.uncertainty_product >= 0.25 - 1e-12


def test_overlap_of_target_with_itself_is_one():
    spec = CoherentSpec(3.0, 0.4)
    assert overlap_fidelity(spec, make_coherent(spec)) == pytest.approx(1.0, abs=1e-12)


def test_overlap_displaced_vacuum():
    # unit displacement along y
    assert overlap_fidelity(CoherentSpec(0.0), ModeState(1.0, 0.0)) == pytest.approx(np.exp(-0.5))


def test_overlap_matches_double_integral_on_random_cases():
    rng = np.random.default_rng(11)
    for _ in range(20):
        vy, vq = rng.uniform(0.5, 2.0, 2)
        c = rng.uniform(-0.3, 0.3) * np.sqrt(vy * vq)
        st_ = ModeState(*rng.uniform(-1.5, 1.5, 2), vy, vq, c)
        spec = CoherentSpec(rng.uniform(0, 2), rng.uniform(0, 2 * np.pi))
        ref = oracles.overlap_by_integration(spec.means, st_.mean, st_.cov)
        assert overlap_fidelity(spec, st_) == pytest.approx(ref, abs=1e-6)


@given(finite, finite, st.floats(0.5, 5), st.floats(0.5, 5), st.floats(0, 20), st.floats(0, 6.3))
def test_overlap_is_a_probability(my, mq, vy, vq, n, ph):
    F = overlap_fidelity(CoherentSpec(n, ph), ModeState(my, mq, vy, vq))
    assert 0.0 <= F <= 1.0


def test_coherent_fidelity_formula():
    assert coherent_fidelity(0.5) == pytest.approx(1.0)
    assert coherent_fidelity(0.75) == pytest.approx(0.8)


def test_degenerate_state_samples_its_mean():
    s = SystemState(("a", "b"), [1.0, -2.0], np.zeros((2, 2)))
    np.testing.assert_array_equal(sample(s, substream(0, 0), size=5), np.tile([1.0, -2.0], (5, 1)))


def test_sampling_is_deterministic_for_a_seed():
    a = sample(make_vacuum(), substream(5, 1), size=100)
    b = sample(make_vacuum(), substream(5, 1), size=100)
    np.testing.assert_array_equal(a, b)


def test_sampling_rejects_indefinite_covariance():
    s = SystemState(("a", "b"), [0, 0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(InvalidStateError):
        sample(s, substream(0, 0))


def test_sample_moments_converge_to_declared_covariance():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(4, 4))
    cov = A @ A.T + np.eye(4)
    s = SystemState(("a", "b", "c", "d"), rng.normal(size=4), cov)
    n = 10**5
    d = sample(s, substream(9, 0), size=n)
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov**2) / n)
    assert np.all(np.abs(np.cov(d, rowvar=False) - cov) < 3 * se)
    assert np.all(np.abs(d.mean(axis=0) - s.mean) < 3 * np.sqrt(np.diag(cov) / n))


def test_initial_state_layout():
    s = initial_system_state(CoherentSpec(5.0))
    assert s.labels == SYSTEM_LABELS
    assert s.mean[0] == pytest.approx(np.sqrt(10))
    np.testing.assert_allclose(np.diag(s.cov), 0.5)
    assert np.count_nonzero(s.cov - np.diag(np.diag(s.cov))) == 0


def test_system_state_is_read_only_and_validated():
    s = initial_system_state()
    with pytest.raises(ValueError):
        s.mean[0] = 1.0
    with pytest.raises(InvalidStateError):
        SystemState(("a",), [0.0, 1.0], np.eye(1))
    with pytest.raises(InvalidStateError):
        SystemState(("a", "b"), [0, 0], [[1, 0.5], [0, 1]])


def test_symplectic_form_has_empty_rows_for_unpaired_modes():
    om = symplectic_form(SYSTEM_LABELS)
    for lab in ("v_c", "v_s"):
        i = SYSTEM_LABELS.index(lab)
        assert not om[i].any() and not om[:, i].any()
    assert om[0, 1] == 1 and om[1, 0] == -1
