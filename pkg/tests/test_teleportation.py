import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from cvteleport.fidelity import ensemble_fidelity, fit_variance_vs_gain
from cvteleport.gaussian_core import CoherentSpec, ModeState, coherent_fidelity, make_coherent
from cvteleport.teleportation import (
    RUN_COLUMNS,
    BellOutcome,
    FeedbackSignal,
    ModeGains,
    ProtocolParams,
    analytic_moments,
    apply_feedback,
    bell_measurement,
    improved_noise_quadratics,
    improved_protocol_fidelity,
    optimize_mode_gains,
    prepared_state,
    run_ensemble,
    run_teleportation,
    sphere_quadratic_min,
    teleported_state,
    teleported_variances,
    variance_gain_curve,
)

params_st = st.builds(
    ProtocolParams,
    kappa=st.floats(0, 2.5),
    g_X=st.floats(0, 1.5),
    g_P=st.floats(0, 1.5),
    epsilon=st.floats(0, 0.5),
    electronic_noise=st.floats(0, 0.5),
    squeeze_db=st.floats(0, 10),
)


# Bell measurement and feedback ---------------------------------------------

def test_stub_bell_means():
    spec = CoherentSpec(n_bar=5.0, phase=0.7)
    s = prepared_state(ProtocolParams(kappa=0.93, epsilon=0.09), make_coherent(spec))
    f = FeedbackSignal.from_outcome(bell_measurement(s))
    Y, Q = spec.means
    assert f.B1 == pytest.approx(Y, abs=1e-12)
    # the Bell combination returns the input momentum with inverted sign
    assert f.B2 == pytest.approx(-Q, abs=1e-12)


@given(st.floats(0, 3), st.floats(0, 0.9), st.floats(-5, 5), st.floats(-5, 5))
def test_bell_means_are_independent_of_coupling(kappa, eps, Y, Q):
    s = prepared_state(ProtocolParams(kappa=kappa, epsilon=eps), ModeState(Y, Q))
    f = FeedbackSignal.from_outcome(bell_measurement(s))
    assert f.B1 == pytest.approx(Y, abs=1e-9)
    assert f.B2 == pytest.approx(-Q, abs=1e-9)


def test_bell_variances_without_coupling():
    m = analytic_moments(ProtocolParams(kappa=0.0, g_X=0.0, g_P=0.0))
    assert m.cov[m.index("B1"), m.index("B1")] == pytest.approx(1.0, abs=1e-14)
    assert m.cov[m.index("B2"), m.index("B2")] == pytest.approx(1.0, abs=1e-14)


def test_bell_measurement_rejects_other_layouts():
    from cvteleport.exceptions import InvalidStateError
    m = analytic_moments(ProtocolParams())
    with pytest.raises(InvalidStateError):
        bell_measurement(m)


def test_sampled_bell_measurement_shape():
    s = prepared_state(ProtocolParams())
    out = bell_measurement(s, rng=3, size=50)
    assert out.y_c.shape == (50,)


def test_feedback_zero_gain_is_identity_and_shifts_means():
    atoms = ModeState(0.3, -0.2)
    f = FeedbackSignal(1.5, 2.0)
    assert apply_feedback(atoms, f, 0.0, 0.0) == atoms
    out = apply_feedback(atoms, f, 0.5, 0.25)
    assert (out.mean_y, out.mean_q) == pytest.approx((0.3 + 0.75, -0.2 - 0.5))
    with pytest.raises(ValueError):
        apply_feedback(atoms, f, np.inf, 0.0)


def test_unity_gain_added_noise():
    vx, vp = teleported_variances(ProtocolParams(kappa=1.0))
    assert vx - 0.5 == pytest.approx(oracles.unity_gain_added_noise(1.0), abs=1e-14)
    assert vx == pytest.approx(0.89583, abs=1e-5)
    assert vp == pytest.approx(vx, abs=1e-14)


@given(params_st)
def test_teleported_variance_matches_expansion(p):
    vx, vp = teleported_variances(p)
    ox = oracles.teleported_variance(p.kappa, p.g_X, p.epsilon, p.electronic_noise, p.squeeze_db)
    op = oracles.teleported_variance(p.kappa, p.g_P, p.epsilon, p.electronic_noise, p.squeeze_db)
    assert vx == pytest.approx(ox, rel=1e-12, abs=1e-12)
    assert vp == pytest.approx(op, rel=1e-12, abs=1e-12)


@given(params_st, st.floats(-4, 4), st.floats(-4, 4))
def test_mean_transfer(p, Y, Q):
    s = teleported_state(p, ModeState(Y, Q))
    assert s.mean_y == pytest.approx(p.g_X * Y, abs=1e-9)
    assert s.mean_q == pytest.approx(p.g_P * Q, abs=1e-9)


def test_no_coupling_no_gain_leaves_atoms_untouched():
    s = teleported_state(ProtocolParams(kappa=0.0, g_X=0.0, g_P=0.0))
    assert (s.mean_y, s.mean_q, s.var_y, s.var_q) == (0.0, 0.0, 0.5, 0.5)
    rec = run_teleportation(ProtocolParams(kappa=0.0, g_X=0.0, g_P=0.0), seed=1)
    ens = run_ensemble(ProtocolParams(kappa=0.0, g_X=0.0, g_P=0.0), 20_000, seed=1)
    assert ens.var["X_tele"] == pytest.approx(0.5, rel=0.03)
    assert np.isfinite(rec.X_tele)


def test_published_preset_variances_in_measured_band():
    vx, vp = teleported_variances(ProtocolParams.published())
    assert 1.0 <= vx <= 1.3 and 1.0 <= vp <= 1.3
    assert 0.5 * (vx + vp) == pytest.approx(1.16, abs=1e-3)
    assert ensemble_fidelity(5, 0.96, 0.95, vx, vp) == pytest.approx(0.60, abs=0.01)


def test_params_validation_and_overrides():
    for kw in (dict(kappa=-1), dict(g_X=np.nan), dict(squeeze_db=-1), dict(n_max=-1), dict(epsilon=1.0)):
        with pytest.raises(ValueError):
            ProtocolParams(**kw)
    p = ProtocolParams.published(g_X=1.0)
    assert p.g_X == 1.0 and p.decay_factor == pytest.approx(np.exp(-0.09))
    assert p.kappa_eff == pytest.approx(0.93)
    assert p.with_gains(0.5).g_P == 0.5


# Ensembles -------------------------------------------------------------------

def test_run_record_feedback_is_recomputable():
    rec = run_teleportation(ProtocolParams.published(), CoherentSpec(5.0), seed=11)
    f = FeedbackSignal.from_outcome(rec.bell)
    assert (f.B1, f.B2) == (rec.feedback.B1, rec.feedback.B2)
    # run 0 is the same draw whatever the ensemble size (up to BLAS round-off)
    for n in (10, 5000):
        ens = run_ensemble(ProtocolParams.published(), n, seed=11, input_state=CoherentSpec(5.0))
        first = next(ens.records())
        assert (first.X_tele, first.P_tele) == pytest.approx((rec.X_tele, rec.P_tele), rel=1e-12)
        np.testing.assert_allclose(first.verify.as_array(), rec.verify.as_array(), rtol=1e-12)


def test_ensemble_is_independent_of_worker_count():
    p = ProtocolParams.published()
    a = run_ensemble(p, 10_000, seed=5, n_jobs=1, block_size=1000).table()
    b = run_ensemble(p, 10_000, seed=5, n_jobs=4, block_size=1000).table()
    np.testing.assert_array_equal(a, b)
    c = run_ensemble(p, 10_000, seed=6, n_jobs=1, block_size=1000).table()
    assert not np.array_equal(a, c)
    assert a.shape == (10_000, len(RUN_COLUMNS))


def test_ensemble_validation():
    with pytest.raises(ValueError):
        run_ensemble(ProtocolParams(), 1)
    with pytest.raises(ValueError):
        run_ensemble(ProtocolParams(), 10, prior_n=-1)


def test_vacuum_ensemble_matches_analytic_covariance():
    p = ProtocolParams.published()
    ens = run_ensemble(p, 10_000, seed=21)
    a = ens.analytic
    for k in ("B1", "B2", "X_tele", "P_tele", "y_c_ver", "y_s_ver"):
        v = a.cov[a.index(k), a.index(k)]
        se = v * np.sqrt(2 / (ens.n_runs - 1))
        assert abs(ens.var[k] - v) < 3 * se, k
        assert abs(ens.mean[k]) < 3 * np.sqrt(v / ens.n_runs), k


def test_fixed_input_gain_recovered_from_means():
    spec = CoherentSpec(n_bar=5.0, phase=np.pi / 4)
    p = ProtocolParams.published()
    ens = run_ensemble(p, 10_000, seed=2, input_state=spec)
    Y, Q = spec.means
    assert ens.mean["X_tele"] / Y == pytest.approx(p.g_X, abs=0.05)
    assert ens.mean["P_tele"] / Q == pytest.approx(p.g_P, abs=0.05)


def test_prior_ensemble_fidelity_routes_agree():
    p = ProtocolParams.published()
    ens = run_ensemble(p, 100_000, seed=8, prior_n=5.0)
    vx, vp = teleported_variances(p)
    assert ens.fidelity_analytic == pytest.approx(ensemble_fidelity(5.0, p.g_X, p.g_P, vx, vp), abs=1e-12)
    # per-run overlaps average to the closed form
    assert ens.fidelity_overlap == pytest.approx(ens.fidelity_analytic, abs=3e-3)
    assert ens.fidelity == pytest.approx(ens.fidelity_analytic, abs=5e-3)
    mc = oracles.prior_average_overlap(5.0, p.g_X, p.g_P, vx, vp, 200_000, np.random.default_rng(0))
    assert mc == pytest.approx(ens.fidelity_analytic, abs=3e-3)


def test_prior_widens_input_columns():
    ens = run_ensemble(ProtocolParams(), 20_000, seed=4, prior_n=10.0)
    assert ens.var["Y_in"] == pytest.approx(10.0, rel=0.05)


def test_variance_is_quadratic_in_gain():
    p = ProtocolParams.published()
    gains = np.linspace(0.0, 1.4, 6)
    pts = []
    for g in gains:
        ens = run_ensemble(p.with_gains(g), 400_000, seed=31)
        pts.append((g, ens.var["X_tele"]))
    fit = fit_variance_vs_gain(pts)
    exact = variance_gain_curve(p, "X")
    assert fit.a == pytest.approx(exact.a, rel=0.01)
    assert fit.b == pytest.approx(exact.b, rel=0.01, abs=0.01)
    assert fit.c == pytest.approx(exact.c, rel=0.01)
    for g in gains:
        assert exact(g) == pytest.approx(teleported_variances(p.with_gains(g))[0], abs=1e-12)


def test_variance_curve_rejects_unknown_quadrature():
    with pytest.raises(ValueError):
        variance_gain_curve(ProtocolParams(), "Z")


# Multimode protocol ----------------------------------------------------------

def test_half_vacuum_added_noise_fidelity():
    assert coherent_fidelity(0.75) == pytest.approx(0.80)


def test_mode_gains_validation_and_envelope():
    with pytest.raises(ValueError):
        ModeGains((1.0, 0.1))
    with pytest.raises(ValueError):
        ModeGains(())
    with pytest.raises(ValueError):
        ModeGains.normalized((0.0, 0.0))
    g = ModeGains.normalized((1.0, -0.5, 0.2, 0.1))
    t = np.linspace(0, 1, 4001)
    integral = np.trapezoid(g.envelope(t) ** 2, t) if hasattr(np, "trapezoid") else np.trapz(g.envelope(t) ** 2, t)
    assert integral == pytest.approx(1.0, abs=1e-5)
    assert g.n_max == 3
    assert g.envelope_samples(11).shape == (11, 2)


@given(st.floats(0.2, 3), st.floats(0, 12),
       st.lists(st.floats(-1, 1), min_size=2, max_size=5).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_improved_fidelity_matches_bookkeeping(kappa, db, raw):
    g = ModeGains.normalized(raw)
    vx, vp = oracles.improved_added_noise(kappa, db, g.values)
    expected = coherent_fidelity(0.5 + vx, 0.5 + vp)
    assert improved_protocol_fidelity(kappa, db, g) == pytest.approx(expected, rel=1e-10)


def test_improved_protocol_targets():
    F = {db: optimize_mode_gains(2.3, db).fidelity for db in (0.0, 6.0, 10.0)}
    assert F[0.0] == pytest.approx(0.80, abs=0.02)
    assert F[6.0] == pytest.approx(0.93, abs=0.02)
    assert F[10.0] == pytest.approx(0.96, abs=0.02)


def test_single_mode_gain_is_feasible_and_not_better():
    res = optimize_mode_gains(2.3, 6.0)
    assert improved_protocol_fidelity(2.3, 6.0, ModeGains((1.0, 0.0, 0.0, 0.0))) <= res.fidelity
    t, A = res.envelope.T
    integral = np.sum((A[1:] ** 2 + A[:-1] ** 2) / 2 * np.diff(t))
    assert integral == pytest.approx(1.0, abs=1e-3)


def test_optimum_beats_random_feasible_points():
    res = optimize_mode_gains(1.5, 3.0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = ModeGains.normalized(rng.standard_normal(4))
        assert improved_protocol_fidelity(1.5, 3.0, g) <= res.fidelity + 1e-12


def test_optimized_fidelity_grows_with_squeezing():
    F = [optimize_mode_gains(2.3, db).fidelity for db in np.linspace(0, 12, 7)]
    assert np.all(np.diff(F) >= -1e-9)


def test_sign_flip_changes_added_noise():
    # the added noise is linear in the gains, so a global sign flip is not a symmetry
    res = optimize_mode_gains(2.3, 6.0)
    flipped = ModeGains(tuple(-x for x in res.gains.values))
    assert improved_protocol_fidelity(2.3, 6.0, flipped) < res.fidelity


def test_sphere_quadratic_min_against_dense_search():
    rng = np.random.default_rng(1)
    for _ in range(20):
        M = rng.standard_normal((3, 3))
        A = M @ M.T
        b = rng.standard_normal(3)
        g = sphere_quadratic_min(A, b)
        assert np.linalg.norm(g) == pytest.approx(1.0)
        u = rng.standard_normal((20_000, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        vals = np.einsum("ij,jk,ik->i", u, A, u) + 2 * u @ b
        assert g @ A @ g + 2 * b @ g <= vals.min() + 1e-9


def test_sphere_quadratic_min_hard_case():
    A = np.diag([1.0, 1.0, 3.0])
    b = np.array([0.0, 0.0, 0.5])
    g = sphere_quadratic_min(A, b)
    # minimum at g = (sqrt(15)/4, 0, -1/4) inside the degenerate eigenspace
    assert g @ A @ g + 2 * b @ g == pytest.approx(0.875, abs=1e-12)
    assert g[2] == pytest.approx(-0.25, abs=1e-9)
    assert abs(sphere_quadratic_min(np.diag([2.0, 1.0]), np.zeros(2))[1]) == pytest.approx(1.0)


def test_improved_inputs_validated():
    with pytest.raises(ValueError):
        optimize_mode_gains(0.0)
    with pytest.raises(ValueError):
        optimize_mode_gains(1.0, n_max=0)
    with pytest.raises(ValueError):
        improved_protocol_fidelity(0.0, 0.0, ModeGains((1.0,)))
    (AX, bX, cX), _ = improved_noise_quadratics(1.0, 0.0, 2)
    assert AX.shape == (3, 3) and bX.shape == (3,)
