import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvteleport.exceptions import CalibrationError, NyquistError
from cvteleport.signal import (
    DEFAULT_CARRIER,
    CalibrationLine,
    PhotocurrentTrace,
    lockin_demodulate,
    projection_noise_scan,
    shot_noise_scan,
    synthesize_photocurrent,
    vacuum_normalization,
)

DURATION = 2e-3


@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(50, 1000))
def test_noiseless_round_trip(yc, ys, periods):
    carrier = periods / DURATION
    tr = synthesize_photocurrent(yc, ys, carrier, DURATION, sample_rate=4 * carrier)
    got = lockin_demodulate(tr)
    assert got == pytest.approx((yc, ys), abs=1e-6)


def test_vacuum_variance_is_one_half():
    z = np.zeros(4000)
    tr = synthesize_photocurrent(z, z, rng=1)
    yc, ys = lockin_demodulate(tr)
    for v in (np.var(yc, ddof=1), np.var(ys, ddof=1)):
        assert v == pytest.approx(0.5, abs=3 * 0.5 * np.sqrt(2 / 4000))
    assert abs(np.corrcoef(yc, ys)[0, 1]) < 3 / np.sqrt(4000)


def test_vacuum_level_does_not_depend_on_sample_rate():
    carrier, duration = 320e3, 1e-4
    exact, sampled = [], []
    for over in (8, 16, 32, 64):
        rate = 2 * over * carrier
        n = int(round(rate * duration))
        # the demodulator is linear: read its weights off unit impulses
        impulses = PhotocurrentTrace(np.eye(n), rate, duration, carrier)
        wc, ws = lockin_demodulate(impulses)
        sd2 = n / 4  # per-sample shot-noise variance
        exact.append(sd2 * np.sum(wc**2))
        exact.append(sd2 * np.sum(ws**2))
        z = np.zeros(4000)
        yc, ys = lockin_demodulate(
            synthesize_photocurrent(z, z, carrier, duration, rate, rng=np.random.default_rng(over)))
        sampled.append(0.5 * (np.var(yc) + np.var(ys)))
    assert max(exact) / min(exact) - 1 < 0.01
    np.testing.assert_allclose(exact, 0.5, rtol=1e-9)
    np.testing.assert_allclose(sampled, 0.5, rtol=0.06)


def test_signal_level_does_not_depend_on_sample_rate():
    vals = [lockin_demodulate(synthesize_photocurrent(1.3, -0.4, sample_rate=2 * o * DEFAULT_CARRIER))
            for o in (8, 64)]
    assert vals[0] == pytest.approx(vals[1], rel=1e-2)


def test_timing_checks():
    with pytest.raises(NyquistError):
        synthesize_photocurrent(1.0, 0.0, sample_rate=1.5 * DEFAULT_CARRIER)
    with pytest.raises(ValueError):
        synthesize_photocurrent(1.0, 0.0, carrier=DEFAULT_CARRIER, duration=1.0001e-3 + 1e-7)
    with pytest.raises(ValueError):
        synthesize_photocurrent(1.0, 0.0, shot_noise_scale=-1.0)
    with pytest.raises(ValueError):
        PhotocurrentTrace(np.zeros(10), 16 * DEFAULT_CARRIER, DURATION, DEFAULT_CARRIER)


def test_zero_normalization_rejected():
    tr = synthesize_photocurrent(1.0, 0.0)
    with pytest.raises(CalibrationError):
        lockin_demodulate(tr, vacuum_norm=0.0)


def test_vacuum_normalization_rescales_to_one_half():
    norm = vacuum_normalization(4000, shot_noise_scale=2.0, rng=3)
    assert norm == pytest.approx(2.0, rel=0.03)
    with pytest.raises(ValueError):
        vacuum_normalization(1)


def test_csv_export(tmp_path):
    tr = synthesize_photocurrent(1.0, 0.5, rng=2)
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert data.dtype.names == ("time", "value")
    np.testing.assert_array_equal(data["value"], tr.samples)
    np.testing.assert_allclose(data["time"], tr.times)
    batch = synthesize_photocurrent(np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        batch.to_csv(tmp_path / "batch.csv")


def test_shot_noise_scan_is_linear():
    powers = np.linspace(0.5, 4.0, 8)
    line = shot_noise_scan(powers, n_traces=4000, electronic_noise=0.2, carrier=320e3,
                           duration=1e-4, rng=5)
    assert line.r_squared > 0.99
    se_slope, se_icpt = np.sqrt(np.diag(line.cov))[::-1]
    assert abs(line.slope - 0.5) < 3 * se_slope
    assert abs(line.intercept - 0.1) < 3 * se_icpt
    with pytest.raises(CalibrationError):
        shot_noise_scan([1.0, 2.0])


def test_exact_line_has_zero_residual():
    x = np.arange(5.0)
    line = CalibrationLine.fit(x, 2 * x + 1, "x", "y")
    assert (line.slope, line.intercept) == pytest.approx((2, 1))
    assert line.residual_rms == pytest.approx(0, abs=1e-12)
    assert line.r_squared == pytest.approx(1.0)
    with pytest.raises(CalibrationError):
        CalibrationLine.fit([1, 2], [1, 2], "x", "y")


def test_projection_noise_scan_recovers_coupling():
    N = np.linspace(0.2e12, 1.6e12, 8)
    scan = projection_noise_scan(N, kappa_ref=0.93, n_ref=1e12, n_samples=40_000, rng=6)
    line = scan.line
    assert line.r_squared > 0.99
    assert line.intercept_ci[0] <= 0.5 <= line.intercept_ci[1]
    lo, hi = scan.kappa2_ci(1e12)
    assert lo[0] <= 0.93**2 <= hi[0]
    assert float(np.squeeze(scan.kappa2(1e12))) == pytest.approx(0.93**2, rel=0.05)
    np.testing.assert_allclose(scan.kappa2_points, 0.93**2 * N / 1e12, rtol=0.05, atol=0.02)


def test_projection_noise_scan_validation():
    with pytest.raises(CalibrationError):
        projection_noise_scan([1.0, 2.0], 1.0, 1.0)
    with pytest.raises(ValueError):
        projection_noise_scan([1.0, 2.0, 3.0], 1.0, 0.0)
