"""Synthetic polarimetry photocurrents, lock-in extraction and calibration scans.

The detected signal is modelled as

    s(t) = y_c cos(Omega t) + y_s sin(Omega t) + white noise

and demodulated with matched cos/sin references,
``y_c = (2/N) sum cos(Omega t_k) s_k / norm``.  White shot noise of
per-sample standard deviation ``sqrt(N)/2`` demodulates to variance 1/2,
which fixes the vacuum level independently of the sample rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._fitting import polyfit_ci
from .exceptions import CalibrationError, NyquistError
from .gaussian_core import VACUUM_VARIANCE, make_vacuum
from .interaction import two_cell_pass
from .streams import make_rng

DEFAULT_CARRIER = 322e3  # Hz
DEFAULT_DURATION = 2e-3  # s
DEFAULT_OVERSAMPLING = 8  # multiples of the Nyquist rate


def _check_timing(carrier: float, duration: float, sample_rate: float):
    if carrier <= 0 or duration <= 0 or sample_rate <= 0:
        raise ValueError("carrier, duration and sample_rate must be > 0")
    if sample_rate <= 2 * carrier:
        raise NyquistError(f"sample rate {sample_rate:g} Hz does not exceed 2 x carrier {carrier:g} Hz")
    periods = carrier * duration
    if abs(periods - round(periods)) > 1e-6 * max(1.0, periods):
        raise ValueError(f"duration holds {periods:g} carrier periods; an integer count is required")


@dataclass(frozen=True)
class PhotocurrentTrace:
    """Uniformly sampled photocurrent of one pulse."""

    samples: np.ndarray = field(repr=False)
    sample_rate: float
    duration: float
    carrier: float

    def __post_init__(self):
        _check_timing(self.carrier, self.duration, self.sample_rate)
        samples = np.array(self.samples, dtype=float)
        n = int(round(self.duration * self.sample_rate))
        if samples.shape[-1] != n:
            raise ValueError(f"expected {n} samples, got {samples.shape[-1]}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[-1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate

    def to_csv(self, path) -> None:
        """Write ``time, value`` rows (single traces only)."""
        if self.samples.ndim != 1:
            raise ValueError("only a single trace can be exported")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "value"])
            for t, v in zip(self.times, self.samples):
                w.writerow([repr(float(t)), repr(float(v))])


def _references(n: int, carrier: float, sample_rate: float):
    phase = 2 * np.pi * carrier * np.arange(n) / sample_rate
    return np.cos(phase), np.sin(phase)


def synthesize_photocurrent(
    y_c=0.0,
    y_s=0.0,
    carrier: float = DEFAULT_CARRIER,
    duration: float = DEFAULT_DURATION,
    sample_rate: float | None = None,
    shot_noise_scale: float = 1.0,
    electronic_noise: float = 0.0,
    rng=None,
) -> PhotocurrentTrace:
    """Photocurrent carrying the components ``(y_c, y_s)``.

    ``y_c`` and ``y_s`` may be equal-length arrays, giving a batch of traces
    of shape ``(n_traces, n_samples)``.  Noise is added only when ``rng`` is
    given.  ``shot_noise_scale`` multiplies the vacuum-level noise amplitude
    (the square root of the optical power in units of the reference power);
    ``electronic_noise`` adds power-independent noise in vacuum units.
    """
    if sample_rate is None:
        sample_rate = 2 * DEFAULT_OVERSAMPLING * carrier
    _check_timing(carrier, duration, sample_rate)
    if shot_noise_scale < 0 or electronic_noise < 0:
        raise ValueError("noise levels must be >= 0")
    n = int(round(duration * sample_rate))
    c, s = _references(n, carrier, sample_rate)
    y_c = np.asarray(y_c, dtype=float)
    y_s = np.asarray(y_s, dtype=float)
    trace = y_c[..., None] * c + y_s[..., None] * s
    if rng is not None:
        rng = make_rng(rng)
        sd = np.sqrt(n) / 2 * np.sqrt(shot_noise_scale**2 + electronic_noise)
        trace = trace + sd * rng.standard_normal(trace.shape)
    return PhotocurrentTrace(trace, float(sample_rate), float(duration), float(carrier))


def lockin_demodulate(trace: PhotocurrentTrace, carrier: float | None = None, vacuum_norm: float = 1.0):
    """Cos/sin components of the trace divided by ``vacuum_norm``.

    Returns floats for a single trace and arrays for a batch.
    """
    if vacuum_norm == 0 or not np.isfinite(vacuum_norm):
        raise CalibrationError("vacuum normalization must be finite and non-zero")
    carrier = trace.carrier if carrier is None else carrier
    _check_timing(carrier, trace.duration, trace.sample_rate)
    n = trace.n_samples
    c, s = _references(n, carrier, trace.sample_rate)
    yc = (2.0 / n) * (trace.samples @ c) / vacuum_norm
    ys = (2.0 / n) * (trace.samples @ s) / vacuum_norm
    if np.ndim(yc) == 0:
        return float(yc), float(ys)
    return yc, ys


def vacuum_normalization(
    n_traces: int = 2000,
    carrier: float = DEFAULT_CARRIER,
    duration: float = DEFAULT_DURATION,
    sample_rate: float | None = None,
    shot_noise_scale: float = 1.0,
    rng=None,
) -> float:
    """Scale that brings the demodulated vacuum variance to 1/2.

    Estimated from shot-noise-only traces, pooling both components.
    """
    if n_traces < 2:
        raise ValueError("n_traces must be >= 2")
    rng = make_rng(rng)
    z = np.zeros(n_traces)
    tr = synthesize_photocurrent(z, z, carrier, duration, sample_rate, shot_noise_scale, rng=rng)
    yc, ys = lockin_demodulate(tr)
    var = 0.5 * (np.var(yc, ddof=1) + np.var(ys, ddof=1))
    return float(np.sqrt(var / VACUUM_VARIANCE))


@dataclass(frozen=True)
class CalibrationLine:
    """Least-squares line ``y = slope x + intercept`` with 95% intervals."""

    slope: float
    intercept: float
    slope_ci: tuple
    intercept_ci: tuple
    r_squared: float
    residual_rms: float
    x_label: str
    y_label: str
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    dof: int = 0

    @classmethod
    def fit(cls, x, y, x_label: str, y_label: str, level: float = 0.95) -> "CalibrationLine":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size < 3:
            raise CalibrationError(f"a calibration line needs >= 3 points, got {x.size}")
        f = polyfit_ci(x, y, 1, level)
        return cls(
            float(f.coef[1]), float(f.coef[0]), tuple(map(float, f.ci[1])), tuple(map(float, f.ci[0])),
            f.r_squared, f.residual_rms, x_label, y_label, x, y, f.cov, f.dof,
        )

    def predict(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def predict_ci(self, x, level: float = 0.95):
        """Confidence interval of the fitted line at ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        V = np.column_stack([np.ones_like(x), x])
        se = np.sqrt(np.einsum("ij,jk,ik->i", V, self.cov, V))
        half = stats.t.ppf(0.5 + level / 2, self.dof) * se if self.dof > 0 else np.full_like(x, np.nan)
        m = self.predict(x)
        return m - half, m + half


def shot_noise_scan(
    powers,
    n_traces: int = 2000,
    electronic_noise: float = 0.0,
    carrier: float = DEFAULT_CARRIER,
    duration: float = DEFAULT_DURATION,
    sample_rate: float | None = None,
    rng=None,
    batch: int = 1000,
) -> CalibrationLine:
    """Demodulated variance versus optical power.

    Powers are in units of the reference power at which the vacuum
    variance is 1/2.  A shot-noise-limited detector gives a straight line
    with slope 1/2 and intercept ``electronic_noise / 2``.
    """
    powers = np.asarray(powers, dtype=float)
    if powers.size < 3:
        raise CalibrationError("a shot-noise scan needs >= 3 powers")
    if np.any(powers < 0):
        raise ValueError("powers must be >= 0")
    rng = make_rng(rng)
    variances = []
    for p in powers:
        vals = []
        for start in range(0, n_traces, batch):
            m = min(batch, n_traces - start)
            z = np.zeros(m)
            tr = synthesize_photocurrent(z, z, carrier, duration, sample_rate, np.sqrt(p),
                                         electronic_noise, rng)
            vals.append(lockin_demodulate(tr)[0])
        variances.append(np.var(np.concatenate(vals), ddof=1))
    return CalibrationLine.fit(powers, variances, "power", "variance")


@dataclass(frozen=True)
class ProjectionNoiseScan:
    """Two-cell calibration: readout variance versus atom number.

    The coupling follows from ``kappa^2 = 2 Var - 1``; the fitted line turns
    that into a lookup ``kappa2(N)``.
    """

    line: CalibrationLine
    kappa2_points: np.ndarray

    def kappa2(self, n_atoms):
        k2 = 2 * self.line.predict(n_atoms) - 1
        if np.any(k2 < 0):
            raise CalibrationError("inferred kappa^2 is negative")
        return k2

    def kappa2_ci(self, n_atoms, level: float = 0.95):
        lo, hi = self.line.predict_ci(n_atoms, level)
        return 2 * lo - 1, 2 * hi - 1


def projection_noise_scan(
    atom_numbers,
    kappa_ref: float,
    n_ref: float,
    n_samples: int = 10_000,
    rng=None,
) -> ProjectionNoiseScan:
    """Simulated two-cell scan with ``kappa^2`` proportional to the atom number.

    ``kappa_ref`` is the coupling at ``n_ref`` atoms.  Each point samples
    the light after the two cells, whose back-action cancels.
    """
    atom_numbers = np.asarray(atom_numbers, dtype=float)
    if atom_numbers.size < 3:
        raise CalibrationError("a projection-noise scan needs >= 3 atom numbers")
    if np.any(atom_numbers < 0) or n_ref <= 0 or kappa_ref < 0:
        raise ValueError("atom numbers, n_ref and kappa_ref must be non-negative (n_ref > 0)")
    rng = make_rng(rng)
    vac = make_vacuum()
    variances = []
    for N in atom_numbers:
        kappa = kappa_ref * np.sqrt(N / n_ref)
        expected = two_cell_pass(vac, vac, kappa, "c")
        light = np.sqrt(VACUUM_VARIANCE) * rng.standard_normal(n_samples)
        atoms = np.sqrt(VACUUM_VARIANCE) * rng.standard_normal(n_samples)
        y = light + kappa * atoms + expected.mean_y
        variances.append(np.var(y, ddof=1))
    variances = np.array(variances)
    line = CalibrationLine.fit(atom_numbers, variances, "atom number", "variance")
    return ProjectionNoiseScan(line, 2 * variances - 1)
