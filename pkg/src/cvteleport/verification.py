"""Verifying-pulse readout and reconstruction of the teleported atomic state.

A second strong pulse is sent through the atoms after the feedback.  Its
S2-port sine/cosine components carry the atomic quadratures with gain
``kappa/2`` (``kappa/sqrt2`` from the interaction, ``1/sqrt2`` from the
50/50 beam splitter whose other port is empty).  From the means one
calibrates the feedback gain; from the variances one recovers the atomic
variances.

Sign convention: ``y_s_ver`` is reported sign-corrected so that both
readouts are positively correlated with the atomic quadratures,
``E[y_c_ver] = (kappa/2) d P`` and ``E[y_s_ver] = (kappa/2) d X`` where
``d = exp(-beta tau)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._fitting import polyfit_ci
from .exceptions import CalibrationError, InvalidStateError, UnphysicalReconstructionError
from .gaussian_core import VACUUM_VARIANCE, ModeState, sample
from .streams import make_rng

#: Back-action constants available to :func:`reconstruct_variances`.
#: ``"split"`` is the value behind the 50/50 beam splitter (k^4/48);
#: ``"unsplit"`` is the back-action in the interaction output itself (k^4/24).
BACKACTION_CONSTANTS = {"split": 48.0, "unsplit": 24.0}


@dataclass(frozen=True)
class VerifyOutcome:
    """Verifying-pulse readout; fields are floats or equal-length arrays."""

    y_c_ver: np.ndarray
    y_s_ver: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.column_stack([np.atleast_1d(self.y_c_ver), np.atleast_1d(self.y_s_ver)])


def decay_means(atoms: ModeState, beta: float, tau: float, admix_noise: bool = True) -> ModeState:
    """Decay of the mean spin under probe light by ``exp(-beta tau)``.

    With ``admix_noise`` the variances relax toward the coherent spin state,
    ``var -> d^2 var + (1 - d^2)/2``, which keeps the state physical.
    Without it only the means shrink.
    """
    if beta < 0 or tau < 0:
        raise ValueError("beta and tau must be >= 0")
    d = float(np.exp(-beta * tau))
    if not admix_noise:
        return ModeState(d * atoms.mean_y, d * atoms.mean_q, atoms.var_y, atoms.var_q, atoms.cov_yq)
    d2 = d * d
    return ModeState(
        d * atoms.mean_y,
        d * atoms.mean_q,
        d2 * atoms.var_y + (1 - d2) * VACUUM_VARIANCE,
        d2 * atoms.var_q + (1 - d2) * VACUUM_VARIANCE,
        d2 * atoms.cov_yq,
    )


def decay_values(X, P, decay_factor: float, admix_noise: bool, rng):
    """Vectorised decay acting on Wigner samples of the atomic quadratures."""
    d = decay_factor
    X = d * np.asarray(X, dtype=float)
    P = d * np.asarray(P, dtype=float)
    if admix_noise:
        z = rng.standard_normal((2,) + X.shape)
        s = np.sqrt((1 - d * d) * VACUUM_VARIANCE)
        X = X + s * z[0]
        P = P + s * z[1]
    return X, P


def readout_gain(kappa: float, epsilon: float = 0.0) -> float:
    """Gain from an atomic quadrature to the verifying readout."""
    return 0.5 * kappa * np.sqrt(1.0 - epsilon)


def readout_noise_variance(kappa: float, epsilon: float = 0.0, electronic_noise: float = 0.0) -> float:
    """Variance of the verifying readout that does not come from the atoms.

    ``1/2 + (1 - epsilon) kappa^4/48 + electronic_noise/2``.
    """
    return VACUUM_VARIANCE + (1.0 - epsilon) * kappa**4 / 48.0 + electronic_noise * VACUUM_VARIANCE


def readout_variance(sigma2, kappa: float, epsilon: float = 0.0, electronic_noise: float = 0.0):
    """Forward model: readout variance for atomic variance ``sigma2``."""
    return readout_gain(kappa, epsilon) ** 2 * np.asarray(sigma2) + readout_noise_variance(
        kappa, epsilon, electronic_noise
    )


def verify_values(X, P, kappa: float, rng, epsilon: float = 0.0, electronic_noise: float = 0.0):
    """Sample the verifying readout given Wigner samples of the atoms.

    A fresh vacuum pulse interacts with the atoms, loses ``epsilon`` of its
    power and is split 50/50 with an empty port before detection.
    """
    X = np.asarray(X, dtype=float)
    P = np.asarray(P, dtype=float)
    h = np.sqrt(VACUUM_VARIANCE)
    # fresh light y_c, y_s, q_c, q_s, v_c, v_s; empty-port Y_c, Y_s; loss; electronics
    light = h * rng.standard_normal((6,) + X.shape)
    port = h * rng.standard_normal((2,) + X.shape)
    loss = h * rng.standard_normal((2,) + X.shape)
    elec = np.sqrt(electronic_noise * VACUUM_VARIANCE) * rng.standard_normal((2,) + X.shape)
    yc, ys, qc, qs, vc, vs = light
    a = kappa**2 / 4
    b = a / np.sqrt(3.0)
    c = kappa / np.sqrt(2.0)
    t, r = np.sqrt(1 - epsilon), np.sqrt(epsilon)
    yc_out = t * (yc + a * qs + b * vs + c * P) + r * loss[0]
    ys_out = t * (ys - a * qc - b * vc - c * X) + r * loss[1]
    y_c_ver = (yc_out + port[0]) / np.sqrt(2.0) + elec[0]
    y_s_ver = -(ys_out + port[1]) / np.sqrt(2.0) + elec[1]
    return y_c_ver, y_s_ver


def verifying_readout(
    atoms: ModeState,
    kappa: float,
    rng=None,
    epsilon: float = 0.0,
    electronic_noise: float = 0.0,
    size: int | None = None,
) -> VerifyOutcome:
    """Read out the atomic state with a fresh strong pulse.

    ``rng=None`` is the zero-noise stub: the analytic means are returned.
    Decay must already have been applied to ``atoms``.
    """
    G = readout_gain(kappa, epsilon)
    if rng is None:
        return VerifyOutcome(G * atoms.mean_q, G * atoms.mean_y)
    rng = make_rng(rng)
    draws = sample(atoms, rng, size=size)
    X, P = draws[..., 0], draws[..., 1]
    yc, ys = verify_values(X, P, kappa, rng, epsilon, electronic_noise)
    return VerifyOutcome(yc, ys)


def reconstruction_offset(kappa: float) -> float:
    """Difference in reconstructed variance between the two back-action constants.

    ``(4/k^2)(k^4/24 - k^4/48) = k^2/12``.
    """
    return kappa**2 / 12.0


def reconstruct_variances(
    var_y_ver,
    kappa: float,
    constant: str = "split",
    electronic_noise: float = 0.0,
):
    """Atomic variance from the verifying-readout variance.

    ``sigma^2 = (4/k^2) [Var - k^4/C - 1/2]`` with ``C = 48`` (``"split"``)
    or ``C = 24`` (``"unsplit"``).  Known electronic noise, given in vacuum
    units, is subtracted as well.

    Raises
    ------
    UnphysicalReconstructionError
        If any reconstructed variance is negative.
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    try:
        C = BACKACTION_CONSTANTS[constant]
    except KeyError:
        raise ValueError(f"constant must be one of {sorted(BACKACTION_CONSTANTS)}") from None
    var = np.asarray(var_y_ver, dtype=float)
    sigma2 = (4.0 / kappa**2) * (var - kappa**4 / C - VACUUM_VARIANCE - electronic_noise * VACUUM_VARIANCE)
    if np.any(sigma2 < 0):
        raise UnphysicalReconstructionError(
            f"reconstructed variance {np.min(sigma2):.4g} < 0 (readout variance {np.min(var):.4g})"
        )
    return float(sigma2) if sigma2.ndim == 0 else sigma2


def expected_slope(gain: float, kappa: float, decay_factor: float = 1.0) -> float:
    """Slope of readout mean versus input quadrature, ``g kappa d / 2``."""
    return 0.5 * gain * kappa * decay_factor


def _pairs_to_xy(pairs):
    arr = check_array(pairs, dtype=float, ensure_min_samples=2)
    if arr.shape[1] != 2:
        raise CalibrationError(f"expected (input, readout) pairs, got shape {arr.shape}")
    return arr[:, 0], arr[:, 1]


def estimate_gain_slope(pairs, kappa: float, decay_factor: float = 1.0):
    """Least-squares slope of readout vs. input, and the feedback gain it implies.

    Parameters
    ----------
    pairs : array_like, shape (n, 2)
        ``(input Q, y_c_ver)`` (or ``(input Y, y_s_ver)``) pairs.
    kappa : float
        Coupling used for the verifying pulse.
    decay_factor : float
        ``exp(-beta tau)`` between feedback and readout.

    Returns
    -------
    slope, gain : float
    """
    x, y = _pairs_to_xy(pairs)
    fit = polyfit_ci(x, y, 1)
    slope = float(fit.coef[1])
    return slope, 2.0 * slope / (kappa * decay_factor)


class GainSlopeEstimator(RegressorMixin, BaseEstimator):
    """Feedback-gain calibration as a regressor.

    ``fit(X, y)`` takes the input quadrature as a single feature and the
    verifying readout as target.  After fitting, ``slope_``,
    ``intercept_``, ``gain_`` and ``slope_ci_`` are available.
    """

    def __init__(self, kappa=0.93, decay_factor=1.0):
        self.kappa = kappa
        self.decay_factor = decay_factor

    def fit(self, X, y):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        if X.shape[1] != 1:
            raise CalibrationError("GainSlopeEstimator expects a single feature")
        fit = polyfit_ci(X[:, 0], y, 1)
        self.intercept_, self.slope_ = (float(c) for c in fit.coef)
        self.slope_ci_ = tuple(fit.ci[1])
        self.gain_ = 2.0 * self.slope_ / (self.kappa * self.decay_factor)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        X = check_array(X, dtype=float)
        return self.intercept_ + self.slope_ * X[:, 0]


def tomographic_reconstruct(
    outcomes,
    kappa: float,
    beta: float = 0.0,
    tau: float = 0.0,
    constant: str = "split",
    electronic_noise: float = 0.0,
    min_samples: int = 100,
    admix_noise: bool = True,
) -> ModeState:
    """Gaussian atomic state at feedback time from a set of verifying readouts.

    Means are the readout averages divided by ``(kappa/2) exp(-beta tau)``.
    Variances come from :func:`reconstruct_variances` with the decay undone,
    ``(var - (1 - d^2)/2) / d^2`` when the decay admixes vacuum noise and
    ``var / d^2`` otherwise.

    Parameters
    ----------
    outcomes : sequence of VerifyOutcome or array_like, shape (n, 2)
        Columns ``(y_c_ver, y_s_ver)``.
    """
    if isinstance(outcomes, VerifyOutcome):
        arr = outcomes.as_array()
    elif len(outcomes) and isinstance(outcomes[0], VerifyOutcome):
        arr = np.vstack([o.as_array() for o in outcomes])
    else:
        arr = np.asarray(outcomes, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise CalibrationError(f"expected outcomes of shape (n, 2), got {arr.shape}")
    if arr.shape[0] < min_samples:
        raise CalibrationError(f"need >= {min_samples} outcomes, got {arr.shape[0]}")
    d = float(np.exp(-beta * tau))
    G = 0.5 * kappa * d
    mean_P = arr[:, 0].mean() / G
    mean_X = arr[:, 1].mean() / G
    C = np.cov(arr, rowvar=False)
    d2 = d * d
    floor = (1 - d2) * VACUUM_VARIANCE if admix_noise else 0.0
    var_P, var_X = ((reconstruct_variances(C[i, i], kappa, constant, electronic_noise) - floor) / d2
                    for i in (0, 1))
    cov_XP = C[0, 1] / G**2
    try:
        return ModeState(mean_X, mean_P, var_X, var_P, cov_XP)
    except InvalidStateError as exc:
        raise UnphysicalReconstructionError(str(exc)) from exc


class TomographicReconstructor(BaseEstimator):
    """Estimator wrapper around :func:`tomographic_reconstruct`; result in ``state_``."""

    def __init__(self, kappa=0.93, beta=0.0, tau=0.0, constant="split", electronic_noise=0.0,
                 admix_noise=True):
        self.kappa = kappa
        self.beta = beta
        self.tau = tau
        self.constant = constant
        self.electronic_noise = electronic_noise
        self.admix_noise = admix_noise

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.state_ = tomographic_reconstruct(
            X, self.kappa, self.beta, self.tau, self.constant, self.electronic_noise,
            admix_noise=self.admix_noise,
        )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Map readouts to atomic-quadrature estimates ``(X, P)``."""
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=float)
        G = 0.5 * self.kappa * np.exp(-self.beta * self.tau)
        return np.column_stack([X[:, 1] / G, X[:, 0] / G])
