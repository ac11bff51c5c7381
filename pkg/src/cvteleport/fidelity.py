"""Fidelity measures, gain optimization and the fidelity error budget."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._fitting import polyfit_ci
from .exceptions import ConvergenceError, InvalidStateError
from .gaussian_core import VACUUM_VARIANCE


def ensemble_fidelity(n_avg, g_X, g_P, var_X, var_P):
    """Average fidelity over a Gaussian prior of coherent states.

    ``F = 2 / sqrt((2n(1-g_X)^2 + 1 + 2 var_X)(2n(1-g_P)^2 + 1 + 2 var_P))``
    where ``n`` is the prior's mean photon number.
    """
    n_avg = np.asarray(n_avg, dtype=float)
    if np.any(n_avg < 0):
        raise ValueError("n_avg must be >= 0")
    if np.any(np.asarray(var_X) <= 0) or np.any(np.asarray(var_P) <= 0):
        raise ValueError("variances must be > 0")
    fx = 2 * n_avg * (1 - np.asarray(g_X)) ** 2 + 1 + 2 * np.asarray(var_X)
    fp = 2 * n_avg * (1 - np.asarray(g_P)) ** 2 + 1 + 2 * np.asarray(var_P)
    F = 2.0 / np.sqrt(fx * fp)
    return float(F) if F.ndim == 0 else F


def classical_benchmark(n_avg):
    """Best measure-and-prepare fidelity ``(n + 1)/(2n + 1)``."""
    n_avg = np.asarray(n_avg, dtype=float)
    if np.any(n_avg < 0):
        raise ValueError("n_avg must be >= 0")
    F = (n_avg + 1) / (2 * n_avg + 1)
    return float(F) if F.ndim == 0 else F


def best_classical_transfer(n_avg: float) -> tuple[float, float]:
    """Gain and per-quadrature variance of the optimal measure-and-prepare map.

    Heterodyne the input, scale by ``eta = n/(n+1)`` and prepare a coherent
    state: the output variance is ``1/2 + eta^2``.  Substituted into
    :func:`ensemble_fidelity` this reaches :func:`classical_benchmark`.
    """
    if n_avg < 0:
        raise ValueError("n_avg must be >= 0")
    eta = n_avg / (n_avg + 1.0)
    return eta, VACUUM_VARIANCE + eta**2


@dataclass(frozen=True)
class GainCurve:
    """Atomic variance as a quadratic in the feedback gain, ``a g^2 + b g + c``.

    ``ci`` optionally holds 95% intervals for ``(a, b, c)``, shape (3, 2).
    """

    a: float
    b: float
    c: float
    ci: np.ndarray | None = None

    def __post_init__(self):
        # tolerate round-off from a fit to constant data
        if self.a < -1e-9 * max(1.0, abs(self.b), abs(self.c)):
            raise ValueError(f"curvature must be >= 0, got a={self.a}")

    def variance(self, g):
        g = np.asarray(g, dtype=float)
        v = self.a * g**2 + self.b * g + self.c
        return float(v) if v.ndim == 0 else v

    __call__ = variance

    def shifted(self, dc: float) -> "GainCurve":
        return GainCurve(self.a, self.b, self.c + dc, self.ci)

    @classmethod
    def through(cls, a: float, b: float, point: tuple[float, float]) -> "GainCurve":
        """Curve with given ``a, b`` passing through ``(g, var)``."""
        g, v = point
        return cls(a, b, v - a * g * g - b * g)


def fit_variance_vs_gain(points, level: float = 0.95) -> GainCurve:
    """Least-squares quadratic through ``(g, variance)`` points.

    Raises
    ------
    CalibrationError
        Fewer than three distinct gains or a rank-deficient design.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {arr.shape}")
    fit = polyfit_ci(arr[:, 0], arr[:, 1], 2, level=level)
    c, b, a = fit.coef
    return GainCurve(float(a), float(b), float(c), fit.ci[::-1].copy())


class VarianceGainRegressor(RegressorMixin, BaseEstimator):
    """Quadratic variance-vs-gain fit with the estimator interface.

    ``X`` is the gain (single feature), ``y`` the measured variance.  The
    fitted curve is in ``curve_``.
    """

    def __init__(self, level=0.95):
        self.level = level

    def fit(self, X, y):
        X = check_array(X, dtype=float, ensure_min_samples=3)
        if X.shape[1] != 1:
            raise ValueError("VarianceGainRegressor expects a single feature")
        self.curve_ = fit_variance_vs_gain(np.column_stack([X[:, 0], y]), self.level)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "curve_")
        X = check_array(X, dtype=float)
        return np.asarray(self.curve_.variance(X[:, 0]))


def _quadrature_factor(g, n_avg, curve: GainCurve):
    return 2 * n_avg * (1 - g) ** 2 + 1 + 2 * curve.variance(g)


def _optimize_one(n_avg: float, curve: GainCurve, bounds, xatol: float) -> float:
    lo, hi = bounds
    quad = 2 * n_avg + 2 * curve.a
    lin = -4 * n_avg + 2 * curve.b
    if quad <= 0:
        # linear or flat objective; ties go to the smaller gain
        return float(hi if lin < 0 else lo)
    res = optimize.minimize_scalar(
        _quadrature_factor, bounds=(lo, hi), args=(n_avg, curve),
        method="bounded", options={"xatol": xatol, "maxiter": 500},
    )
    if not res.success:
        raise ConvergenceError(f"gain search did not converge: {res.message}")
    g = float(res.x)
    # the bounded search never lands exactly on an edge
    for edge in (lo, hi):
        if abs(g - edge) < 10 * xatol and _quadrature_factor(edge, n_avg, curve) <= res.fun:
            g = float(edge)
    return g


def optimize_gains(n_avg: float, curve_X: GainCurve, curve_P: GainCurve | None = None,
                   bounds=(0.0, 2.0), xatol: float = 1e-9):
    """Gains maximizing :func:`ensemble_fidelity` with ``var(g)`` from the curves.

    The objective factorizes, so each quadrature is optimized separately
    by a bounded scalar search.

    Returns
    -------
    g_X, g_P, F : float
    """
    if n_avg < 0:
        raise ValueError("n_avg must be >= 0")
    curve_P = curve_X if curve_P is None else curve_P
    gX = _optimize_one(n_avg, curve_X, bounds, xatol)
    gP = _optimize_one(n_avg, curve_P, bounds, xatol)
    vX, vP = curve_X.variance(gX), curve_P.variance(gP)
    if vX <= 0 or vP <= 0:
        raise InvalidStateError("gain curve predicts a non-positive variance at the optimum")
    return gX, gP, ensemble_fidelity(n_avg, gX, gP, vX, vP)


# Qubit channel -----------------------------------------------------------

#: Ways of turning an atomic variance into the channel noise ``s^2``.
#: ``"kernel"`` matches the Gaussian kernel of the channel to the added
#: variance in the vacuum-1/2 convention; ``"literal"`` uses ``4 var - 1``.
S2_MAPPINGS = {
    "kernel": lambda v: (2.0 * v - 1.0) / 4.0,
    "literal": lambda v: 4.0 * v - 1.0,
}


@dataclass(frozen=True)
class QubitChannel:
    """Gaussian displacement channel restricted to the {|0>, |1>} qubit.

    Coherent states map as ``|alpha> -> int d^2 beta K(beta - g alpha) |beta><beta|``
    with ``K`` a normalized Gaussian of width ``s2`` per real component.
    """

    g: float
    s2: float

    def __post_init__(self):
        if not (np.isfinite(self.g) and np.isfinite(self.s2)):
            raise ValueError("g and s2 must be finite")
        if self.g < 0:
            raise ValueError(f"gain must be >= 0, got {self.g}")
        if self.s2 < 0:
            raise ValueError(f"s2 must be >= 0, got {self.s2}")

    @property
    def is_completely_positive(self) -> bool:
        """Amplifying channels (``g > 1``) need ``s2 >= (g^2 - 1)/2``."""
        return self.s2 >= max(0.0, (self.g**2 - 1.0) / 2.0) - 1e-12

    @classmethod
    def from_variance(cls, variance: float, g: float, mapping: str = "kernel") -> "QubitChannel":
        try:
            s2 = S2_MAPPINGS[mapping](variance)
        except KeyError:
            raise ValueError(f"mapping must be one of {sorted(S2_MAPPINGS)}") from None
        return cls(g, s2)


def qubit_fidelity(ch: QubitChannel) -> float:
    """Average fidelity of the channel over pure qubit inputs.

    Only meaningful for completely positive channels; amplification below
    the noise floor can give values above one.
    """
    s2, dg = ch.s2, ch.g - 1.0
    num = 6 + 16 * s2 + 24 * s2**2 + 4 * dg * (1 - 2 * s2) + dg**2 * (1 - 6 * s2)
    return float(num / (6 * (1 + 2 * s2) ** 3))


# Error budget ------------------------------------------------------------

@dataclass(frozen=True)
class ErrorBudget:
    """Independent contributions to the standard deviation of the fidelity."""

    d_PN: float = 0.0
    d_SN: float = 0.0
    d_el: float = 0.0
    d_beta: float = 0.0
    d_SNR: float = 0.0
    d_fit: float = 0.0
    d_g: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")

    @classmethod
    def published(cls, high_n: bool = False) -> "ErrorBudget":
        """The published contributions; ``high_n`` selects the larger fit error."""
        return cls(0.010, 0.017, 0.001, 0.003, 0.002, 0.016 if high_n else 0.012, 0.008)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


def error_budget(b: ErrorBudget) -> float:
    """Quadrature sum of the contributions."""
    return float(np.sqrt(np.sum(b.as_array() ** 2)))
