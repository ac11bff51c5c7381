"""Ordinary least-squares polynomial fits with t-based confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import CalibrationError


@dataclass(frozen=True)
class PolyFit:
    coef: np.ndarray  # increasing order: coef[k] multiplies x**k
    cov: np.ndarray
    ci: np.ndarray  # shape (deg+1, 2); NaN when there are no residual dof
    r_squared: float
    residual_rms: float
    dof: int

    def predict(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coef)

    def predict_se(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        V = np.vander(x, len(self.coef), increasing=True)
        return np.sqrt(np.einsum("ij,jk,ik->i", V, self.cov, V))


def polyfit_ci(x, y, deg: int, level: float = 0.95) -> PolyFit:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise CalibrationError(f"x and y lengths differ: {x.size} vs {y.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise CalibrationError("fit data must be finite")
    n_distinct = np.unique(x).size
    if n_distinct < deg + 1:
        raise CalibrationError(
            f"degree-{deg} fit needs >= {deg + 1} distinct abscissae, got {n_distinct}"
        )
    V = np.vander(x, deg + 1, increasing=True)
    coef, _, rank, _ = np.linalg.lstsq(V, y, rcond=None)
    if rank < deg + 1:
        raise CalibrationError("design matrix is rank deficient")
    resid = y - V @ coef
    dof = x.size - (deg + 1)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-24 else 0.0)
    XtX_inv = np.linalg.inv(V.T @ V)
    if dof > 0:
        s2 = ss_res / dof
        cov = s2 * XtX_inv
        half = stats.t.ppf(0.5 + level / 2, dof) * np.sqrt(np.diag(cov))
        ci = np.column_stack([coef - half, coef + half])
    else:
        cov = np.full_like(XtX_inv, np.nan)
        ci = np.full((deg + 1, 2), np.nan)
    return PolyFit(coef, cov, ci, r2, float(np.sqrt(ss_res / x.size)), dof)
