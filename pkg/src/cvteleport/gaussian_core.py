"""Gaussian states in dimensionless canonical variables.

Conventions used throughout the package:

* canonical pairs obey ``[y, q] = i`` and the vacuum variance is 1/2;
* a coherent state with mean photon number ``n_bar`` has
  ``mean_y**2 + mean_q**2 == 2 * n_bar``;
* squeezing in dB scales the squeezed variance by ``10**(-dB/10)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import InvalidStateError
from .streams import make_rng

VACUUM_VARIANCE = 0.5
HEISENBERG_TOL = 1e-12

#: Ordered variable layout of the protocol state.  ``v_c``/``v_s`` are the
#: first-order temporal modes that enter the back-action; their conjugates
#: never couple to anything in the single-mode protocol and are left out.
SYSTEM_LABELS = ("Y", "Q", "y_c", "y_s", "q_c", "q_s", "v_c", "v_s", "X_A", "P_A")
LIGHT_LABELS = ("y_c", "y_s", "q_c", "q_s", "v_c", "v_s")
CANONICAL_PAIRS = (("Y", "Q"), ("y_c", "q_c"), ("y_s", "q_s"), ("X_A", "P_A"))


@dataclass(frozen=True)
class CoherentSpec:
    """Coherent input state given by mean photon number and phase."""

    n_bar: float
    phase: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.n_bar) or self.n_bar < 0:
            raise ValueError(f"n_bar must be finite and >= 0, got {self.n_bar}")

    @property
    def amplitude(self) -> float:
        return float(np.sqrt(2.0 * self.n_bar))

    @property
    def means(self) -> tuple[float, float]:
        a = self.amplitude
        return a * np.cos(self.phase), a * np.sin(self.phase)


@dataclass(frozen=True)
class ModeState:
    """Gaussian state of one canonical pair ``(y, q)``."""

    mean_y: float
    mean_q: float
    var_y: float = VACUUM_VARIANCE
    var_q: float = VACUUM_VARIANCE
    cov_yq: float = 0.0

    def __post_init__(self):
        vals = (self.mean_y, self.mean_q, self.var_y, self.var_q, self.cov_yq)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidStateError(f"non-finite moments: {vals}")
        if self.var_y <= 0 or self.var_q <= 0:
            raise InvalidStateError(
                f"variances must be positive, got ({self.var_y}, {self.var_q})"
            )
        if self.uncertainty_product < 0.25 - HEISENBERG_TOL:
            raise InvalidStateError(
                f"uncertainty product {self.uncertainty_product:.6g} below 1/4"
            )

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_y, self.mean_q])

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.var_y, self.cov_yq], [self.cov_yq, self.var_q]])

    @property
    def uncertainty_product(self) -> float:
        return self.var_y * self.var_q - self.cov_yq**2

    @property
    def mean_photon_number(self) -> float:
        return 0.5 * (self.mean_y**2 + self.mean_q**2 + self.var_y + self.var_q - 1.0)

    @classmethod
    def from_moments(cls, mean, cov) -> "ModeState":
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        return cls(
            float(mean[0]), float(mean[1]), float(cov[0, 0]), float(cov[1, 1]),
            float(0.5 * (cov[0, 1] + cov[1, 0])),
        )


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SystemState:
    """Joint Gaussian state over labelled canonical variables.

    Parameters
    ----------
    labels : tuple of str
        Variable names, in the order used by ``mean`` and ``cov``.
    mean : array_like, shape (n,)
    cov : array_like, shape (n, n)
        Symmetric positive semidefinite covariance.  Exactly singular
        covariances are accepted (useful for noiseless stubs).
    """

    labels: tuple
    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        mean = _readonly(self.mean)
        cov = _readonly(self.cov)
        n = len(labels)
        if mean.shape != (n,) or cov.shape != (n, n):
            raise InvalidStateError(
                f"shape mismatch: {n} labels, mean {mean.shape}, cov {cov.shape}"
            )
        if len(set(labels)) != n:
            raise InvalidStateError(f"duplicate labels in {labels}")
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
            raise InvalidStateError("non-finite moments")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=1e-10):
            raise InvalidStateError("covariance is not symmetric")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def indices(self, labels: Sequence[str]) -> list[int]:
        return [self.labels.index(lab) for lab in labels]

    def marginal(self, labels: Sequence[str]) -> "SystemState":
        idx = self.indices(labels)
        return SystemState(tuple(labels), self.mean[idx], self.cov[np.ix_(idx, idx)])

    def mode(self, y_label: str, q_label: str) -> ModeState:
        m = self.marginal((y_label, q_label))
        return ModeState.from_moments(m.mean, m.cov)

    def transform(self, S, d=None) -> "SystemState":
        """Apply the affine map ``x -> S x + d`` to mean and covariance."""
        S = np.asarray(S, dtype=float)
        mean = S @ self.mean
        if d is not None:
            mean = mean + np.asarray(d, dtype=float)
        return SystemState(self.labels, mean, S @ self.cov @ S.T)

    def with_mode(self, y_label: str, q_label: str, mode: ModeState) -> "SystemState":
        """Replace the marginal of one pair; its correlations with the rest are dropped."""
        i, j = self.index(y_label), self.index(q_label)
        mean = np.array(self.mean)
        cov = np.array(self.cov)
        for k in (i, j):
            cov[k, :] = 0.0
            cov[:, k] = 0.0
        mean[[i, j]] = mode.mean
        cov[np.ix_([i, j], [i, j])] = mode.cov
        return SystemState(self.labels, mean, cov)


def make_vacuum() -> ModeState:
    return ModeState(0.0, 0.0, VACUUM_VARIANCE, VACUUM_VARIANCE, 0.0)


def make_coherent(spec: CoherentSpec) -> ModeState:
    """Coherent state with ``mean_y + i mean_q = sqrt(2 n_bar) exp(i phase)``."""
    my, mq = spec.means
    return ModeState(my, mq, VACUUM_VARIANCE, VACUUM_VARIANCE, 0.0)


def squeeze_factor(squeeze_db: float) -> float:
    """Variance ratio ``10**(-dB/10)`` of the squeezed quadrature."""
    if squeeze_db < 0:
        raise ValueError(f"squeeze_db must be >= 0, got {squeeze_db}")
    return 10.0 ** (-squeeze_db / 10.0)


def make_squeezed_vacuum(squeeze_db: float, squeezed_axis: str = "y") -> ModeState:
    f = squeeze_factor(squeeze_db)
    lo, hi = VACUUM_VARIANCE * f, VACUUM_VARIANCE / f
    if squeezed_axis == "y":
        return ModeState(0.0, 0.0, lo, hi, 0.0)
    if squeezed_axis == "q":
        return ModeState(0.0, 0.0, hi, lo, 0.0)
    raise ValueError(f"squeezed_axis must be 'y' or 'q', got {squeezed_axis!r}")


def overlap_fidelity(target: CoherentSpec, state: ModeState) -> float:
    """Overlap ``<alpha| rho |alpha>`` of a Gaussian state with a coherent target.

    For covariance ``V`` and displacement ``d = mean - target`` this is
    ``det(V + I/2)**-0.5 * exp(-d^T (V + I/2)^-1 d / 2)``.
    """
    d = state.mean - np.asarray(target.means)
    M = state.cov + VACUUM_VARIANCE * np.eye(2)
    det = np.linalg.det(M)
    if det <= 0:
        raise InvalidStateError("state covariance is not positive definite")
    F = np.exp(-0.5 * d @ np.linalg.solve(M, d)) / np.sqrt(det)
    return float(min(F, 1.0))


def coherent_fidelity(var_x: float, var_p: float | None = None) -> float:
    """Fidelity ``2/sqrt((1+2 var_x)(1+2 var_p))`` at unity gain."""
    if var_p is None:
        var_p = var_x
    return 2.0 / np.sqrt((1.0 + 2.0 * var_x) * (1.0 + 2.0 * var_p))


def _psd_factor(cov: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    w, U = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -tol * scale:
        raise InvalidStateError(
            f"covariance has negative eigenvalue {w.min():.3g}; cannot factorize"
        )
    return U * np.sqrt(np.clip(w, 0.0, None))


def sample(state, rng=None, size=None) -> np.ndarray:
    """Draw from the Gaussian (Wigner) distribution of ``state``.

    Parameters
    ----------
    state : ModeState or SystemState
    rng : numpy.random.Generator or int, optional
        A seed is accepted for convenience; pass a Generator you own when
        drawing repeatedly.
    size : int, optional
        Number of draws.  ``None`` returns a single vector.

    Returns
    -------
    ndarray
        Shape ``(n,)`` or ``(size, n)``; for a ModeState ``n == 2`` in the
        order ``(y, q)``.
    """
    rng = make_rng(rng)
    L = _psd_factor(state.cov)
    n = len(state.mean)
    z = rng.standard_normal(n if size is None else (size, n))
    return state.mean + z @ L.T


def symplectic_form(labels: Sequence[str], pairs=CANONICAL_PAIRS) -> np.ndarray:
    """Commutator matrix ``Omega_ij = -i [x_i, x_j]`` for the given layout.

    Variables listed without a conjugate partner in ``pairs`` get empty rows.
    """
    labels = list(labels)
    n = len(labels)
    omega = np.zeros((n, n))
    for y, q in pairs:
        if y in labels and q in labels:
            i, j = labels.index(y), labels.index(q)
            omega[i, j] = 1.0
            omega[j, i] = -1.0
    return omega


def initial_system_state(
    input_state: ModeState | CoherentSpec | None = None,
    atoms: ModeState | None = None,
    light_squeeze_db: float = 0.0,
) -> SystemState:
    """Protocol state before the entangling pass.

    The input sideband ``(Y, Q)`` carries ``input_state``; the strong pulse's
    x-polarised modes are vacuum (optionally y-squeezed) and the atoms start
    in a coherent spin state unless ``atoms`` is given.
    """
    if input_state is None:
        input_state = make_vacuum()
    elif isinstance(input_state, CoherentSpec):
        input_state = make_coherent(input_state)
    atoms = make_vacuum() if atoms is None else atoms
    f = squeeze_factor(light_squeeze_db)
    mean = np.zeros(len(SYSTEM_LABELS))
    cov = np.zeros((len(SYSTEM_LABELS),) * 2)
    for lab in ("y_c", "y_s"):
        i = SYSTEM_LABELS.index(lab)
        cov[i, i] = VACUUM_VARIANCE * f
    for lab in ("q_c", "q_s", "v_c", "v_s"):
        i = SYSTEM_LABELS.index(lab)
        cov[i, i] = VACUUM_VARIANCE / f
    for (y, q), mode in ((("Y", "Q"), input_state), (("X_A", "P_A"), atoms)):
        idx = [SYSTEM_LABELS.index(y), SYSTEM_LABELS.index(q)]
        mean[idx] = mode.mean
        cov[np.ix_(idx, idx)] = mode.cov
    return SystemState(SYSTEM_LABELS, mean, cov)
