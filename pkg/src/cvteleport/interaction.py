"""Atoms-light interaction: the entangling pass and its calibration variants.

All passes are linear maps on canonical variables and are applied to the
mean vector and covariance of a Gaussian state at once.  Right-hand sides
always use the pre-pass values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidStateError
from .gaussian_core import (
    LIGHT_LABELS,
    SYSTEM_LABELS,
    VACUUM_VARIANCE,
    ModeState,
    SystemState,
    squeeze_factor,
)


@dataclass(frozen=True)
class CouplingParams:
    """Microscopic parameters entering the coupling constant.

    ``sigma`` and ``A`` must share an area unit, ``Gamma`` and ``Delta`` a
    frequency unit; the result is then dimensionless.
    """

    a1: float
    N_ph: float
    N_at: float
    sigma: float
    Gamma: float
    A: float
    Delta: float
    F_hf: float = 4.0

    def __post_init__(self):
        for name in ("a1", "sigma", "Gamma", "A", "Delta", "F_hf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("N_ph", "N_at"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def J_x(self) -> float:
        """Macroscopic spin of the fully polarised ensemble."""
        return self.F_hf * self.N_at


@dataclass(frozen=True)
class NoiseParams:
    """Imperfections of the protocol.

    epsilon : fraction of strong-pulse light lost between atoms and detectors
    beta : decay rate of the mean atomic spin under probe light, 1/ms
    tau : time from the start of the verifying pulse to its centre, ms
    electronic_noise : detector noise per measured quadrature, in vacuum units
    """

    epsilon: float = 0.0
    beta: float = 0.0
    tau: float = 0.0
    electronic_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.beta < 0 or self.tau < 0:
            raise ValueError("beta and tau must be >= 0")
        if self.electronic_noise < 0:
            raise ValueError("electronic_noise must be >= 0")

    @property
    def decay_factor(self) -> float:
        return float(np.exp(-self.beta * self.tau))


def compute_kappa(p: CouplingParams) -> float:
    """Coupling constant ``a1 sqrt(N_ph N_at) F sigma Gamma / (A Delta)``."""
    return float(p.a1 * np.sqrt(p.N_ph * p.N_at) * p.F_hf * p.sigma * p.Gamma / (p.A * p.Delta))


def effective_kappa(kappa: float, epsilon: float) -> float:
    """Coupling seen downstream of a lossy light path (what the two-cell scan measures)."""
    return float(kappa * np.sqrt(1.0 - epsilon))


def legendre_coupling(n) -> np.ndarray:
    """``c_n = (4 n^2 - 1)**-1/2`` for ``n >= 1``."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 1):
        raise ValueError("c_n is defined for n >= 1")
    return 1.0 / np.sqrt(4.0 * n**2 - 1.0)


def entangling_matrix(kappa: float) -> np.ndarray:
    """10x10 map of the single-mode interaction in ``SYSTEM_LABELS`` order."""
    ix = {lab: i for i, lab in enumerate(SYSTEM_LABELS)}
    S = np.eye(len(SYSTEM_LABELS))
    a = kappa**2 / 4.0
    b = a * legendre_coupling(1)
    c = kappa / np.sqrt(2.0)
    S[ix["y_c"], ix["q_s"]] += a
    S[ix["y_c"], ix["v_s"]] += b
    S[ix["y_c"], ix["P_A"]] += c
    S[ix["y_s"], ix["q_c"]] -= a
    S[ix["y_s"], ix["v_c"]] -= b
    S[ix["y_s"], ix["X_A"]] -= c
    S[ix["X_A"], ix["q_c"]] += c
    S[ix["P_A"], ix["q_s"]] += c
    return S


def _check_layout(state: SystemState):
    if state.labels != SYSTEM_LABELS:
        raise InvalidStateError(f"expected layout {SYSTEM_LABELS}, got {state.labels}")


def entangling_pass(state: SystemState, kappa: float) -> SystemState:
    """Interaction of the strong pulse with the atoms.

    ``y_c += k^2/4 q_s + k^2/(4 sqrt 3) v_s + k/sqrt2 P_A``,
    ``y_s -= k^2/4 q_c + k^2/(4 sqrt 3) v_c + k/sqrt2 X_A``,
    ``X_A += k/sqrt2 q_c``, ``P_A += k/sqrt2 q_s``; q-quadratures unchanged.
    """
    _check_layout(state)
    return state.transform(entangling_matrix(kappa))


def loss_channel(labels, epsilon: float, lossy=LIGHT_LABELS):
    """Return ``(T, N)`` with ``V -> T V T + N`` for a beam splitter admixing vacuum."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    t = np.ones(len(labels))
    noise = np.zeros(len(labels))
    for i, lab in enumerate(labels):
        if lab in lossy:
            t[i] = np.sqrt(1.0 - epsilon)
            noise[i] = epsilon * VACUUM_VARIANCE
    return np.diag(t), np.diag(noise)


def apply_loss(state: SystemState, epsilon: float, lossy=LIGHT_LABELS) -> SystemState:
    """Send the strong-pulse light through a beam splitter of transmission ``1 - epsilon``."""
    T, N = loss_channel(state.labels, epsilon, lossy)
    return SystemState(state.labels, T @ state.mean, T @ state.cov @ T + N)


def two_cell_pass(light: ModeState, atoms_total: ModeState, kappa: float, component: str = "c") -> ModeState:
    """Probe light after two oppositely polarised cells.

    The back-action terms cancel, leaving ``y += kappa * P_total`` for the
    cosine component (``component='c'``) or ``y += kappa * X_total`` for the
    sine component.  The quadrature ``q`` is untouched.
    """
    if component == "c":
        m, v = atoms_total.mean_q, atoms_total.var_q
    elif component == "s":
        m, v = atoms_total.mean_y, atoms_total.var_y
    else:
        raise ValueError(f"component must be 'c' or 's', got {component!r}")
    return ModeState(
        light.mean_y + kappa * m,
        light.mean_q,
        light.var_y + kappa**2 * v,
        light.var_q,
        light.cov_yq,
    )


# Higher-order scattering modes -------------------------------------------

def mode_labels(n_modes: int) -> tuple:
    """Labels ``(y_c_n, q_c_n, y_s_n, q_s_n)`` for ``n = 0..n_modes-1``."""
    return tuple(f"{v}_{n}" for n in range(n_modes) for v in ("y_c", "q_c", "y_s", "q_s"))


def mode_pairs(n_modes: int, with_atoms: bool = False) -> tuple:
    pairs = tuple(
        pair for n in range(n_modes) for pair in ((f"y_c_{n}", f"q_c_{n}"), (f"y_s_{n}", f"q_s_{n}"))
    )
    return pairs + (("X_A", "P_A"),) if with_atoms else pairs


@dataclass(frozen=True)
class HigherModeState:
    """Gaussian state of the temporal light modes ``n = 0..n_max``.

    Thin wrapper over a :class:`SystemState` with the layout of
    :func:`mode_labels`.
    """

    n_max: int
    state: SystemState

    def __post_init__(self):
        if self.state.labels != mode_labels(self.n_max + 1):
            raise InvalidStateError("state layout does not match n_max")

    @classmethod
    def vacuum(cls, n_max: int, squeeze_db: float = 0.0) -> "HigherModeState":
        f = squeeze_factor(squeeze_db)
        labels = mode_labels(n_max + 1)
        var = [VACUUM_VARIANCE * (f if lab.startswith("y") else 1.0 / f) for lab in labels]
        return cls(n_max, SystemState(labels, np.zeros(len(labels)), np.diag(var)))

    def mode(self, component: str, n: int) -> ModeState:
        return self.state.mode(f"y_{component}_{n}", f"q_{component}_{n}")


def higher_order_matrix(kappa: float, n_max: int) -> np.ndarray:
    """Back-action coupling between temporal modes ``0..n_max``.

    ``y_{c,n} -= k^2/4 (c_n q_{s,n-1} - c_{n+1} q_{s,n+1})`` and
    ``y_{s,n} += k^2/4 (c_n q_{c,n-1} - c_{n+1} q_{c,n+1})``, with the
    ``n-1`` term absent at ``n = 0`` and couplings beyond ``n_max`` dropped.
    At ``n = 0`` this reproduces the first-order term of the single-mode
    pass with ``v_alpha = q_{alpha,1}``.
    """
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    n_modes = n_max + 1
    labels = mode_labels(n_modes)
    ix = {lab: i for i, lab in enumerate(labels)}
    a = kappa**2 / 4.0
    S = np.eye(len(labels))
    for n in range(n_modes):
        for m, coef in ((n - 1, legendre_coupling(n) if n >= 1 else 0.0),
                        (n + 1, -legendre_coupling(n + 1))):
            if 0 <= m < n_modes and coef != 0.0:
                S[ix[f"y_c_{n}"], ix[f"q_s_{m}"]] += -a * coef
                S[ix[f"y_s_{n}"], ix[f"q_c_{m}"]] += a * coef
    return S


def higher_order_pass(state: HigherModeState, kappa: float) -> HigherModeState:
    S = higher_order_matrix(kappa, state.n_max)
    return HigherModeState(state.n_max, state.state.transform(S))


def multimode_labels(n_modes: int) -> tuple:
    return mode_labels(n_modes) + ("X_A", "P_A")


def multimode_matrix(kappa: float, n_modes: int) -> np.ndarray:
    """Full interaction over ``n_modes`` temporal modes plus the atoms.

    Combines :func:`higher_order_matrix` with the zeroth-mode self
    back-action and the atomic coupling; restricted to modes 0 and 1 it is
    exactly :func:`entangling_matrix`.
    """
    labels = multimode_labels(n_modes)
    ix = {lab: i for i, lab in enumerate(labels)}
    S = np.eye(len(labels))
    if n_modes >= 2:
        S[: 4 * n_modes, : 4 * n_modes] = higher_order_matrix(kappa, n_modes - 1)
    a = kappa**2 / 4.0
    c = kappa / np.sqrt(2.0)
    S[ix["y_c_0"], ix["q_s_0"]] += a
    S[ix["y_s_0"], ix["q_c_0"]] -= a
    S[ix["y_c_0"], ix["P_A"]] += c
    S[ix["y_s_0"], ix["X_A"]] -= c
    S[ix["X_A"], ix["q_c_0"]] += c
    S[ix["P_A"], ix["q_s_0"]] += c
    return S
