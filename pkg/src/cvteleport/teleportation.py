"""Bell measurement, feedback and the full teleportation protocol.

Two independent routes compute the protocol statistics:

* Monte Carlo: the post-interaction state is sampled jointly (Wigner
  representation) and every later step acts on the sampled arrays.  This
  realizes measurement conditioning exactly for linear Gaussian dynamics.
* Analytic: all outputs are written as one linear readout of the
  post-interaction variables plus independent noise sources, and the
  covariance is propagated.

The input sideband and a lower-sideband vacuum pair compose the four
measured sideband modes.  With this composition ``B1 = y_s - q_c`` has mean
``+Y`` and ``B2 = y_c + q_s`` has mean ``-Q``; feedback
``X += g_X B1, P -= g_P B2`` then transfers ``(Y, Q)`` onto the atoms with
positive gains.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple

import numpy as np
from scipy import optimize
from scipy.special import eval_legendre

from .exceptions import ConvergenceError, InvalidStateError
from .fidelity import GainCurve, QubitChannel, ensemble_fidelity, qubit_fidelity
from .gaussian_core import (
    SYSTEM_LABELS,
    VACUUM_VARIANCE,
    CoherentSpec,
    ModeState,
    SystemState,
    _psd_factor,
    coherent_fidelity,
    initial_system_state,
    make_coherent,
    make_vacuum,
    sample,
    squeeze_factor,
)
from .interaction import (
    NoiseParams,
    apply_loss,
    effective_kappa,
    entangling_pass,
    multimode_labels,
    multimode_matrix,
)
from .streams import BLOCK_SIZE, block_layout, default_seed, make_rng, substream
from .verification import (
    VerifyOutcome,
    decay_values,
    readout_gain,
    readout_noise_variance,
    reconstruct_variances,
    verify_values,
)

_R2 = np.sqrt(2.0)
_IX = {lab: i for i, lab in enumerate(SYSTEM_LABELS)}

#: Excess detection noise (vacuum units per measured quadrature) of the
#: published-parameter preset.  It lumps the imperfections outside the loss
#: and decay model and is set so that the preset's teleported variances at
#: gains 0.96/0.95 average to the measured 1.16.
PUBLISHED_EXCESS_NOISE = 0.319


@dataclass(frozen=True)
class ProtocolParams:
    """Settings of one teleportation experiment.

    ``kappa`` is the bare interaction strength; detection sees
    ``kappa * sqrt(1 - epsilon)``.  ``squeeze_db`` squeezes the y quadratures
    of the strong pulse.  ``n_max`` is the highest temporal mode used by the
    multimode protocol.
    """

    kappa: float = 1.0
    g_X: float = 1.0
    g_P: float = 1.0
    epsilon: float = 0.0
    beta: float = 0.0
    tau: float = 0.0
    squeeze_db: float = 0.0
    n_max: int = 3
    electronic_noise: float = 0.0
    admix_noise: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa >= 0):
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        if not (np.isfinite(self.g_X) and np.isfinite(self.g_P)):
            raise ValueError("gains must be finite")
        if self.squeeze_db < 0:
            raise ValueError("squeeze_db must be >= 0")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        NoiseParams(self.epsilon, self.beta, self.tau, self.electronic_noise)

    @property
    def noise(self) -> NoiseParams:
        return NoiseParams(self.epsilon, self.beta, self.tau, self.electronic_noise)

    @property
    def decay_factor(self) -> float:
        return float(np.exp(-self.beta * self.tau))

    @property
    def kappa_eff(self) -> float:
        return effective_kappa(self.kappa, self.epsilon)

    def with_gains(self, g_X: float, g_P: float | None = None) -> "ProtocolParams":
        return replace(self, g_X=g_X, g_P=g_X if g_P is None else g_P)

    @classmethod
    def published(cls, **overrides) -> "ProtocolParams":
        """Published operating point: detected coupling 0.93 after 9% loss,
        decay 0.09/ms read out 1 ms later, gains 0.96/0.95."""
        base = dict(
            kappa=0.93 / np.sqrt(1 - 0.09),
            g_X=0.96,
            g_P=0.95,
            epsilon=0.09,
            beta=0.09,
            tau=1.0,
            electronic_noise=PUBLISHED_EXCESS_NOISE,
        )
        base.update(overrides)
        return cls(**base)


# Measurement and feedback --------------------------------------------------

@dataclass(frozen=True)
class BellOutcome:
    """Measured canonical values of the two detected sideband pairs."""

    y_c: np.ndarray
    y_s: np.ndarray
    q_c: np.ndarray
    q_s: np.ndarray


@dataclass(frozen=True)
class FeedbackSignal:
    """``B1 = y_s - q_c`` and ``B2 = y_c + q_s``."""

    B1: np.ndarray
    B2: np.ndarray

    @classmethod
    def from_outcome(cls, b: BellOutcome) -> "FeedbackSignal":
        return cls(b.y_s - b.q_c, b.y_c + b.q_s)


def _bell_from(x, lo, el):
    """Measured quadratures from system variables, lower sideband and detector noise."""
    Y, Q = x[..., _IX["Y"]], x[..., _IX["Q"]]
    Y_lo, Q_lo = lo
    Y_s = (Y + Y_lo) / _R2
    Q_c = (Y - Y_lo) / _R2
    Y_c = (Q_lo - Q) / _R2
    Q_s = (Q + Q_lo) / _R2
    return BellOutcome(
        (x[..., _IX["y_c"]] + Y_c) / _R2 + el[0],
        (x[..., _IX["y_s"]] + Y_s) / _R2 + el[1],
        (x[..., _IX["q_c"]] - Q_c) / _R2 + el[2],
        (x[..., _IX["q_s"]] - Q_s) / _R2 + el[3],
    )


def bell_values(x, rng, electronic_noise: float = 0.0) -> BellOutcome:
    """Vectorised Bell measurement on sampled system variables ``x[..., 10]``."""
    shape = np.shape(x)[:-1]
    lo = np.sqrt(VACUUM_VARIANCE) * rng.standard_normal((2,) + shape)
    el = np.sqrt(electronic_noise * VACUUM_VARIANCE) * rng.standard_normal((4,) + shape)
    return _bell_from(np.asarray(x), lo, el)


def bell_measurement(state: SystemState, rng=None, electronic_noise: float = 0.0,
                     size: int | None = None) -> BellOutcome:
    """Joint homodyne measurement of the input and the strong pulse.

    ``rng=None`` is the zero-noise stub returning the analytic means.
    """
    if state.labels != SYSTEM_LABELS:
        raise InvalidStateError(f"expected layout {SYSTEM_LABELS}")
    if rng is None:
        return _bell_from(state.mean, (0.0, 0.0), (0.0,) * 4)
    rng = make_rng(rng)
    return bell_values(sample(state, rng, size=size), rng, electronic_noise)


def feedback_values(X, P, B1, B2, g_X: float, g_P: float):
    return X + g_X * B1, P - g_P * B2


def apply_feedback(atoms: ModeState, f: FeedbackSignal, g_X: float, g_P: float) -> ModeState:
    """Displace the atoms by the measured signal: ``X += g_X B1``, ``P -= g_P B2``."""
    if not (np.isfinite(g_X) and np.isfinite(g_P)):
        raise ValueError("gains must be finite")
    X, P = feedback_values(atoms.mean_y, atoms.mean_q, float(f.B1), float(f.B2), g_X, g_P)
    return ModeState(X, P, atoms.var_y, atoms.var_q, atoms.cov_yq)


def prepared_state(params: ProtocolParams, input_state=None) -> SystemState:
    """System state after the entangling pass and the light loss."""
    s = initial_system_state(input_state, light_squeeze_db=params.squeeze_db)
    return apply_loss(entangling_pass(s, params.kappa), params.epsilon)


# Analytic route -----------------------------------------------------------

#: Outputs of the analytic readout, in order.
OUTPUT_LABELS = (
    "Y_in", "Q_in", "y_c", "y_s", "q_c", "q_s", "B1", "B2",
    "X_tele", "P_tele", "X_fin", "P_fin", "y_c_ver", "y_s_ver",
)
# extra independent sources appended to the 10 system variables
_EXTRA = ("Y_lo", "Q_lo", "e_yc", "e_ys", "e_qc", "e_qs", "a_X", "a_P", "n_c", "n_s")


def _readout_matrix(params: ProtocolParams) -> np.ndarray:
    z = {lab: i for i, lab in enumerate(SYSTEM_LABELS + _EXTRA)}
    out = {lab: i for i, lab in enumerate(OUTPUT_LABELS)}
    L = np.zeros((len(OUTPUT_LABELS), len(z)))
    h = 0.5
    r = 1 / _R2
    for row, terms in {
        "y_c": {"y_c": r, "Q_lo": h, "Q": -h, "e_yc": 1},
        "y_s": {"y_s": r, "Y": h, "Y_lo": h, "e_ys": 1},
        "q_c": {"q_c": r, "Y": -h, "Y_lo": h, "e_qc": 1},
        "q_s": {"q_s": r, "Q": -h, "Q_lo": -h, "e_qs": 1},
    }.items():
        for col, v in terms.items():
            L[out[row], z[col]] += v
    L[out["B1"]] = L[out["y_s"]] - L[out["q_c"]]
    L[out["B2"]] = L[out["y_c"]] + L[out["q_s"]]
    L[out["X_tele"]] = params.g_X * L[out["B1"]]
    L[out["X_tele"], z["X_A"]] += 1
    L[out["P_tele"]] = -params.g_P * L[out["B2"]]
    L[out["P_tele"], z["P_A"]] += 1
    d = params.decay_factor
    L[out["X_fin"]] = d * L[out["X_tele"]]
    L[out["X_fin"], z["a_X"]] = 1
    L[out["P_fin"]] = d * L[out["P_tele"]]
    L[out["P_fin"], z["a_P"]] = 1
    G = readout_gain(params.kappa, params.epsilon)
    L[out["y_c_ver"]] = G * L[out["P_fin"]]
    L[out["y_c_ver"], z["n_c"]] = 1
    L[out["y_s_ver"]] = G * L[out["X_fin"]]
    L[out["y_s_ver"], z["n_s"]] = 1
    return L


def _extra_variances(params: ProtocolParams) -> np.ndarray:
    d2 = params.decay_factor**2
    admix = (1 - d2) * VACUUM_VARIANCE if params.admix_noise else 0.0
    el = params.electronic_noise * VACUUM_VARIANCE
    ver = readout_noise_variance(params.kappa, params.epsilon, params.electronic_noise)
    return np.array([VACUUM_VARIANCE] * 2 + [el] * 4 + [admix] * 2 + [ver] * 2)


def analytic_moments(params: ProtocolParams, input_state=None, prior_n: float | None = None) -> SystemState:
    """Exact joint moments of all recorded quantities.

    With ``prior_n`` the input means are drawn from a Gaussian prior of mean
    photon number ``prior_n`` (variance ``prior_n`` per quadrature) and
    ``input_state`` is ignored.
    """
    if prior_n is not None:
        if prior_n < 0:
            raise ValueError("prior_n must be >= 0")
        input_state = make_vacuum()
    elif input_state is None:
        input_state = make_vacuum()
    elif isinstance(input_state, CoherentSpec):
        input_state = make_coherent(input_state)
    base = prepared_state(params, input_state)
    n = len(SYSTEM_LABELS)
    mean_z = np.concatenate([base.mean, np.zeros(len(_EXTRA))])
    cov_z = np.zeros((n + len(_EXTRA),) * 2)
    cov_z[:n, :n] = base.cov
    cov_z[n:, n:] = np.diag(_extra_variances(params))
    L = _readout_matrix(params)
    mean = L @ mean_z
    cov = L @ cov_z @ L.T
    iY, iQ = OUTPUT_LABELS.index("Y_in"), OUTPUT_LABELS.index("Q_in")
    mean[iY], mean[iQ] = input_state.mean_y, input_state.mean_q
    if prior_n:
        for col, row in (("Y", iY), ("Q", iQ)):
            J = L[:, _IX[col]].copy()
            J[row] = 1.0
            cov = cov + prior_n * np.outer(J, J)
    return SystemState(OUTPUT_LABELS, mean, 0.5 * (cov + cov.T))


def teleported_state(params: ProtocolParams, input_state=None) -> ModeState:
    """Atomic state right after feedback for a fixed input."""
    return analytic_moments(params, input_state).mode("X_tele", "P_tele")


def teleported_variances(params: ProtocolParams) -> tuple[float, float]:
    s = teleported_state(params)
    return s.var_y, s.var_q


def variance_gain_curve(params: ProtocolParams, quadrature: str = "X") -> GainCurve:
    """Exact ``var(g)`` of one teleported quadrature as a function of its gain."""
    m = analytic_moments(params.with_gains(0.0, 0.0))
    C, i = m.cov, OUTPUT_LABELS.index
    if quadrature == "X":
        a_, s_ = i("X_tele"), i("B1")
        sign = 1.0
    elif quadrature == "P":
        a_, s_ = i("P_tele"), i("B2")
        sign = -1.0
    else:
        raise ValueError("quadrature must be 'X' or 'P'")
    return GainCurve(float(C[s_, s_]), float(2 * sign * C[a_, s_]), float(C[a_, a_]))


# Monte Carlo route --------------------------------------------------------

#: Columns of the per-run table.
RUN_COLUMNS = ("run_id", "Y_in", "Q_in", "B1", "B2", "X_tele", "P_tele", "y_c_ver", "y_s_ver")


@dataclass(frozen=True)
class RunRecord:
    """One simulated teleportation run."""

    run_id: int
    Y_in: float
    Q_in: float
    bell: BellOutcome
    feedback: FeedbackSignal
    X_tele: float
    P_tele: float
    verify: VerifyOutcome
    seed: int


# normal draws per run: system, prior, lower sideband, detectors, decay, verifying pulse
_DRAWS_PER_RUN = 10 + 2 + 2 + 4 + 2 + 12


class _RunMajorDraws:
    """Hands out columns of a pre-drawn ``(size, k)`` normal array.

    Each run owns one row, so a run's noise does not depend on how many
    runs share its block.
    """

    def __init__(self, z: np.ndarray):
        self._z = z
        self._used = 0

    def standard_normal(self, shape):
        k = shape[0]
        if self._used + k > self._z.shape[1]:
            raise RuntimeError("per-run draw budget exceeded")
        out = self._z[:, self._used:self._used + k].T.reshape(shape)
        self._used += k
        return out


def _simulate_block(params: ProtocolParams, base: SystemState, factor: np.ndarray,
                    prior_n: float | None, rng: np.random.Generator, size: int) -> dict:
    rng = _RunMajorDraws(rng.standard_normal((size, _DRAWS_PER_RUN)))
    x = base.mean + rng.standard_normal((len(base.mean), size)).T @ factor.T
    alpha = rng.standard_normal((2, size))
    if prior_n is not None:
        alpha = np.sqrt(prior_n) * alpha
        x[:, _IX["Y"]] += alpha[0]
        x[:, _IX["Q"]] += alpha[1]
        Y_in, Q_in = alpha
    else:
        Y_in = np.full(size, base.mean[_IX["Y"]])
        Q_in = np.full(size, base.mean[_IX["Q"]])
    bell = bell_values(x, rng, params.electronic_noise)
    fb = FeedbackSignal.from_outcome(bell)
    X_tele, P_tele = feedback_values(x[:, _IX["X_A"]], x[:, _IX["P_A"]], fb.B1, fb.B2,
                                     params.g_X, params.g_P)
    X_fin, P_fin = decay_values(X_tele, P_tele, params.decay_factor, params.admix_noise, rng)
    y_c_ver, y_s_ver = verify_values(X_fin, P_fin, params.kappa, rng, params.epsilon,
                                     params.electronic_noise)
    return dict(Y_in=Y_in, Q_in=Q_in, y_c=bell.y_c, y_s=bell.y_s, q_c=bell.q_c, q_s=bell.q_s,
                B1=fb.B1, B2=fb.B2, X_tele=X_tele, P_tele=P_tele, X_fin=X_fin, P_fin=P_fin,
                y_c_ver=y_c_ver, y_s_ver=y_s_ver)


@dataclass(frozen=True)
class EnsembleStats:
    """Sample statistics of ``n_runs`` simulated runs with their analytic counterparts.

    ``var_X``/``var_P`` are the conditional variances of the teleported
    quadratures, estimated from ``X_tele - g_X Y_in`` so that they apply to
    fixed and prior-distributed inputs alike.  ``var_X_reconstructed`` is
    what the verifying readout reports after undoing the decay.
    """

    params: ProtocolParams
    n_runs: int
    seed: int
    block_size: int
    prior_n: float | None
    columns: dict = field(repr=False)
    mean: dict = field(repr=False)
    var: dict = field(repr=False)
    analytic: SystemState = field(repr=False)
    var_X: float = 0.0
    var_P: float = 0.0
    var_X_analytic: float = 0.0
    var_P_analytic: float = 0.0
    var_X_reconstructed: float = float("nan")
    var_P_reconstructed: float = float("nan")
    fidelity: float = float("nan")
    fidelity_analytic: float = float("nan")
    fidelity_overlap: float = float("nan")

    def records(self) -> Iterator[RunRecord]:
        c = self.columns
        for i in range(self.n_runs):
            bell = BellOutcome(c["y_c"][i], c["y_s"][i], c["q_c"][i], c["q_s"][i])
            yield RunRecord(
                i, float(c["Y_in"][i]), float(c["Q_in"][i]), bell,
                FeedbackSignal(c["B1"][i], c["B2"][i]),
                float(c["X_tele"][i]), float(c["P_tele"][i]),
                VerifyOutcome(c["y_c_ver"][i], c["y_s_ver"][i]), self.seed,
            )

    def table(self) -> np.ndarray:
        """Per-run array with columns :data:`RUN_COLUMNS`."""
        cols = [np.arange(self.n_runs, dtype=float)] + [self.columns[k] for k in RUN_COLUMNS[1:]]
        return np.column_stack(cols)

    def summary(self) -> dict:
        """JSON-ready summary of the ensemble."""
        keys = RUN_COLUMNS[1:]
        a = self.analytic
        return {
            "n_runs": self.n_runs,
            "seed": self.seed,
            "block_size": self.block_size,
            "prior_n": self.prior_n,
            "mean": {k: float(self.mean[k]) for k in keys},
            "variance": {k: float(self.var[k]) for k in keys},
            "analytic_mean": {k: float(a.mean[a.index(k)]) for k in keys},
            "analytic_variance": {k: float(a.cov[a.index(k), a.index(k)]) for k in keys},
            "sigma2": {"X": self.var_X, "P": self.var_P},
            "sigma2_analytic": {"X": self.var_X_analytic, "P": self.var_P_analytic},
            "sigma2_reconstructed": {"X": self.var_X_reconstructed, "P": self.var_P_reconstructed},
            "fidelity": self.fidelity,
            "fidelity_analytic": self.fidelity_analytic,
            "fidelity_overlap": self.fidelity_overlap,
        }


def _reconstructed(params: ProtocolParams, resid_var: float, constant: str) -> float:
    """Atomic variance from a readout variance, with the decay undone."""
    try:
        v = reconstruct_variances(resid_var, params.kappa_eff, constant, params.electronic_noise)
    except (ValueError, ZeroDivisionError):
        return float("nan")
    d2 = params.decay_factor**2
    if params.admix_noise:
        v = v - (1 - d2) * VACUUM_VARIANCE
    return float(v / d2)


def run_ensemble(
    params: ProtocolParams,
    n_runs: int,
    seed: int | None = None,
    input_state: CoherentSpec | ModeState | None = None,
    prior_n: float | None = None,
    n_jobs: int | None = None,
    block_size: int = BLOCK_SIZE,
    constant: str = "split",
) -> EnsembleStats:
    """Simulate ``n_runs`` independent teleportation runs.

    Runs are grouped into blocks of ``block_size``; block ``b`` draws from
    the substream ``(seed, b)``, so the outcome does not depend on
    ``n_jobs``.  Either a fixed ``input_state`` or a Gaussian prior of
    width ``prior_n`` is teleported.
    """
    if n_runs < 2:
        raise ValueError(f"n_runs must be >= 2, got {n_runs}")
    if prior_n is not None and prior_n < 0:
        raise ValueError("prior_n must be >= 0")
    seed = default_seed() if seed is None else int(seed)
    if isinstance(input_state, CoherentSpec):
        input_state = make_coherent(input_state)
    base = prepared_state(params, None if prior_n is not None else input_state)
    factor = _psd_factor(base.cov)

    def work(block):
        b, start, stop = block
        return _simulate_block(params, base, factor, prior_n, substream(seed, b), stop - start)

    blocks = list(block_layout(n_runs, block_size))
    n_jobs = n_jobs or os.cpu_count() or 1
    if n_jobs == 1 or len(blocks) == 1:
        parts = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, blocks))
    columns = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}

    mean = {k: float(v.mean()) for k, v in columns.items()}
    var = {k: float(v.var(ddof=1)) for k, v in columns.items()}
    analytic = analytic_moments(params, input_state, prior_n)
    cond = teleported_state(params)
    resX = columns["X_tele"] - params.g_X * columns["Y_in"]
    resP = columns["P_tele"] - params.g_P * columns["Q_in"]
    var_X, var_P = float(resX.var(ddof=1)), float(resP.var(ddof=1))
    G = readout_gain(params.kappa, params.epsilon) * params.decay_factor
    rec_X = _reconstructed(params, float(np.var(columns["y_s_ver"] - G * params.g_X * columns["Y_in"], ddof=1)), constant)
    rec_P = _reconstructed(params, float(np.var(columns["y_c_ver"] - G * params.g_P * columns["Q_in"], ddof=1)), constant)

    if prior_n is not None:
        F = ensemble_fidelity(prior_n, params.g_X, params.g_P, var_X, var_P)
        F_an = ensemble_fidelity(prior_n, params.g_X, params.g_P, cond.var_y, cond.var_q)
        F_ov = float(np.mean(_overlap_diag(columns["Y_in"], columns["Q_in"], params.g_X, params.g_P,
                                           cond.var_y, cond.var_q)))
    else:
        target = (analytic.mean[0], analytic.mean[1])
        F = float(_overlap_diag_general(target, (mean["X_tele"], mean["P_tele"]), var_X, var_P))
        F_an = float(_overlap_diag_general(target, (analytic.mean[analytic.index("X_tele")],
                                                    analytic.mean[analytic.index("P_tele")]),
                                           cond.var_y, cond.var_q))
        F_ov = F_an
    return EnsembleStats(
        params, n_runs, seed, block_size, prior_n, columns, mean, var, analytic,
        var_X, var_P, float(cond.var_y), float(cond.var_q), rec_X, rec_P,
        float(F), float(F_an), float(F_ov),
    )


def _overlap_diag_general(target, mean, var_x, var_p):
    dx, dp = mean[0] - target[0], mean[1] - target[1]
    mx, mp = 1 + 2 * var_x, 1 + 2 * var_p
    return 2 / np.sqrt(mx * mp) * np.exp(-dx * dx / mx - dp * dp / mp)


def _overlap_diag(Y, Q, g_X, g_P, var_x, var_p):
    """Overlap of ``|alpha>`` with the teleported state, vectorised over inputs."""
    return _overlap_diag_general((Y, Q), (g_X * Y, g_P * Q), var_x, var_p)


def run_teleportation(params: ProtocolParams, input_state: CoherentSpec | None = None,
                      seed: int | None = None) -> RunRecord:
    """A single run; identical to run 0 of :func:`run_ensemble` with the same seed."""
    seed = default_seed() if seed is None else int(seed)
    if isinstance(input_state, CoherentSpec):
        input_state = make_coherent(input_state)
    base = prepared_state(params, input_state)
    cols = _simulate_block(params, base, _psd_factor(base.cov), None, substream(seed, 0), 1)
    c = {k: float(v[0]) for k, v in cols.items()}
    return RunRecord(
        0, c["Y_in"], c["Q_in"], BellOutcome(c["y_c"], c["y_s"], c["q_c"], c["q_s"]),
        FeedbackSignal(c["B1"], c["B2"]), c["X_tele"], c["P_tele"],
        VerifyOutcome(c["y_c_ver"], c["y_s_ver"]), seed,
    )


# Reference curves ---------------------------------------------------------

#: Measured ensemble fidelities keyed by prior width.
PUBLISHED_FIDELITIES = {2: 0.64, 5: 0.60, 10: 0.59, 20: 0.58, 200: 0.56}
#: Prior widths above this use the high-photon-number variance set.
HIGH_N_THRESHOLD = 20
_LOW_N_ANCHORS = ((0.96, 1.20), (0.95, 1.12))
_HIGH_N_VARIANCE_AT_UNITY = 1.30


def reference_gain_curves(high_n: bool = False) -> tuple[GainCurve, GainCurve]:
    """Variance-vs-gain curves standing in for the measured ones.

    The curvature and slope come from the model at the published operating
    point; the offset is moved so the curves pass through the measured
    variances (1.20 at g_X = 0.96, 1.12 at g_P = 0.95) for inputs with
    ``n <= 20``, and through 1.30 at unity gain for the high-photon-number
    set, whose fidelity saturates near 0.555.
    """
    p = ProtocolParams.published()
    cX, cP = variance_gain_curve(p, "X"), variance_gain_curve(p, "P")
    if high_n:
        v = _HIGH_N_VARIANCE_AT_UNITY
        return GainCurve.through(cX.a, cX.b, (1.0, v)), GainCurve.through(cP.a, cP.b, (1.0, v))
    (gx, vx), (gp, vp) = _LOW_N_ANCHORS
    return GainCurve.through(cX.a, cX.b, (gx, vx)), GainCurve.through(cP.a, cP.b, (gp, vp))


def fidelity_table(widths=tuple(PUBLISHED_FIDELITIES)) -> list[dict]:
    """Optimized model fidelity next to the measured and classical values."""
    from .fidelity import classical_benchmark, optimize_gains

    rows = []
    for n in widths:
        cX, cP = reference_gain_curves(high_n=n > HIGH_N_THRESHOLD)
        gX, gP, F = optimize_gains(float(n), cX, cP)
        F_class = classical_benchmark(float(n))
        rows.append({
            "n_avg": n,
            "F_published": PUBLISHED_FIDELITIES.get(n),
            "F_class": F_class,
            "F_model": F,
            "g_X": gX,
            "g_P": gP,
            "beats_classical": bool(F > F_class),
        })
    return rows


# Qubit fidelity of the protocol -----------------------------------------

def protocol_qubit_fidelity(kappa: float = 1.0, epsilon: float = 0.0, decay_factor: float = 1.0,
                            electronic_noise: float = 0.0, mapping: str = "kernel",
                            bounds=(0.0, 1.5)):
    """Qubit fidelity of the protocol channel at its best gain.

    The channel gain is ``d g`` and its variance ``d^2 var(g) + (1 - d^2)/2``
    with ``d`` the decay factor and ``var(g)`` the average of the two
    quadrature curves.

    Returns
    -------
    F_q : float
    g : float
        Feedback gain achieving it.
    channel : QubitChannel
    """
    if not 0 < decay_factor <= 1:
        raise ValueError("decay_factor must lie in (0, 1]")
    p = ProtocolParams(kappa=kappa, epsilon=epsilon, electronic_noise=electronic_noise)
    cx, cp = variance_gain_curve(p, "X"), variance_gain_curve(p, "P")
    d2 = decay_factor**2

    def channel(g):
        v = 0.5 * (cx.variance(g) + cp.variance(g))
        return QubitChannel.from_variance(d2 * v + (1 - d2) * VACUUM_VARIANCE, decay_factor * g, mapping)

    def loss(g):
        try:
            return -qubit_fidelity(channel(g))
        except ValueError:
            return 1.0

    res = optimize.minimize_scalar(loss, bounds=bounds, method="bounded", options={"xatol": 1e-10})
    if not res.success:
        raise ConvergenceError(f"gain search did not converge: {res.message}")
    g = float(res.x)
    ch = channel(g)
    return qubit_fidelity(ch), g, ch


# Multimode protocol -------------------------------------------------------

@dataclass(frozen=True)
class ModeGains:
    """Weights ``g_n`` of the temporal modes ``n = 0..n_max`` that define the input mode."""

    values: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
            raise ValueError("gains must be a non-empty finite vector")
        if abs(float(v @ v) - 1.0) > 1e-10:
            raise ValueError(f"gains must have unit norm, got {np.sqrt(v @ v):.12g}")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def normalized(cls, values) -> "ModeGains":
        v = np.asarray(values, dtype=float)
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("cannot normalize a zero vector")
        return cls(tuple(v / n))

    @property
    def n_max(self) -> int:
        return len(self.values) - 1

    def as_array(self) -> np.ndarray:
        return np.array(self.values)

    def envelope(self, t):
        """``A(t) = sum g_n sqrt(2n+1) P_n(2t-1)`` on ``t in [0, 1]``; unit square integral."""
        x = 2 * np.asarray(t, dtype=float) - 1
        return sum(g * np.sqrt(2 * n + 1) * eval_legendre(n, x) for n, g in enumerate(self.values))

    def envelope_samples(self, n_points: int = 201) -> np.ndarray:
        t = np.linspace(0.0, 1.0, n_points)
        return np.column_stack([t, self.envelope(t)])


def improved_noise_quadratics(kappa: float, squeeze_db: float, n_max: int):
    """Added noise of each teleported quadrature as ``g^T A g + 2 b^T g + c``.

    The residuals ``X_tele - Y`` and ``P_tele - Q`` of the multimode protocol
    are linear in the post-interaction variables with weights set by the
    gains.  Modes up to ``n_max + 1`` are simulated so that every mode that
    carries a gain sees its full coupling.

    Returns
    -------
    (A_X, b_X, c_X), (A_P, b_P, c_P)
    """
    n_modes = n_max + 2
    labels = multimode_labels(n_modes)
    ix = {lab: i for i, lab in enumerate(labels)}
    f = squeeze_factor(squeeze_db)
    var0 = np.array([
        VACUUM_VARIANCE if lab in ("X_A", "P_A")
        else VACUUM_VARIANCE * (f if lab.startswith("y") else 1 / f)
        for lab in labels
    ])
    S = multimode_matrix(kappa, n_modes)
    C = S @ np.diag(var0) @ S.T
    out = []
    for atom, terms in (("X_A", (("y_s", 1.0), ("q_c", -1.0))),
                        ("P_A", (("y_c", -1.0), ("q_s", -1.0)))):
        e = np.zeros(len(labels))
        e[ix[atom]] = 1.0
        W = np.zeros((len(labels), n_max + 1))
        for n in range(n_max + 1):
            for name, sgn in terms:
                W[ix[f"{name}_{n}"], n] = sgn / _R2
        out.append((W.T @ C @ W, W.T @ C @ e, float(e @ C @ e)))
    return tuple(out)


def improved_protocol_fidelity(kappa: float, squeeze_db: float, gains: ModeGains) -> float:
    """Fidelity of the multimode protocol at unity displacement gain."""
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    g = gains.as_array()
    (AX, bX, cX), (AP, bP, cP) = improved_noise_quadratics(kappa, squeeze_db, gains.n_max)
    vX = VACUUM_VARIANCE + g @ AX @ g + 2 * bX @ g + cX
    vP = VACUUM_VARIANCE + g @ AP @ g + 2 * bP @ g + cP
    return float(coherent_fidelity(vX, vP))


def sphere_quadratic_min(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimize ``g^T A g + 2 b^T g`` over the unit sphere.

    Stationary points satisfy ``(A - lam I) g = -b``; the global minimum has
    ``lam <= lambda_min(A)``.  The multiplier is found from the secular
    equation, with the degenerate ("hard") case handled explicitly.
    """
    w, U = np.linalg.eigh(A)
    beta = U.T @ b
    lam_min = w[0]
    nb = float(np.linalg.norm(b))
    scale = max(1.0, float(np.max(np.abs(w))))
    tol = 1e-13 * scale
    if nb < tol:
        return U[:, 0]

    def secular(lam):
        return float(np.sum(beta**2 / (w - lam) ** 2) - 1.0)

    gap = np.isclose(w, lam_min, rtol=0, atol=1e-12 * scale)
    if np.all(np.abs(beta[gap]) < 1e-12 * max(nb, 1.0)):
        # hard case candidate: check the limit lam -> lam_min
        rest = ~gap
        g_part = np.zeros_like(b)
        if np.any(rest):
            g_part = -U[:, rest] @ (beta[rest] / (w[rest] - lam_min))
        rem = 1.0 - float(g_part @ g_part)
        if rem >= 0:
            return g_part + np.sqrt(rem) * U[:, np.flatnonzero(gap)[0]]
    lo = lam_min - nb - 1.0
    # approach lam_min until the secular function turns positive
    step = nb
    while secular(lam_min - step) < 0 and step > 1e-300:
        step *= 0.5
    hi = lam_min - step
    lam = optimize.brentq(secular, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    g = -U @ (beta / (w - lam))
    return g / np.linalg.norm(g)


class ImprovedResult(NamedTuple):
    gains: ModeGains
    fidelity: float
    envelope: np.ndarray  # columns t, A(t)


def optimize_mode_gains(kappa: float, squeeze_db: float = 0.0, n_max: int = 3,
                        n_points: int = 201, maxiter: int = 2000) -> ImprovedResult:
    """Unit-norm mode gains maximizing :func:`improved_protocol_fidelity`.

    The summed added noise of both quadratures is minimized exactly on the
    sphere; the product form of the fidelity is then polished locally.
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    (AX, bX, cX), (AP, bP, cP) = improved_noise_quadratics(kappa, squeeze_db, n_max)
    g0 = sphere_quadratic_min(AX + AP, bX + bP)

    def neg_log_f(u):
        g = u / np.linalg.norm(u)
        vX = VACUUM_VARIANCE + g @ AX @ g + 2 * bX @ g + cX
        vP = VACUUM_VARIANCE + g @ AP @ g + 2 * bP @ g + cP
        return 0.5 * np.log((1 + 2 * vX) * (1 + 2 * vP))

    res = optimize.minimize(neg_log_f, g0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": maxiter})
    g = res.x / np.linalg.norm(res.x) if res.fun <= neg_log_f(g0) else g0
    if not np.all(np.isfinite(g)):
        raise ConvergenceError("mode-gain optimization produced non-finite gains")
    if not res.success and res.fun > neg_log_f(g0) + 1e-12:
        raise ConvergenceError(f"mode-gain optimization failed: {res.message}")
    gains = ModeGains.normalized(g)
    F = improved_protocol_fidelity(kappa, squeeze_db, gains)
    return ImprovedResult(gains, F, gains.envelope_samples(n_points))
