"""Gaussian simulation of continuous-variable teleportation of light onto atoms."""

from .exceptions import (
    CalibrationError,
    ConvergenceError,
    InvalidStateError,
    NyquistError,
    TeleportError,
    UnphysicalReconstructionError,
)
from .fidelity import (
    ErrorBudget,
    GainCurve,
    QubitChannel,
    VarianceGainRegressor,
    best_classical_transfer,
    classical_benchmark,
    ensemble_fidelity,
    error_budget,
    fit_variance_vs_gain,
    optimize_gains,
    qubit_fidelity,
)
from .gaussian_core import (
    CoherentSpec,
    ModeState,
    SystemState,
    make_coherent,
    make_squeezed_vacuum,
    make_vacuum,
    overlap_fidelity,
    sample,
)
from .interaction import (
    CouplingParams,
    HigherModeState,
    NoiseParams,
    apply_loss,
    compute_kappa,
    entangling_pass,
    higher_order_pass,
    two_cell_pass,
)
from .signal import (
    CalibrationLine,
    PhotocurrentTrace,
    lockin_demodulate,
    projection_noise_scan,
    shot_noise_scan,
    synthesize_photocurrent,
)
from .teleportation import (
    BellOutcome,
    EnsembleStats,
    FeedbackSignal,
    ModeGains,
    ProtocolParams,
    RunRecord,
    apply_feedback,
    bell_measurement,
    improved_protocol_fidelity,
    optimize_mode_gains,
    run_ensemble,
    run_teleportation,
)
from .verification import (
    GainSlopeEstimator,
    TomographicReconstructor,
    VerifyOutcome,
    decay_means,
    estimate_gain_slope,
    reconstruct_variances,
    tomographic_reconstruct,
    verifying_readout,
)

__version__ = "0.1.0"
