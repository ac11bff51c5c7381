"""Command-line harness: simulations, calibrations and reference tables.

Settings are resolved in this order, later entries winning:
built-in defaults, the published preset (``"preset": "published"``), the
JSON file given with ``--config``, and explicit command-line flags.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path
from typing import Literal, Optional

import click
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import TeleportError
from .fidelity import (
    ErrorBudget,
    QubitChannel,
    best_classical_transfer,
    error_budget,
    qubit_fidelity,
)
from .gaussian_core import CoherentSpec
from .interaction import CouplingParams, compute_kappa
from .signal import projection_noise_scan, shot_noise_scan
from .streams import SEED_ENV_VAR, default_seed
from .teleportation import (
    RUN_COLUMNS,
    ProtocolParams,
    fidelity_table,
    optimize_mode_gains,
    protocol_qubit_fidelity,
    run_ensemble,
)

PROTOCOL_FIELDS = ("kappa", "g_X", "g_P", "epsilon", "beta", "tau", "squeeze_db",
                   "n_max", "electronic_noise", "admix_noise")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CouplingConfig(_Strict):
    a1: float = Field(gt=0)
    N_ph: float = Field(ge=0)
    N_at: float = Field(ge=0)
    sigma: float = Field(gt=0)
    Gamma: float = Field(gt=0)
    A: float = Field(gt=0)
    Delta: float = Field(gt=0)
    F_hf: float = Field(4.0, gt=0)


class InputConfig(_Strict):
    """Either a fixed coherent state or a Gaussian prior of width ``prior_n``."""

    n_bar: Optional[float] = Field(None, ge=0)
    phase: float = 0.0
    prior_n: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def _one_kind(self):
        if self.n_bar is not None and self.prior_n is not None:
            raise ValueError("give either n_bar or prior_n, not both")
        if self.n_bar is None and self.prior_n is None:
            self.n_bar = 5.0
        return self


class RunConfig(_Strict):
    """Validated run configuration; unknown keys are rejected."""

    preset: Literal["none", "published"] = "none"
    kappa: Optional[float] = Field(None, ge=0)
    coupling: Optional[CouplingConfig] = None
    g_X: float = 1.0
    g_P: float = 1.0
    epsilon: float = Field(0.0, ge=0, lt=1)
    beta: float = Field(0.0, ge=0)
    tau: float = Field(0.0, ge=0)
    squeeze_db: float = Field(0.0, ge=0)
    n_max: int = Field(3, ge=1)
    electronic_noise: float = Field(0.0, ge=0)
    admix_noise: bool = True
    input: InputConfig = Field(default_factory=InputConfig)
    runs: int = Field(10_000, ge=2)
    seed: Optional[int] = None
    workers: Optional[int] = Field(None, ge=1)
    out: str = "out"
    reconstruction_constant: Literal["split", "unsplit"] = "split"

    @model_validator(mode="after")
    def _kappa_source(self):
        if self.kappa is not None and self.coupling is not None:
            raise ValueError("give either kappa or coupling, not both")
        return self

    def protocol(self) -> ProtocolParams:
        explicit = {k: getattr(self, k) for k in PROTOCOL_FIELDS if k in self.model_fields_set}
        if self.coupling is not None:
            explicit["kappa"] = compute_kappa(CouplingParams(**self.coupling.model_dump()))
        if self.preset == "published":
            return ProtocolParams.published(**explicit)
        values = {k: getattr(self, k) for k in PROTOCOL_FIELDS}
        values.update(explicit)
        if values["kappa"] is None:
            values["kappa"] = 1.0
        return ProtocolParams(**values)

    def resolved_seed(self) -> int:
        return default_seed() if self.seed is None else self.seed


class ConfigError(click.UsageError):
    """Raised for invalid configuration; click maps it to exit code 2."""


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("n_bar", "phase", "prior_n"):
            inp = dict(data.get("input", {}))
            if key == "n_bar":
                inp.pop("prior_n", None)
            if key == "prior_n":
                inp.pop("n_bar", None)
            inp[key] = value
            data["input"] = inp
        else:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_to_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _outdir(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def common_options(f):
    """Options shared by every subcommand."""
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="JSON run configuration."),
        click.option("--seed", type=int, default=None,
                     help=f"Master seed (default: ${SEED_ENV_VAR} or built-in)."),
        click.option("--runs", type=int, default=None, help="Number of simulated runs."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--workers", type=int, default=None, help="Parallel workers (default: all cores)."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _guard(fn):
    """Map numerical failures to exit code 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit):
            raise
        except (TeleportError, ArithmeticError, RuntimeError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Simulate teleportation of light onto an atomic ensemble."""


@main.command()
@common_options
@click.option("--preset", type=click.Choice(["none", "published"]), default=None)
@click.option("--kappa", type=float, default=None)
@click.option("--g-x", "g_X", type=float, default=None)
@click.option("--g-p", "g_P", type=float, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--n-bar", type=float, default=None, help="Fixed coherent input.")
@click.option("--phase", type=float, default=None)
@click.option("--prior-n", type=float, default=None, help="Gaussian prior of this width.")
@click.option("--contour/--no-contour", default=True, help="Also write a contour grid CSV.")
@_guard
def simulate(config_path, seed, runs, out, workers, contour, **kw):
    """Run the protocol and write runs.csv and summary.json."""
    cfg = load_config(config_path, dict(seed=seed, runs=runs, out=out, workers=workers, **kw))
    params = cfg.protocol()
    inp = cfg.input
    stats = run_ensemble(
        params, cfg.runs, seed=cfg.resolved_seed(),
        input_state=None if inp.prior_n is not None else CoherentSpec(inp.n_bar, inp.phase),
        prior_n=inp.prior_n, n_jobs=cfg.workers, constant=cfg.reconstruction_constant,
    )
    d = _outdir(cfg)
    table = stats.table()
    _write_csv(d / "runs.csv", RUN_COLUMNS, ([int(r[0])] + list(r[1:]) for r in table))
    summary = stats.summary()
    summary["config"] = cfg.model_dump(mode="json")
    summary["protocol"] = {k: getattr(params, k) for k in PROTOCOL_FIELDS}
    summary["error_budget"] = {"low_n": error_budget(ErrorBudget.published()),
                               "high_n": error_budget(ErrorBudget.published(high_n=True))}
    _write_json(d / "summary.json", summary)
    if contour:
        _write_contour(d / "contour.csv", stats, inp.prior_n if inp.prior_n is not None else inp.n_bar)
    click.echo(json.dumps(_to_jsonable({"sigma2": summary["sigma2"], "fidelity": summary["fidelity"]})))


def _write_contour(path: Path, stats, n_avg: float, half_width: float = 3.0, n_grid: int = 61):
    """Gaussian densities of the teleported and best classically transferred states."""
    mX = float(np.mean(stats.columns["X_tele"] - stats.params.g_X * stats.columns["Y_in"]))
    mP = float(np.mean(stats.columns["P_tele"] - stats.params.g_P * stats.columns["Q_in"]))
    _, v_cl = best_classical_transfer(n_avg)
    x = np.linspace(-half_width, half_width, n_grid)
    X, P = np.meshgrid(x, x, indexing="ij")

    def density(vx, vp, mx=0.0, mp=0.0):
        return np.exp(-(X - mx) ** 2 / (2 * vx) - (P - mp) ** 2 / (2 * vp)) / (2 * np.pi * np.sqrt(vx * vp))

    tele = density(stats.var_X, stats.var_P, mX, mP)
    cl = density(v_cl, v_cl)
    rows = zip(X.ravel(), P.ravel(), tele.ravel(), cl.ravel())
    _write_csv(path, ("x", "p", "teleported", "classical"), rows)


@main.command()
@common_options
@click.option("--kappa", type=float, default=0.93, show_default=True, help="Coupling at the reference atom number.")
@click.option("--traces", type=int, default=2000, show_default=True, help="Traces per shot-noise point.")
@_guard
def calibrate(config_path, seed, runs, out, workers, kappa, traces):
    """Shot-noise and projection-noise calibration scans."""
    cfg = load_config(config_path, dict(seed=seed, runs=runs, out=out, workers=workers))
    rng = np.random.Generator(np.random.PCG64(cfg.resolved_seed()))
    powers = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    shot = shot_noise_scan(powers, n_traces=traces, electronic_noise=cfg.electronic_noise, rng=rng)
    n_ref = 1.0
    atoms = np.linspace(0.0, 2.0, 6) * n_ref
    proj = projection_noise_scan(atoms, kappa, n_ref, n_samples=cfg.runs, rng=rng)
    lo, hi = proj.kappa2_ci(n_ref)
    result = {
        "shot_noise": {"slope": shot.slope, "intercept": shot.intercept, "slope_ci": shot.slope_ci,
                       "intercept_ci": shot.intercept_ci, "r_squared": shot.r_squared,
                       "residual_rms": shot.residual_rms},
        "projection_noise": {"slope": proj.line.slope, "intercept": proj.line.intercept,
                             "intercept_ci": proj.line.intercept_ci, "r_squared": proj.line.r_squared,
                             "kappa2_reference": float(proj.kappa2(n_ref)[()]),
                             "kappa2_reference_ci": [float(lo[0]), float(hi[0])],
                             "kappa2_injected": kappa**2},
        "config": cfg.model_dump(mode="json"),
    }
    d = _outdir(cfg)
    _write_json(d / "calibration.json", result)
    _write_csv(d / "shot_noise.csv", ("power", "variance"), zip(shot.x, shot.y))
    _write_csv(d / "projection_noise.csv", ("atom_number", "variance", "kappa2"),
               zip(proj.line.x, proj.line.y, proj.kappa2_points))
    click.echo(json.dumps(_to_jsonable(result["projection_noise"])))


@main.command()
@common_options
@_guard
def reproduce(config_path, seed, runs, out, workers):
    """Model fidelity against the measured and classical values."""
    cfg = load_config(config_path, dict(seed=seed, runs=runs, out=out, workers=workers))
    rows = fidelity_table()
    d = _outdir(cfg)
    _write_json(d / "reproduce.json", {"rows": rows, "config": cfg.model_dump(mode="json")})
    for r in rows:
        click.echo(f"n={r['n_avg']:>4}  F_published={r['F_published']:.2f}  F_class={r['F_class']:.3f}  "
                   f"F_model={r['F_model']:.3f}  {'PASS' if r['beats_classical'] else 'FAIL'}")


@main.command()
@common_options
@click.option("--kappa", type=float, default=2.3, show_default=True)
@click.option("--squeeze-db", type=float, default=6.0, show_default=True)
@click.option("--n-max", type=int, default=3, show_default=True)
@_guard
def improved(config_path, seed, runs, out, workers, kappa, squeeze_db, n_max):
    """Optimize the multimode protocol; write gains and the input envelope."""
    cfg = load_config(config_path, dict(seed=seed, runs=runs, out=out, workers=workers))
    res = optimize_mode_gains(kappa, squeeze_db, n_max)
    d = _outdir(cfg)
    _write_csv(d / "envelope.csv", ("t", "A"), res.envelope)
    _write_json(d / "improved.json", {"kappa": kappa, "squeeze_db": squeeze_db, "n_max": n_max,
                                      "gains": res.gains.values, "fidelity": res.fidelity})
    click.echo(json.dumps({"gains": list(res.gains.values), "fidelity": res.fidelity}))


@main.command()
@common_options
@click.option("--kappa", type=float, default=1.0, show_default=True)
@click.option("--epsilon", type=float, default=None)
@click.option("--decay", type=float, default=1.0, show_default=True, help="Mean-spin decay factor.")
@_guard
def qubit(config_path, seed, runs, out, workers, kappa, epsilon, decay):
    """Qubit fidelity of the protocol and a sweep over channel gain and noise."""
    cfg = load_config(config_path, dict(seed=seed, runs=runs, out=out, workers=workers, epsilon=epsilon))
    F, g, ch = protocol_qubit_fidelity(kappa, cfg.epsilon, decay, cfg.electronic_noise)
    gains = np.linspace(0.5, 1.2, 15)
    noises = np.linspace(0.0, 0.5, 11)
    rows = []
    for gg in gains:
        for s2 in noises:
            ch = QubitChannel(gg, s2)
            # amplifying channels below the noise floor are unphysical
            cp = ch.is_completely_positive
            rows.append((gg, s2, int(cp), qubit_fidelity(ch) if cp else float("nan")))
    d = _outdir(cfg)
    _write_csv(d / "qubit_sweep.csv", ("g", "s2", "physical", "F_q"), rows)
    _write_json(d / "qubit.json", {"kappa": kappa, "epsilon": cfg.epsilon, "decay": decay,
                                   "F_q": F, "gain": g, "channel_gain": ch.g, "s2": ch.s2})
    click.echo(json.dumps({"F_q": F, "gain": g, "s2": ch.s2}))


if __name__ == "__main__":  # pragma: no cover
    main()
