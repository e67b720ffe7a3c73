"""Command-line front end: simulation, estimation, information computation,
and limit-theory verification runs bound to config files and structured
outputs.

Settings come from an INI-style config file section matching the subcommand
(plus an optional [common] section), overridden by repeatable --set k=v
flags; every run writes a manifest echoing the fully resolved settings and
seed, so any run is reproducible from its manifest alone.  Output files are
written atomically.

Exit codes enumerate failure classes:
    0  success; every assertion checked by the invoked experiment passed
    1  an experiment assertion failed (KS below threshold, decay envelope)
    2  invalid usage or configuration
    3  I/O failure
    4  numerical failure (degenerate design, non-convergence, quadrature)
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from .fbm import Grid, Seed, write_path_csv
from .fisher import (
    CovEstimate,
    QuadratureConvergenceError,
    RouteDisagreementError,
    assemble_fisher,
    estimate_cov_mc,
    estimate_mean_grads_mc,
    fisher_nonzero_mean,
    fisher_zero_mean,
    fou_fisher_closed,
    fou_spectral_cov,
)
from .lanlab import (
    ExperimentConfig,
    ExperimentError,
    persist_report,
    run_mle_experiment,
    verify_cov_decay,
    write_errors_csv,
)
from .likelihood import (
    DegenerateDesignError,
    NonConvergenceError,
    ObservedPath,
    mle_linear,
    mle_numeric,
)
from .models import builtin_model, default_burnin, euler_solve, stationary_burnin
from .fbm import generate_fbm

__all__ = ["main", "CliConfig", "ConfigError"]

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_KS_THRESHOLD = 0.01


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""


@dataclass
class CliConfig:
    """Parsed command line: subcommand plus the sources of settings."""

    subcommand: str
    config_path: str | None
    overrides: dict
    out_dir: str
    verbosity: int
    seed: int | None
    threads: int | None


# ---------------------------------------------------------------------------
# Settings: keys, parsing, resolution
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple:
    return tuple(float(v) for v in str(text).split(","))


_KEYS: dict[str, dict] = {
    "simulate": {
        "model": str, "theta": _floats, "sigma": float, "hurst": float,
        "t": float, "dt": float, "reps": int, "seed": int,
        "burnin": float, "refine": int, "x0": str, "prefix": str,
    },
    "estimate": {
        "input": str, "model": str, "theta_init": _floats, "sigma": float,
        "hurst": float, "seed": int,
    },
    "fisher": {
        "method": str, "model": str, "theta": _floats, "sigma": float,
        "hurst": float, "lag_max": float, "n_lags": int, "reps": int,
        "dt": float, "burnin": float, "m0": int, "seed": int,
    },
    "lan-verify": {
        "model": str, "theta": _floats, "sigma": float, "hurst": float,
        "t": float, "dt": float, "reps": int, "seed": int,
        "burnin": float, "refine": int, "m0": int,
    },
    "decay": {
        "model": str, "theta": _floats, "sigma": float, "hurst": float,
        "lag_max": float, "n_lags": int, "reps": int, "dt": float,
        "burnin": float, "seed": int,
    },
}

_DEFAULTS: dict[str, dict] = {
    "simulate": {
        "model": "FOU", "theta": (1.0,), "sigma": 1.0, "hurst": 0.35,
        "t": 100.0, "dt": 0.05, "reps": 1, "seed": 1234,
        "refine": 8, "x0": "stationary", "prefix": "path",
    },
    "estimate": {"model": "FOU", "theta_init": (1.0,), "sigma": 1.0,
                 "hurst": 0.35, "seed": 1234},
    "fisher": {
        "method": "closed", "model": "FOU", "theta": (1.0,), "sigma": 1.0,
        "hurst": 0.35, "lag_max": 40.0, "n_lags": 81, "reps": 400,
        "dt": 0.05, "seed": 1234,
    },
    "lan-verify": {
        "model": "FOU", "theta": (1.0,), "sigma": 1.0, "hurst": 0.35,
        "t": 500.0, "dt": 0.05, "reps": 500, "seed": 2024, "refine": 8,
    },
    "decay": {
        "model": "FOU", "theta": (1.0,), "sigma": 1.0, "hurst": 0.35,
        "lag_max": 40.0, "n_lags": 81, "reps": 400, "dt": 0.05,
        "seed": 1234,
    },
}

_ANY_KEY = {key for spec in _KEYS.values() for key in spec}


def _read_config_file(path: str, subcommand: str) -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    raw: dict = {}
    for section in ("common", subcommand):
        if parser.has_section(section):
            for key, value in parser.items(section):
                if section == "common":
                    # The shared section may carry keys for any subcommand;
                    # only those meaningful here are applied.
                    if key not in _ANY_KEY:
                        raise ConfigError(
                            f"unknown key {key!r} in section [common] of {path}"
                        )
                    if key not in _KEYS[subcommand]:
                        continue
                elif key not in _KEYS[subcommand]:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{section}] of {path}"
                    )
                raw[key] = value
    return raw


def _resolve_settings(cli: CliConfig) -> dict:
    """File section, then --set overrides, then dedicated flags; typed."""
    spec = _KEYS[cli.subcommand]
    raw: dict = {}
    if cli.config_path is not None:
        raw.update(_read_config_file(cli.config_path, cli.subcommand))
    for key, value in cli.overrides.items():
        if key not in spec:
            raise ConfigError(
                f"unknown key {key!r} for subcommand {cli.subcommand!r}; "
                f"known keys: {sorted(spec)}"
            )
        raw[key] = value
    settings = dict(_DEFAULTS[cli.subcommand])
    for key, value in raw.items():
        parse = spec[key]
        try:
            settings[key] = parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
    if cli.seed is not None:
        settings["seed"] = cli.seed
    return settings


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------

def _write_json_atomic(payload: dict, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".json.tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _write_manifest(cli: CliConfig, settings: dict, outputs: list) -> str:
    path = os.path.join(cli.out_dir, "manifest.json")
    payload = {
        "schema": "fraclan-cli/1",
        "subcommand": cli.subcommand,
        "settings": {k: _jsonable(v) for k, v in sorted(settings.items())},
        "seed": settings.get("seed"),
        "threads": cli.threads,
        "outputs": [os.path.basename(p) for p in outputs],
    }
    _write_json_atomic(payload, path)
    return path


def _say(cli: CliConfig, message: str) -> None:
    if cli.verbosity > 0:
        print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cli: CliConfig, settings: dict) -> int:
    """Write one CSV per replication plus the manifest."""
    model = builtin_model(settings["model"])
    theta = settings["theta"]
    sigma, hurst = settings["sigma"], settings["hurst"]
    if sigma == 0.0:
        raise ConfigError("sigma must be nonzero")
    refine = settings["refine"]
    dt_f = settings["dt"] / refine
    n_obs = int(round(settings["t"] / settings["dt"]))
    fine_grid = Grid(t_start=0.0, dt=dt_f, n_points=n_obs * refine + 1)
    burnin = settings.get("burnin")
    if burnin is None:
        burnin = default_burnin(model, theta)
    outputs = []
    obs_times = settings["dt"] * np.arange(n_obs + 1)
    for r in range(settings["reps"]):
        seed = Seed(settings["seed"], r)
        if settings["x0"] == "stationary":
            state = stationary_burnin(model, theta, sigma, hurst,
                                      fine_grid, burnin, seed)
        else:
            driver = generate_fbm(fine_grid, hurst, seed)
            state = euler_solve(model, theta, sigma, float(settings["x0"]), driver)
        values = state.values[::refine]
        out_path = os.path.join(cli.out_dir, f"{settings['prefix']}_{r:04d}.csv")
        write_path_csv(out_path, obs_times, values)
        outputs.append(out_path)
    manifest = _write_manifest(cli, settings, outputs)
    _say(cli, f"wrote {len(outputs)} path files and {manifest}")
    return EXIT_OK


def _read_path_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 3:
        raise ConfigError(f"{path}: expected two-column CSV with header")
    return data[:, 0], data[:, 1]


def cmd_estimate(cli: CliConfig, settings: dict) -> int:
    """Estimate the drift parameter from a path CSV; emit JSON."""
    if "input" not in settings:
        raise ConfigError("estimate requires an input CSV (key: input)")
    times, values = _read_path_csv(settings["input"])
    dt = float(times[1] - times[0])
    steps = np.diff(times)
    if np.max(np.abs(steps - dt)) > 1e-9 * max(1.0, dt):
        raise ConfigError("input grid is not uniform")
    if abs(times[0]) > 1e-9:
        raise ConfigError("input grid must start at t = 0")
    model = builtin_model(settings["model"])
    obs = ObservedPath(
        grid=Grid(t_start=float(times[0]), dt=dt, n_points=len(times)),
        values=values, sigma=settings["sigma"], x0=float(values[0]),
    )
    theta_init = np.asarray(settings["theta_init"])
    if model.theta_linear and model.param_dim == 1:
        method = "closed_form"
        _say(cli, "linear-in-theta drift: using the closed-form estimator")

        def base(x):
            return model.dtheta_a(x, theta_init)[0]

        def offset(x):
            return model.a(x, theta_init) - theta_init[0] * base(x)

        theta_hat = [mle_linear(obs, base, offset_drift=offset,
                                H=settings["hurst"])]
        iterations = 0
    else:
        method = "numeric"
        result = mle_numeric(obs, model, theta_init, H=settings["hurst"])
        theta_hat = result.theta.tolist()
        iterations = result.iterations
    out_path = os.path.join(cli.out_dir, "estimate.json")
    _write_json_atomic({
        "model": settings["model"],
        "H": settings["hurst"],
        "sigma": settings["sigma"],
        "input": settings["input"],
        "method": method,
        "iterations": iterations,
        "theta_hat": theta_hat,
    }, out_path)
    _write_manifest(cli, settings, [out_path])
    _say(cli, f"theta_hat = {theta_hat} ({method})")
    return EXIT_OK


def cmd_fisher(cli: CliConfig, settings: dict) -> int:
    """Information matrix by the requested method; emit JSON."""
    method = settings["method"]
    theta = settings["theta"]
    sigma, hurst = settings["sigma"], settings["hurst"]
    diagnostics: dict = {}
    if method == "closed":
        if settings["model"].upper() != "FOU":
            raise ConfigError("closed-form information exists only for FOU")
        info = [[fou_fisher_closed(theta[0])]]
    elif method == "spectral":
        if settings["model"].upper() != "FOU":
            raise ConfigError("spectral covariance exists only for FOU")
        lags = np.linspace(0.0, settings["lag_max"], settings["n_lags"])
        curve = [fou_spectral_cov(theta[0], sigma, hurst, lag) for lag in lags]
        cov = CovEstimate.from_scalar(lags, curve)
        block = fisher_zero_mean(cov, hurst, sigma)
        info = block.values.tolist()
        diagnostics = {"route_mismatch": block.mismatch,
                       "direct_route": block.direct_values.tolist()}
    elif method == "mc":
        model = builtin_model(settings["model"])
        m0 = settings.get("m0")
        if m0 is None:
            m0 = {"FOU": 1, "MEAN_REVERT": 0, "SINE": 2}.get(
                settings["model"].upper())
        if m0 is None:
            raise ConfigError("set m0 for this model")
        lags = np.linspace(0.0, settings["lag_max"], settings["n_lags"])
        cov = estimate_cov_mc(model, theta, sigma, hurst, lags,
                              settings["reps"], Seed(settings["seed"], 0),
                              dt=settings["dt"],
                              burnin=settings.get("burnin"))
        zero_block = None
        if m0 > 0:
            sub = CovEstimate(lags=cov.lags, values=cov.values[:m0, :m0],
                              se=cov.se[:m0, :m0], reps=cov.reps)
            zb = fisher_zero_mean(sub, hurst, sigma)
            zero_block = zb.values
            diagnostics["route_mismatch"] = zb.mismatch
        nonzero_block = None
        if m0 < model.param_dim:
            means, means_se = estimate_mean_grads_mc(
                model, theta, sigma, hurst, settings["reps"],
                Seed(settings["seed"], 1), dt=settings["dt"],
                burnin=settings.get("burnin"))
            nonzero_block = fisher_nonzero_mean(means[m0:], hurst, sigma)
            diagnostics["mean_grads"] = means.tolist()
            diagnostics["mean_grads_se"] = means_se.tolist()
        matrix = assemble_fisher(zero_block, nonzero_block, m0)
        info = matrix.values.tolist()
        diagnostics["min_eigenvalue"] = matrix.min_eigenvalue()
    else:
        raise ConfigError(f"unknown method {method!r}; use closed|spectral|mc")
    out_path = os.path.join(cli.out_dir, "fisher.json")
    _write_json_atomic({
        "H": hurst,
        "theta": list(theta),
        "method": method,
        "I": info,
        "diagnostics": diagnostics,
    }, out_path)
    _write_manifest(cli, settings, [out_path])
    _say(cli, f"I = {info} ({method})")
    return EXIT_OK


def cmd_lan_verify(cli: CliConfig, settings: dict) -> int:
    """Run the MLE experiment; emit report JSON + errors CSV."""
    cfg = ExperimentConfig(
        model=settings["model"], theta_star=settings["theta"],
        sigma=settings["sigma"], H=settings["hurst"], T=settings["t"],
        dt=settings["dt"], reps=settings["reps"], seed=settings["seed"],
        burnin=settings.get("burnin"), kind="mle",
        euler_refine=settings["refine"], m0=settings.get("m0"),
    )
    report = run_mle_experiment(cfg)
    report_path = os.path.join(cli.out_dir, "lan_report.json")
    errors_path = os.path.join(cli.out_dir, "errors.csv")
    persist_report(report, report_path)
    write_errors_csv(report, errors_path)
    _write_manifest(cli, settings, [report_path, errors_path])
    _say(cli, f"variance={report.variance} ks_pvalue={report.ks_pvalue}")
    if report.ks_pvalue is not None and report.ks_pvalue <= _KS_THRESHOLD:
        print(f"lan-verify: KS p-value {report.ks_pvalue:.4g} at or below "
              f"{_KS_THRESHOLD}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_decay(cli: CliConfig, settings: dict) -> int:
    """Estimate covariance decay and check the envelope; emit JSON + CSV."""
    model = builtin_model(settings["model"])
    lags = np.linspace(0.0, settings["lag_max"], settings["n_lags"])
    cov = estimate_cov_mc(model, settings["theta"], settings["sigma"],
                          settings["hurst"], lags, settings["reps"],
                          Seed(settings["seed"], 0), dt=settings["dt"],
                          burnin=settings.get("burnin"))
    fit = verify_cov_decay(cov, settings["hurst"])
    cov_path = os.path.join(cli.out_dir, "cov.csv")
    m = cov.param_dim
    with open(cov_path, "w", newline="") as fh:
        header = ["lag"]
        for i in range(m):
            for j in range(m):
                header += [f"c_{i + 1}{j + 1}", f"se_{i + 1}{j + 1}"]
        fh.write(",".join(header) + "\n")
        for l, lag in enumerate(cov.lags):
            row = [repr(float(lag))]
            for i in range(m):
                for j in range(m):
                    row += [repr(float(cov.values[i, j, l])),
                            repr(float(cov.se[i, j, l]))]
            fh.write(",".join(row) + "\n")
    out_path = os.path.join(cli.out_dir, "decay.json")
    _write_json_atomic({
        "H": settings["hurst"],
        "model": settings["model"],
        "slope": fit.slope,
        "envelope": fit.envelope,
        "passes": fit.passes,
        "status": fit.status,
        "n_qualifying": fit.n_qualifying,
    }, out_path)
    _write_manifest(cli, settings, [out_path, cov_path])
    _say(cli, f"slope={fit.slope} envelope={fit.envelope} status={fit.status}")
    if fit.status == "ok" and not fit.passes:
        print(f"decay: fitted slope {fit.slope:.3f} above envelope "
              f"{fit.envelope:.3f}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


_DISPATCH = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "fisher": cmd_fisher,
    "lan-verify": cmd_lan_verify,
    "decay": cmd_decay,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraclan",
        description="Drift estimation and limit-theory verification for "
                    "SDEs driven by rough fractional noise.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _DISPATCH:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override one setting (repeatable)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--threads", type=int,
                       help="worker thread cap (recorded in the manifest)")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _parse_overrides(pairs: list) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects k=v, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cli = CliConfig(
            subcommand=args.subcommand,
            config_path=args.config,
            overrides=_parse_overrides(args.set),
            out_dir=args.out,
            verbosity=args.verbose,
            seed=args.seed,
            threads=args.threads,
        )
        if cli.threads is not None:
            os.environ["OMP_NUM_THREADS"] = str(cli.threads)
            os.environ["OPENBLAS_NUM_THREADS"] = str(cli.threads)
        os.makedirs(cli.out_dir, exist_ok=True)
        settings = _resolve_settings(cli)
        return _DISPATCH[cli.subcommand](cli, settings)
    except (DegenerateDesignError, NonConvergenceError, ExperimentError,
            QuadratureConvergenceError, RouteDisagreementError,
            FloatingPointError) as exc:
        print(f"fraclan: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"fraclan: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"fraclan: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
