"""Monte Carlo verification harness for the limit-theory predictions.

Experiments simulate stationary paths, estimate the drift parameter on each
replication, and compare normalized errors, quadratic likelihood terms, and
score statistics against their predicted Gaussian limits.  The harness also
decomposes the likelihood gradient path into its three characteristic parts
and fits the covariance decay exponent.  Reports are plain-data records
with a versioned JSON schema.

Replications are driven by per-replication seeds (master, index), so results
are independent of batching and identical configs reproduce identical
numeric payloads (wall-clock runtime aside).
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import stats
from scipy.linalg import cholesky, solve_triangular, toeplitz
from scipy.signal import fftconvolve

from .fbm import Grid, Seed, fgn_autocov, generate_fgn_matrix
from .fracops import FuncPath, SingularQuadrature, make_constants
from .likelihood import (
    DegenerateDesignError,
    NonConvergenceError,
    ObservedPath,
    mle_linear,
    mle_numeric,
)
from .models import DriftModel, _euler_core, builtin_model, default_burnin, zero_drift_stub
from .fisher import CovEstimate, fisher_nonzero_mean, fou_fisher_closed, kappa

__all__ = [
    "ExperimentConfig",
    "LanReport",
    "QuadraticTermResult",
    "ScoreCltResult",
    "GammaParts",
    "DecayFit",
    "ExperimentError",
    "ReportSchemaError",
    "run_mle_experiment",
    "verify_quadratic_term",
    "verify_score_clt",
    "gamma_decompose",
    "verify_cov_decay",
    "persist_report",
    "load_report",
    "write_errors_csv",
]

_SCHEMA = "lanlab/1"
_LAN_KINDS = ("mle", "quadratic", "score")
_KINDS = _LAN_KINDS + ("decay", "simulate")

# which parameter components have vanishing stationary mean gradient, by
# model: FOU's -x has mean 0, MEAN_REVERT's constant 1 does not, SINE's -x
# and sin x both average to 0 over the symmetric stationary law.
_DEFAULT_M0 = {"FOU": 1, "MEAN_REVERT": 0, "SINE": 2, "ZERO_STUB": 1}


class ExperimentError(RuntimeError):
    """Too many replications failed for the experiment to stand."""


class ReportSchemaError(ValueError):
    """Persisted report does not carry the expected schema version."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: model, true parameter, grid, replication budget.

    dt is the observation step; simulation runs at dt / euler_refine and is
    subsampled, which keeps integrator bias well below estimator noise at
    the default refinement.  burnin None means the model's default horizon.
    """

    model: str
    theta_star: tuple
    sigma: float
    H: float
    T: float
    dt: float
    reps: int
    seed: int
    burnin: float | None = None
    kind: str = "mle"
    euler_refine: int = 8
    m0: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "theta_star",
            tuple(float(v) for v in np.atleast_1d(self.theta_star))
        )
        if self.kind not in _KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.sigma == 0.0:
            raise ValueError("sigma must be nonzero")
        if self.kind in _LAN_KINDS:
            if not 0.25 < self.H < 0.5:
                raise ValueError(
                    f"H={self.H} outside (1/4, 1/2) required for kind {self.kind!r}"
                )
        elif not 0.0 < self.H < 0.5:
            raise ValueError(f"H={self.H} outside (0, 1/2)")
        ratio = self.T / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("T must be an integer multiple of dt")
        if self.reps < 1:
            raise ValueError("need at least one replication")
        if self.euler_refine < 1:
            raise ValueError("euler_refine must be a positive integer")
        if self.burnin is not None and self.burnin <= 0:
            raise ValueError("burnin must be positive when given")

    # -- derived quantities -------------------------------------------------

    def model_obj(self) -> DriftModel:
        if self.model.upper() == "ZERO_STUB":
            return zero_drift_stub()
        return builtin_model(self.model)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def obs_grid(self) -> Grid:
        return Grid(t_start=0.0, dt=self.dt, n_points=self.n_steps + 1)

    def burnin_value(self) -> float:
        if self.burnin is not None:
            return self.burnin
        return default_burnin(self.model_obj(), self.theta_star)

    def m0_value(self) -> int:
        if self.m0 is not None:
            return self.m0
        name = self.model.upper()
        if name not in _DEFAULT_M0:
            raise ValueError(f"no default m0 for model {name!r}; set m0")
        return _DEFAULT_M0[name]

    def rep_seed(self, replication: int) -> Seed:
        return Seed(self.seed, replication)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta_star"] = list(self.theta_star)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        d["theta_star"] = tuple(d["theta_star"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _simulate_observations(cfg: ExperimentConfig, chunk: int = 64) -> np.ndarray:
    """(reps, n_steps + 1) stationary observations on the coarse grid.

    Each replication has its own fGn stream from (master seed, index);
    integration runs at dt / euler_refine from the pullback start -burnin
    and the [0, T] part is subsampled to the observation grid.
    """
    model = cfg.model_obj()
    theta = np.asarray(cfg.theta_star)
    fine = cfg.euler_refine
    dt_f = cfg.dt / fine
    n_fine = cfg.n_steps * fine
    n_burn = int(round(cfg.burnin_value() / dt_f))
    n_tot = n_burn + n_fine
    out = np.empty((cfg.reps, cfg.n_steps + 1))
    for start in range(0, cfg.reps, chunk):
        stop = min(start + chunk, cfg.reps)
        incr = np.vstack([
            generate_fgn_matrix(n_tot, dt_f, cfg.H, cfg.rep_seed(r), 1)
            for r in range(start, stop)
        ])
        paths = _euler_core(model, theta, cfg.sigma, 0.0, incr, dt_f)
        out[start:stop] = paths[:, n_burn:][:, ::fine]
    return out


def _quad_table(cfg: ExperimentConfig) -> SingularQuadrature:
    # float32 tables: at desk-scale grids the weight-matrix products carry
    # ~1e-6 relative error, far below Monte Carlo noise, at half the memory
    return SingularQuadrature(cfg.n_steps, cfg.dt, cfg.H, dtype=np.float32)


def _builtin_information(model: DriftModel, theta: np.ndarray, sigma: float,
                         H: float) -> np.ndarray | None:
    """Known limiting information for the built-in models, else None."""
    if model.name == "FOU":
        return np.array([[fou_fisher_closed(theta[0])]])
    if model.name == "MEAN_REVERT":
        return fisher_nonzero_mean([1.0], H, sigma)
    if model.name == "ZERO_STUB":
        return np.zeros((1, 1))
    return None


def _rate_scale(cfg: ExperimentConfig, m: int) -> np.ndarray:
    """T^{-kappa_i}: multiplying raw errors by this applies phi_T^{-1}."""
    m0 = cfg.m0_value()
    return np.array([cfg.T ** -kappa(i + 1, m0, cfg.H) for i in range(m)])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class LanReport:
    """Plain-data experiment record (JSON-portable, schema-versioned).

    runtime_s is informational; determinism guarantees cover every other
    field.  Optional sections are None when the producing operation does
    not fill them.
    """

    schema: str
    kind: str
    config: dict
    seed: int
    n_requested: int
    n_included: int
    n_excluded: int
    failures: list
    normalized_errors: list
    mean: list | None
    variance: list | None
    variance_undefined: bool
    ks_stat: float | None
    ks_pvalue: float | None
    target_information: list | None
    info_samples: list | None
    info_target: list | None
    decay_slope: float | None
    decay_status: str | None
    runtime_s: float

    def __post_init__(self) -> None:
        if self.n_included + self.n_excluded != self.n_requested:
            raise ValueError("replication accounting does not add up")
        flat: list[float] = [self.runtime_s]
        for row in self.normalized_errors:
            flat.extend(row)
        for block in (self.mean, self.variance):
            if block is not None:
                flat.extend(block)
        for scalar in (self.ks_stat, self.ks_pvalue, self.decay_slope):
            if scalar is not None:
                flat.append(scalar)
        if not np.all(np.isfinite(flat)):
            raise ValueError("non-finite numeric field in report")


def persist_report(report: LanReport, path) -> None:
    """Write the report as JSON, atomically."""
    payload = asdict(report)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".json.tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_report(path) -> LanReport:
    """Read a persisted report back; schema version must match."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != _SCHEMA:
        raise ReportSchemaError(
            f"expected schema {_SCHEMA!r}, found {payload.get('schema')!r}"
        )
    names = {f.name for f in fields(LanReport)}
    unknown = set(payload) - names
    if unknown:
        raise ReportSchemaError(f"unknown report fields: {sorted(unknown)}")
    return LanReport(**payload)


def write_errors_csv(report: LanReport, path) -> None:
    """Per-replication normalized errors as CSV for external plotting."""
    m = len(report.normalized_errors[0]) if report.normalized_errors else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replication"] + [f"err_{i + 1}" for i in range(m)])
        for r, row in enumerate(report.normalized_errors):
            writer.writerow([r] + list(row))


# ---------------------------------------------------------------------------
# MLE experiment
# ---------------------------------------------------------------------------

def _estimate_one(obs: ObservedPath, model: DriftModel, theta_star: np.ndarray,
                  quad: SingularQuadrature) -> np.ndarray:
    if model.theta_linear and model.param_dim == 1:
        def base(x, _m=model, _t=theta_star):
            return _m.dtheta_a(x, _t)[0]

        def offset(x, _m=model, _t=theta_star):
            return _m.a(x, _t) - _t[0] * _m.dtheta_a(x, _t)[0]

        return np.array([mle_linear(obs, base, offset_drift=offset, quad=quad)])
    result = mle_numeric(obs, model, theta_star, quad=quad)
    return result.theta


def run_mle_experiment(cfg: ExperimentConfig) -> LanReport:
    """Estimate on every replication and summarize normalized errors.

    Errors are normalized by the true-parameter rate matrix (oracle
    normalization): component i is scaled by T^{-kappa(i)}.  Failing
    replications are recorded and excluded; more than 5% failures aborts
    the experiment.  For one-parameter models with a known information
    target, a KS statistic against Normal(0, 1/I) is attached.
    """
    t0 = time.perf_counter()
    model = cfg.model_obj()
    theta_star = np.asarray(cfg.theta_star)
    m = model.param_dim
    observations = _simulate_observations(cfg)
    quad = _quad_table(cfg)
    grid = cfg.obs_grid()

    estimates: list[np.ndarray] = []
    failures: list[dict] = []
    for r in range(cfg.reps):
        obs = ObservedPath(grid=grid, values=observations[r], sigma=cfg.sigma,
                           x0=float(observations[r, 0]))
        try:
            estimates.append(_estimate_one(obs, model, theta_star, quad))
        except (DegenerateDesignError, NonConvergenceError, FloatingPointError) as exc:
            failures.append({"replication": r, "error": str(exc)})
    if len(failures) > 0.05 * cfg.reps:
        raise ExperimentError(
            f"{len(failures)} of {cfg.reps} replications failed estimation"
        )

    scale = _rate_scale(cfg, m)
    errors = (np.array(estimates).reshape(len(estimates), m) - theta_star) * scale
    n_ok = len(estimates)
    mean = errors.mean(axis=0).tolist() if n_ok else None
    degenerate = n_ok < 2
    variance = None if degenerate else errors.var(axis=0, ddof=1).tolist()

    target = _builtin_information(model, theta_star, cfg.sigma, cfg.H)
    ks_stat = ks_pvalue = None
    if m == 1 and target is not None and target[0, 0] > 0 and not degenerate:
        sd = float(np.sqrt(1.0 / target[0, 0]))
        res = stats.kstest(errors[:, 0], "norm", args=(0.0, sd))
        ks_stat, ks_pvalue = float(res.statistic), float(res.pvalue)

    return LanReport(
        schema=_SCHEMA,
        kind=cfg.kind,
        config=cfg.to_dict(),
        seed=cfg.seed,
        n_requested=cfg.reps,
        n_included=n_ok,
        n_excluded=len(failures),
        failures=failures,
        normalized_errors=errors.tolist(),
        mean=mean,
        variance=variance,
        variance_undefined=degenerate,
        ks_stat=ks_stat,
        ks_pvalue=ks_pvalue,
        target_information=None if target is None else target.tolist(),
        info_samples=None,
        info_target=None,
        decay_slope=None,
        decay_status=None,
        runtime_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Quadratic-term and score verification
# ---------------------------------------------------------------------------

def _batched_dbeta(cfg: ExperimentConfig, model: DriftModel, theta: np.ndarray,
                   observations: np.ndarray,
                   quad: SingularQuadrature) -> np.ndarray:
    """Gradient beta paths for all replications: (m, n_steps + 1, reps)."""
    coef = make_constants(cfg.H)
    n = cfg.n_steps
    t_pos = cfg.dt * np.arange(1, n + 1)
    pref = t_pos ** (cfg.H - 0.5) / (coef.bar_d_H * cfg.sigma)
    grads = model.dtheta_a(observations, theta)
    if grads.ndim == 2:
        grads = grads[None, ...]
    m = grads.shape[0]
    out = np.zeros((m, n + 1, observations.shape[0]))
    for i in range(m):
        out[i, 1:, :] = pref[:, None] * (quad.beta_matrix @ grads[i].T)
    return out


@dataclass(frozen=True)
class QuadraticTermResult:
    """Normalized quadratic-term samples against the information target."""

    samples: np.ndarray
    target: np.ndarray | None

    def mean_matrix(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def verify_quadratic_term(cfg: ExperimentConfig, theta) -> QuadraticTermResult:
    """Per replication, the normalized quadratic likelihood functional

        I_hat[i, j] = T^{kappa_i + kappa_j} int_0^T dbeta_i dbeta_j dt

    (trapezoid in time) on stationary paths simulated at cfg.theta_star.
    Its mean should approach the information target as T grows.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    model = cfg.model_obj()
    m = model.param_dim
    observations = _simulate_observations(cfg)
    quad = _quad_table(cfg)
    dbeta = _batched_dbeta(cfg, model, theta, observations, quad)
    m0 = cfg.m0_value()
    kap = np.array([kappa(i + 1, m0, cfg.H) for i in range(m)])
    samples = np.empty((cfg.reps, m, m))
    for i in range(m):
        for j in range(i, m):
            integ = np.trapezoid(dbeta[i] * dbeta[j], dx=cfg.dt, axis=0)
            samples[:, i, j] = samples[:, j, i] = cfg.T ** (kap[i] + kap[j]) * integ
    return QuadraticTermResult(
        samples=samples,
        target=_builtin_information(model, theta, cfg.sigma, cfg.H),
    )


@dataclass(frozen=True)
class ScoreCltResult:
    """Normalized score samples with their Gaussian-limit comparison."""

    samples: np.ndarray
    target: np.ndarray | None
    ks_stat: float | None
    ks_pvalue: float | None


def verify_score_clt(cfg: ExperimentConfig, theta) -> ScoreCltResult:
    """Normalized score phi_T int dbeta dW at the evaluation theta.

    The driver increments are recovered with trapezoid drift removal and
    whitened by the exact Cholesky factor of their autocovariance, which is
    the exact discrete innovation sequence of the driver.  The kernel-matrix
    transform used by the likelihood leaves its increments measurably
    correlated with the adapted integrand at practical step sizes, which
    shows up as a score mean growing like sqrt(T); the exact whitening does
    not.  The stochastic integral is a left-point sum.  For one-parameter
    models with a known target I, attaches a KS statistic against
    Normal(0, I).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    model = cfg.model_obj()
    m = model.param_dim
    observations = _simulate_observations(cfg)
    quad = _quad_table(cfg)
    dbeta = _batched_dbeta(cfg, model, theta, observations, quad)

    n = cfg.n_steps
    drift = model.a(observations, theta)
    c_int = 0.5 * (drift[:, :-1] + drift[:, 1:]) * cfg.dt
    db_rec = (np.diff(observations, axis=1) - c_int) / cfg.sigma
    acov = fgn_autocov(np.arange(n), cfg.dt, cfg.H)
    chol = cholesky(toeplitz(acov), lower=True, check_finite=False)
    dw = np.sqrt(cfg.dt) * solve_triangular(
        chol, db_rec.T, lower=True, check_finite=False
    ).T

    m0 = cfg.m0_value()
    samples = np.empty((cfg.reps, m))
    for i in range(m):
        phi = cfg.T ** kappa(i + 1, m0, cfg.H)
        samples[:, i] = phi * np.einsum("kr,rk->r", dbeta[i][:-1, :], dw)

    target = _builtin_information(model, theta, cfg.sigma, cfg.H)
    ks_stat = ks_pvalue = None
    if m == 1 and target is not None and target[0, 0] > 0 and cfg.reps >= 2:
        res = stats.kstest(samples[:, 0], "norm",
                           args=(0.0, float(np.sqrt(target[0, 0]))))
        ks_stat, ks_pvalue = float(res.statistic), float(res.pvalue)
    return ScoreCltResult(samples=samples, target=target,
                          ks_stat=ks_stat, ks_pvalue=ks_pvalue)


# ---------------------------------------------------------------------------
# Gamma decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaParts:
    """The three-way split of one gradient beta component.

    gamma1 is the deterministic mean part carrying t^{1/2-H}; gamma2 the
    centered plain-kernel integral; gamma3 the shape remainder.  All three
    are computed from the same per-cell product-integration moments, so
    their sum reproduces the gradient beta path to roundoff.
    """

    gamma1: FuncPath
    gamma2: FuncPath
    gamma3: FuncPath

    def total(self) -> np.ndarray:
        return self.gamma1.values + self.gamma2.values + self.gamma3.values


def gamma_decompose(model: DriftModel, theta, sigma: float, path, *,
                    quad: SingularQuadrature | None = None,
                    H: float | None = None,
                    mean_grads=None) -> list[GammaParts]:
    """Split each gradient beta component into its three characteristic parts.

    path must be a (near-)stationary trajectory with grid starting at 0.
    mean_grads supplies the stationary mean of each drift gradient; when
    None it is estimated by the time average along the path (ergodic
    approximation, error O(T^{H-1})).
    """
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    grid = path.grid
    if abs(grid.t_start) > 1e-12:
        raise ValueError("path grid must start at 0")
    n = grid.n_points - 1
    dt = grid.dt
    if quad is None:
        if H is None:
            raise ValueError("pass either a prebuilt quadrature table or H")
        quad = SingularQuadrature(n, dt, H)
    elif quad.n_steps != n or abs(quad.dt - dt) > 1e-12:
        raise ValueError("quadrature table does not match the path grid")
    h_exp = quad.H
    coef = make_constants(h_exp)

    grads = model.dtheta_a(path.values, theta)
    if grads.ndim == 1:
        grads = grads[None, :]
    m = grads.shape[0]
    if mean_grads is None:
        mean_grads = np.trapezoid(grads, dx=dt, axis=1) / (n * dt)
    else:
        mean_grads = np.atleast_1d(np.asarray(mean_grads, dtype=float))

    t_pos = dt * np.arange(1, n + 1)
    pref_full = t_pos ** (h_exp - 0.5) / (coef.bar_d_H * sigma)
    pref_plain = 1.0 / (coef.bar_d_H * sigma)
    row_sums = pref_full * (quad.beta_matrix @ np.ones(n + 1))

    # plain-kernel hat-function moments: cell at distance index i from the
    # target node contributes c_hi(i) to the nearer node value and c_lo(i)
    # to the farther one; exact for piecewise-linear integrands
    q = 0.5 - h_exp
    i_idx = np.arange(n, dtype=float)
    m0_mom = dt**q * ((i_idx + 1.0) ** q - i_idx**q) / q
    m1_mom = dt ** (q + 1.0) * ((i_idx + 1.0) ** (q + 1.0) - i_idx ** (q + 1.0)) / (q + 1.0)
    c_hi = (1.0 + i_idx) * m0_mom - m1_mom / dt
    c_lo = m1_mom / dt - i_idx * m0_mom

    out: list[GammaParts] = []
    for comp in range(m):
        h_vals = grads[comp]
        e_val = float(mean_grads[comp])
        full = pref_full * (quad.beta_matrix @ h_vals)
        hc = h_vals - e_val

        conv_hi = fftconvolve(c_hi, hc)[: n + 1]
        conv_lo = fftconvolve(c_lo, hc)[:n]
        # conv_hi[k] carries a spurious i = k term (the cell beyond t_k)
        # whenever k < n; remove it before assembling the node sums
        spur = np.zeros(n)
        spur[: n - 1] = c_hi[1:] * hc[0]
        core = conv_hi[1:] - spur + conv_lo

        g1 = np.concatenate([[0.0], e_val * row_sums])
        g2 = np.concatenate([[0.0], pref_plain * core])
        g3 = np.concatenate([[0.0], full]) - g1 - g2
        out.append(GammaParts(
            gamma1=FuncPath(grid=grid, values=g1),
            gamma2=FuncPath(grid=grid, values=g2),
            gamma3=FuncPath(grid=grid, values=g3),
        ))
    return out


# ---------------------------------------------------------------------------
# Covariance decay fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """Fitted log-log decay slope of |c(t)| against the envelope bound."""

    slope: float | None
    envelope: float
    passes: bool | None
    status: str
    n_qualifying: int


def verify_cov_decay(cov: CovEstimate, H: float) -> DecayFit:
    """Least-squares slope of log max_ij |c_ij| versus log t.

    Qualifying lags are positive with magnitude above 3 SE; they must span
    at least a decade, else the fit is inconclusive (the envelope is an
    upper bound, so noise-dominated lags carry no information).  Passes
    when the slope is at most H - 3/2 + 0.35.
    """
    envelope = H - 1.5 + 0.35
    mag = np.max(np.abs(cov.values), axis=(0, 1))
    se = np.max(cov.se, axis=(0, 1))
    keep = (cov.lags > 0) & (mag > 3.0 * se) & (mag > 0)
    t = cov.lags[keep]
    if len(t) < 2 or t[-1] / t[0] < 10.0:
        return DecayFit(slope=None, envelope=envelope, passes=None,
                        status="inconclusive", n_qualifying=int(len(t)))
    slope = float(np.polyfit(np.log(t), np.log(mag[keep]), 1)[0])
    return DecayFit(slope=slope, envelope=envelope,
                    passes=bool(slope <= envelope), status="ok",
                    n_qualifying=int(len(t)))
