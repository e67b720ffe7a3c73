"""Asymptotic information for the drift MLE.

The limiting covariance structure of the estimator splits by whether the
stationary mean of a parameter-gradient of the drift vanishes.  Vanishing
components carry the square-root rate and an information entry given by a
doubly singular integral of the stationary covariance of the gradient;
non-vanishing components carry the slower rate and a rank-one block built
from the constant d'_H.  This module computes both blocks, the rate
exponents, the spectral covariance of the linear (Ornstein-Uhlenbeck type)
model, and its closed-form information 1 / (2 theta).

The doubly singular integral is evaluated by two independent routes and
cross-checked: a direct 2-D product rule with singular endpoint weights,
and a reduction to a single lag integral against r^{-2H} scaled by a
Beta-type constant.  Disagreement beyond tolerance is an error, not a
warning; it indicates a covariance input inconsistent with the assumed
decay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import roots_jacobi

from .fbm import Seed, generate_fgn_matrix
from .fracops import make_constants
from .models import DriftModel, _euler_core, default_burnin

__all__ = [
    "CovEstimate",
    "FisherBlock",
    "FisherMatrix",
    "QuadratureConvergenceError",
    "RouteDisagreementError",
    "kappa",
    "u_tail_integral",
    "fisher_zero_mean",
    "fisher_nonzero_mean",
    "fou_spectral_cov",
    "fou_fisher_closed",
    "estimate_cov_mc",
    "estimate_mean_grads_mc",
    "assemble_fisher",
]


class QuadratureConvergenceError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class RouteDisagreementError(RuntimeError):
    """The two information quadrature routes disagree beyond tolerance."""


# ---------------------------------------------------------------------------
# Rate exponents
# ---------------------------------------------------------------------------

def kappa(i: int, m0: int, H: float) -> float:
    """Rate exponent of parameter component i (1-based): the normalizer for
    that component is T^kappa.  Components up to m0 (vanishing stationary
    mean gradient) get -1/2; the rest get -(1 - H)."""
    if i != int(i) or i < 1:
        raise ValueError(f"component index {i} out of range")
    if m0 < 0:
        raise ValueError("m0 must be nonnegative")
    if not 0.0 < H < 0.5:
        raise ValueError(f"H={H} outside (0, 1/2)")
    return -0.5 if i <= m0 else -(1.0 - H)


# ---------------------------------------------------------------------------
# Covariance container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovEstimate:
    """Stationary covariance of the drift parameter-gradients on a lag grid.

    values[i, j, l] estimates Cov(dtheta_i a at lag lags[l], dtheta_j a at
    lag 0) under the stationary law; se holds per-entry standard errors
    (zeros for deterministic inputs) and reps the replication count.
    """

    lags: np.ndarray
    values: np.ndarray
    se: np.ndarray
    reps: int

    def __post_init__(self) -> None:
        lags = np.asarray(self.lags, dtype=float)
        values = np.asarray(self.values, dtype=float)
        se = np.asarray(self.se, dtype=float)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "se", se)
        if lags.ndim != 1 or len(lags) < 1:
            raise ValueError("lags must be a nonempty 1-D array")
        if np.any(lags < 0) or np.any(np.diff(lags) <= 0):
            raise ValueError("lags must be nonnegative and strictly increasing")
        if values.ndim != 3 or values.shape[0] != values.shape[1]:
            raise ValueError("values must have shape (m, m, n_lags)")
        if values.shape[2] != len(lags) or se.shape != values.shape:
            raise ValueError("values/se shape does not match the lag grid")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(se))):
            raise ValueError("non-finite covariance entries")

    @classmethod
    def from_scalar(cls, lags, values, se=None, reps: int = 0) -> "CovEstimate":
        """Wrap a one-parameter covariance curve as an (1, 1, n_lags) table."""
        values = np.asarray(values, dtype=float)[None, None, :]
        se = np.zeros_like(values) if se is None else np.asarray(se, dtype=float)[None, None, :]
        return cls(lags=np.asarray(lags, dtype=float), values=values, se=se, reps=reps)

    @property
    def param_dim(self) -> int:
        return self.values.shape[0]

    def lag0_asymmetry(self) -> float:
        """Max |c_ij(0) - c_ji(0)|; zero in exact arithmetic by stationarity."""
        c0 = self.values[:, :, 0]
        return float(np.max(np.abs(c0 - c0.T))) if c0.size else 0.0


# ---------------------------------------------------------------------------
# Tail model and lag interpolation
# ---------------------------------------------------------------------------

def _tail_fit(lags: np.ndarray, vals: np.ndarray, H: float) -> float:
    """Signed coefficient C of the decay law C t^{H-3/2}, least-squares
    fitted on log|c| over the last decade of lags (slope held fixed)."""
    l_max = lags[-1]
    sel = (lags >= l_max / 10.0) & (lags > 0)
    t = lags[sel]
    c = vals[sel]
    keep = np.abs(c) > 1e-300
    if not np.any(keep):
        return 0.0
    log_c = np.log(np.abs(c[keep])) - (H - 1.5) * np.log(t[keep])
    coeff = float(np.exp(np.mean(log_c)))
    sign = 1.0 if np.sum(c[keep] * t[keep] ** (1.5 - H)) >= 0 else -1.0
    return sign * coeff


def _lag_interpolant(cov: CovEstimate, i: int, j: int, H: float):
    """c(|delta|) as a vectorized callable: cusp-shaped first cell, linear
    interpolation on the rest of the lag grid, the fitted C t^{H-3/2} law
    beyond the largest lag."""
    lags = cov.lags
    vals = 0.5 * (cov.values[i, j] + cov.values[j, i])
    coeff = _tail_fit(lags, vals, H)
    l_max = lags[-1]
    has_origin = lags[0] == 0.0 and lags.size >= 2
    if has_origin:
        l_first = lags[1]
        # The driving noise is H-rough, so c(0) - c(t) grows like t^{2H} at
        # short lags.  A linear first segment sits above that cusp and the
        # t^{-2H} integration weight amplifies the excess, so the first cell
        # uses the cusp shape pinned to the first two samples instead.
        cusp_k = (vals[0] - vals[1]) / l_first ** (2.0 * H)

    def c_fun(delta: np.ndarray) -> np.ndarray:
        delta = np.abs(np.asarray(delta, dtype=float))
        out = np.interp(delta, lags, vals)
        if has_origin:
            near = delta < l_first
            if np.any(near):
                out = np.where(near, vals[0] - cusp_k * delta ** (2.0 * H), out)
        far = delta > l_max
        if np.any(far):
            out = np.where(far, coeff * np.maximum(delta, l_max) ** (H - 1.5), out)
        return out

    return c_fun, coeff


# ---------------------------------------------------------------------------
# The two quadrature routes for the zero-mean block
# ---------------------------------------------------------------------------

_U_TAIL_NODES = 60


def u_tail_integral(H: float, n_nodes: int = _U_TAIL_NODES) -> float:
    """int_1^inf (u-1)^{-H-1/2} u^{-H-1/2} du by a Jacobi-weighted rule.

    The substitution u = 1/(1-v) maps the integral to the pure Jacobi
    weight v^{-H-1/2}(1-v)^{2H-1} on (0, 1), so the rule's weight sum is
    the value itself (the closed form is B(1/2-H, 2H), checked in tests).
    """
    if not 0.0 < H < 0.5:
        raise ValueError(f"H={H} outside (0, 1/2)")
    alpha = 2.0 * H - 1.0
    beta = -H - 0.5
    _, w = roots_jacobi(n_nodes, alpha, beta)
    return float(np.sum(w) * 0.5 ** (alpha + beta + 1.0))


def _route_reduced(c_fun, coeff: float, l_max: float, H: float,
                   n_nodes: int) -> float:
    """2 U_H int_0^inf c(r) r^{-2H} dr: Jacobi rule on [0, l_max] for the
    grid part, the fitted decay law integrated in closed form beyond."""
    x, w = roots_jacobi(n_nodes, 0.0, -2.0 * H)
    r = l_max * 0.5 * (1.0 + x)
    grid_part = (l_max / 2.0) ** (1.0 - 2.0 * H) * float(np.sum(w * c_fun(r)))
    tail_part = coeff * l_max ** (-H - 0.5) / (H + 0.5)
    return 2.0 * u_tail_integral(H) * (grid_part + tail_part)


def _route_direct(c_fun, domain: float, H: float, n_nodes: int) -> float:
    """Direct 2-D product rule for the doubly singular integral on
    [0, domain]^2 with endpoint weight r^{-H-1/2} in each variable."""
    x, w = roots_jacobi(n_nodes, 0.0, -H - 0.5)
    r = domain * 0.5 * (1.0 + x)
    c_mat = c_fun(r[:, None] - r[None, :])
    return (domain / 2.0) ** (1.0 - 2.0 * H) * float(w @ c_mat @ w)


@dataclass(frozen=True)
class FisherBlock:
    """Zero-mean information block with its cross-route diagnostic."""

    values: np.ndarray
    direct_values: np.ndarray
    mismatch: float


def fisher_zero_mean(cov: CovEstimate, H: float, sigma: float, *,
                     n_nodes: int = 240, domain_mult: float = 2.0,
                     route_tol: float = 0.05) -> FisherBlock:
    """Information block for components with vanishing mean gradient.

    Each entry is sigma^{-2} bar_d_H^{-2} times the double integral of
    r^{-H-1/2} u^{-H-1/2} c_ij(r - u) over the quadrant, computed by the
    reduced single-integral route and cross-checked against the direct 2-D
    rule on [0, domain_mult * max_lag]^2.  Returns the reduced route; the
    direct route and the max relative gap are kept as diagnostics.
    """
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")
    if len(cov.lags) < 4 or cov.lags[-1] <= 0:
        raise ValueError("need at least 4 lags with positive range")
    consts = make_constants(H)
    pref = sigma ** -2 * consts.bar_d_H ** -2
    m = cov.param_dim
    reduced = np.zeros((m, m))
    direct = np.zeros((m, m))
    worst = 0.0
    for i in range(m):
        for j in range(i, m):
            c_fun, coeff = _lag_interpolant(cov, i, j, H)
            r2 = _route_reduced(c_fun, coeff, cov.lags[-1], H, n_nodes)
            r1 = _route_direct(c_fun, domain_mult * cov.lags[-1], H, n_nodes)
            scale = max(abs(r1), abs(r2))
            gap = abs(r1 - r2) / scale if scale > 1e-12 else 0.0
            if gap > route_tol:
                raise RouteDisagreementError(
                    f"entry ({i},{j}): direct {pref * r1:.6g} vs "
                    f"reduced {pref * r2:.6g} differ by {gap:.1%}"
                )
            worst = max(worst, gap)
            reduced[i, j] = reduced[j, i] = pref * r2
            direct[i, j] = direct[j, i] = pref * r1
    return FisherBlock(values=reduced, direct_values=direct, mismatch=worst)


def fisher_nonzero_mean(mean_grads, H: float, sigma: float) -> np.ndarray:
    """Rank-one block sigma^{-2} d'_H g g^T for components with
    non-vanishing stationary mean gradient g."""
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")
    g = np.atleast_1d(np.asarray(mean_grads, dtype=float))
    consts = make_constants(H)
    return sigma ** -2 * consts.d_prime_H * np.outer(g, g)


# ---------------------------------------------------------------------------
# Linear model: spectral covariance and closed-form information
# ---------------------------------------------------------------------------

def _phi(x, theta, H):
    return x ** (1.0 - 2.0 * H) / (theta ** 2 + x ** 2)


def _phi_prime(x, theta, H):
    num = (1.0 - 2.0 * H) * theta ** 2 - (1.0 + 2.0 * H) * x ** 2
    return x ** (-2.0 * H) * num / (theta ** 2 + x ** 2) ** 2


def _phi_second(x, theta, H):
    den = theta ** 2 + x ** 2
    n_val = (1.0 - 2.0 * H) * theta ** 2 - (1.0 + 2.0 * H) * x ** 2
    bracket = -2.0 * H * n_val - 2.0 * (1.0 + 2.0 * H) * x ** 2 - 4.0 * x ** 2 * n_val / den
    return x ** (-2.0 * H - 1.0) * bracket / den ** 2


def fou_spectral_cov(theta: float, sigma: float, H: float, lag: float, *,
                     rel_tol: float = 1e-8) -> float:
    """Stationary covariance of the linear model at the given lag:
    sigma^2 e_H / pi * int_0^inf cos(lag x) x^{1-2H} / (theta^2 + x^2) dx.

    The oscillatory integral is split at x_c = max(10 theta, 10/lag): the
    head uses an oscillatory-weight adaptive rule, the tail two integration
    by parts steps (boundary terms at x_c plus a twice-differentiated
    remainder handled by a Fourier-tail rule).  Even in the lag.
    """
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    consts = make_constants(H)
    delta = abs(float(lag))
    eps = dict(epsabs=1e-12, epsrel=1e-10)
    if delta < 1e-12:
        v1, e1 = integrate.quad(_phi, 0.0, 10.0 * theta, args=(theta, H), **eps)
        v2, e2 = integrate.quad(_phi, 10.0 * theta, np.inf, args=(theta, H), **eps)
        total, err = v1 + v2, e1 + e2
    else:
        x_c = max(10.0 * theta, 10.0 / delta)
        head, e_head = integrate.quad(_phi, 0.0, x_c, args=(theta, H),
                                      weight="cos", wvar=delta, limit=400, **eps)
        rem, e_rem = integrate.quad(_phi_second, x_c, np.inf, args=(theta, H),
                                    weight="cos", wvar=delta, epsabs=1e-12)
        tail = (-_phi(x_c, theta, H) * np.sin(delta * x_c) / delta
                - _phi_prime(x_c, theta, H) * np.cos(delta * x_c) / delta ** 2
                - rem / delta ** 2)
        total, err = head + tail, e_head + e_rem / delta ** 2
    value = sigma ** 2 * consts.e_H / np.pi * total
    bound = max(1e-13, rel_tol * abs(total))
    if err > bound:
        raise QuadratureConvergenceError(
            f"achieved absolute tolerance {err:.2e} exceeds {bound:.2e} "
            f"at lag {lag}"
        )
    return float(value)


def fou_fisher_closed(theta: float) -> float:
    """Closed-form information 1 / (2 theta) of the linear model."""
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    return 1.0 / (2.0 * theta)


# ---------------------------------------------------------------------------
# Monte Carlo covariance estimation
# ---------------------------------------------------------------------------

def estimate_cov_mc(model: DriftModel, theta, sigma: float, H: float, lags,
                    reps: int, seed: Seed, *, dt: float = 0.05,
                    burnin: float | None = None) -> CovEstimate:
    """Ensemble estimate of the stationary gradient covariance.

    Simulates reps stationary paths (pullback burn-in, one batched Euler
    sweep) and forms the centered cross-replication covariance of
    dtheta_i a at each lag against dtheta_j a at lag zero.  Lags are
    snapped to the simulation grid; the snapped values are returned.
    """
    if reps < 100:
        raise ValueError("reps must be at least 100")
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    model.check_admissible(theta)
    lags = np.asarray(lags, dtype=float)
    if np.any(lags < 0):
        raise ValueError("lags must be nonnegative")
    if burnin is None:
        burnin = default_burnin(model, theta)
    idx = np.unique(np.round(lags / dt).astype(int))
    lags_snapped = idx * dt
    n_obs = int(idx[-1]) if idx[-1] > 0 else 1
    n_burn = int(round(burnin / dt))
    incr = generate_fgn_matrix(n_burn + n_obs, dt, H, seed, reps)
    paths = _euler_core(model, theta, sigma, 0.0, incr, dt)[:, n_burn:]
    grads = model.dtheta_a(paths, theta)
    if grads.ndim == 2:
        grads = grads[None, :, :]
    g0 = grads[:, :, 0]
    gt = grads[:, :, idx]
    g0c = g0 - g0.mean(axis=1, keepdims=True)
    gtc = gt - gt.mean(axis=1, keepdims=True)
    prod = gtc[:, None, :, :] * g0c[None, :, :, None]
    values = prod.sum(axis=2) / (reps - 1)
    se = prod.std(axis=2, ddof=1) / np.sqrt(reps)
    return CovEstimate(lags=lags_snapped, values=values, se=se, reps=reps)


def estimate_mean_grads_mc(model: DriftModel, theta, sigma: float, H: float,
                           reps: int, seed: Seed, *, dt: float = 0.05,
                           burnin: float | None = None
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble estimate of the stationary mean of each drift gradient.

    Returns (means, standard errors), both length param_dim, from the
    endpoint of reps independent burn-in paths.
    """
    if reps < 100:
        raise ValueError("reps must be at least 100")
    if sigma == 0.0:
        raise ValueError("sigma must be nonzero")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    model.check_admissible(theta)
    if burnin is None:
        burnin = default_burnin(model, theta)
    n_burn = int(round(burnin / dt))
    incr = generate_fgn_matrix(n_burn, dt, H, seed, reps)
    endpoint = _euler_core(model, theta, sigma, 0.0, incr, dt)[:, -1]
    grads = model.dtheta_a(endpoint, theta)
    if grads.ndim == 1:
        grads = grads[None, :]
    means = grads.mean(axis=1)
    se = grads.std(axis=1, ddof=1) / np.sqrt(reps)
    return means, se


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FisherMatrix:
    """Assembled m x m information matrix with its block split index m0."""

    values: np.ndarray
    m0: int

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("information matrix must be square")
        if not 0 <= self.m0 <= values.shape[0]:
            raise ValueError("m0 out of range")

    @property
    def param_dim(self) -> int:
        return self.values.shape[0]

    def min_eigenvalue(self) -> float:
        if self.values.size == 0:
            return 0.0
        return float(np.linalg.eigvalsh(0.5 * (self.values + self.values.T))[0])

    def normalizer(self, T: float, H: float) -> np.ndarray:
        """Diagonal normalizing matrix diag(T^kappa_i) at horizon T."""
        if T <= 0.0:
            raise ValueError("T must be positive")
        exps = [kappa(i + 1, self.m0, H) for i in range(self.param_dim)]
        return np.diag(T ** np.asarray(exps))


def _block_values(block, size_hint: int | None = None) -> np.ndarray:
    if block is None:
        n = 0 if size_hint is None else size_hint
        return np.zeros((n, n))
    values = np.asarray(getattr(block, "values", block), dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("blocks must be square matrices")
    return values


def assemble_fisher(zero_block, nonzero_block, m0: int) -> FisherMatrix:
    """Block-diagonal assembly: the zero-mean block in the first m0
    coordinates, the rank-one block after, zero coupling, symmetrized."""
    zb = _block_values(zero_block, 0)
    nb = _block_values(nonzero_block, 0)
    if zb.shape[0] != m0:
        raise ValueError(
            f"zero-mean block is {zb.shape[0]}x{zb.shape[0]}, expected {m0}"
        )
    m = m0 + nb.shape[0]
    out = np.zeros((m, m))
    out[:m0, :m0] = zb
    out[m0:, m0:] = nb
    out = 0.5 * (out + out.T)
    return FisherMatrix(values=out, m0=m0)
