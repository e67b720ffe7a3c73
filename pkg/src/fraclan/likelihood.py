"""Driver reconstruction, innovation process, Z-path, likelihood ratios, and
maximum-likelihood estimation.

The observed path is turned into the reference driver B^theta (drift removed
by trapezoid), the innovation process W^theta (inverse Volterra transform of
the driver increments), and the reference-free Z-path Z = W^theta +
int beta(theta) ds.  Log-likelihood ratios follow the Girsanov form
int (beta' - beta) dW - 1/2 int (beta' - beta)^2 dt with left-point
stochastic sums; the linear-drift MLE is closed-form in the transformed
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .fbm import Grid
from .fracops import BetaPath, FuncPath, SingularQuadrature, beta_process, make_constants
from .models import DriftModel

__all__ = [
    "ObservedPath",
    "InnovationPath",
    "ZPath",
    "LogLikResult",
    "MleResult",
    "DegenerateDesignError",
    "NonConvergenceError",
    "b_theta_path",
    "innovation_W",
    "z_path",
    "loglik_ratio",
    "mle_linear",
    "mle_numeric",
]


@dataclass(frozen=True)
class ObservedPath:
    """The statistical datum: a sampled trajectory with its noise scale."""

    grid: Grid
    values: np.ndarray
    sigma: float
    x0: float

    def __post_init__(self) -> None:
        if self.sigma == 0.0:
            raise ValueError("sigma must be nonzero")
        if len(self.values) != self.grid.n_points:
            raise ValueError("values length does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite observations")
        if abs(self.values[0] - self.x0) > 1e-9 * max(1.0, abs(self.x0)):
            raise ValueError("path does not start at x0")


@dataclass(frozen=True)
class InnovationPath:
    """W^theta on the observation grid; 0 at t = 0."""

    grid: Grid
    values: np.ndarray
    theta: np.ndarray


@dataclass(frozen=True)
class ZPath:
    """The reference-free transform Z = W^theta + int beta(theta) ds."""

    grid: Grid
    values: np.ndarray


@dataclass(frozen=True)
class LogLikResult:
    """Log Radon-Nikodym derivative split into its two terms."""

    value: float
    stochastic_term: float
    quadratic_term: float


@dataclass(frozen=True)
class MleResult:
    """Numerical MLE output: argmax, objective there, iterations used."""

    theta: np.ndarray
    value: float
    iterations: int


class DegenerateDesignError(ValueError):
    """The quadratic form int q^2 dt is numerically zero."""


class NonConvergenceError(RuntimeError):
    """Optimizer hit its iteration cap; carries the best iterate found."""

    def __init__(self, message: str, best: "MleResult") -> None:
        super().__init__(message)
        self.best = best


def _quad_for(obs: ObservedPath, H: float | None,
              quad: SingularQuadrature | None) -> SingularQuadrature:
    if quad is not None:
        if quad.n_steps != obs.grid.n_points - 1 or abs(quad.dt - obs.grid.dt) > 1e-12:
            raise ValueError("quadrature table does not match the observation grid")
        return quad
    if H is None:
        raise ValueError("pass either a prebuilt quadrature table or H")
    return SingularQuadrature(obs.grid.n_points - 1, obs.grid.dt, H)


def b_theta_path(obs: ObservedPath, model: DriftModel, theta) -> FuncPath:
    """Reference driver B^theta = sigma^{-1} (X - x0 - int_0^t a(X_s, theta) ds)
    with trapezoidal drift integral.  At the data-generating theta this is
    the driving fBM up to Euler and quadrature error."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    drift = model.a(obs.values, theta)
    dt = obs.grid.dt
    drift_int = np.concatenate([[0.0], np.cumsum(0.5 * (drift[:-1] + drift[1:]) * dt)])
    values = (obs.values - obs.x0 - drift_int) / obs.sigma
    return FuncPath(grid=obs.grid, values=values)


def innovation_W(obs: ObservedPath, model: DriftModel, theta, *,
                 quad: SingularQuadrature | None = None,
                 H: float | None = None) -> InnovationPath:
    """Innovation process: the inverse Volterra transform of the reference
    driver's increments.

    W^theta(t_k) = sum_j kernel(midpoint s_j, t_k) dB^theta_j with the final
    singular cell integrated exactly; W^theta(0) = 0.  Under the
    data-generating measure this is a standard Brownian motion.
    """
    quad = _quad_for(obs, H, quad)
    driver = b_theta_path(obs, model, theta)
    incr = np.diff(driver.values)
    values = np.concatenate([[0.0], quad.innovation_matrix @ incr])
    return InnovationPath(grid=obs.grid, values=values,
                          theta=np.atleast_1d(np.asarray(theta, dtype=float)))


def z_path(obs: ObservedPath, model: DriftModel, theta_ref, *,
           quad: SingularQuadrature | None = None,
           H: float | None = None) -> ZPath:
    """Z = W^{theta_ref} + int_0^t beta_s(theta_ref) ds (trapezoid).

    The result is independent of theta_ref up to quadrature error; that
    invariance is the numerical face of the reference-change identity.
    """
    quad = _quad_for(obs, H, quad)
    w = innovation_W(obs, model, theta_ref, quad=quad)
    beta = beta_process(model, theta_ref, obs.sigma, obs, quad)
    dt = obs.grid.dt
    beta_int = np.concatenate(
        [[0.0], np.cumsum(0.5 * (beta.values[:-1] + beta.values[1:]) * dt)]
    )
    return ZPath(grid=obs.grid, values=w.values + beta_int)


def loglik_ratio(obs: ObservedPath, model: DriftModel, theta, theta_prime, *,
                 quad: SingularQuadrature | None = None,
                 H: float | None = None) -> LogLikResult:
    """Log-likelihood ratio of theta_prime against theta:

        int_0^T (beta(theta') - beta(theta)) dW^theta
          - 1/2 int_0^T (beta(theta') - beta(theta))^2 dt,

    stochastic integral as a left-point sum against W^theta increments,
    quadratic term by trapezoid.  Exactly zero when theta' = theta.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    theta_prime = np.atleast_1d(np.asarray(theta_prime, dtype=float))
    if np.array_equal(theta, theta_prime):
        return LogLikResult(value=0.0, stochastic_term=0.0, quadratic_term=0.0)
    quad = _quad_for(obs, H, quad)
    w = innovation_W(obs, model, theta, quad=quad)
    beta = beta_process(model, theta, obs.sigma, obs, quad)
    beta_p = beta_process(model, theta_prime, obs.sigma, obs, quad)
    diff = beta_p.values - beta.values
    dt = obs.grid.dt
    stoch = float(np.sum(diff[:-1] * np.diff(w.values)))
    quad_term = float(np.trapezoid(diff**2, dx=dt))
    return LogLikResult(value=stoch - 0.5 * quad_term,
                        stochastic_term=stoch, quadratic_term=quad_term)


def mle_linear(obs: ObservedPath, base_drift, *,
               offset_drift=None,
               quad: SingularQuadrature | None = None,
               H: float | None = None) -> float:
    """Closed-form MLE for drifts a(x, theta) = theta b(x) (+ fixed offset).

        theta_hat = (int_0^T q_t dZ_t) / (int_0^T q_t^2 dt),

    where q is the beta transform of b with unit coefficient and dZ comes
    from the Z-path at reference zero in the linear slot.  With an offset
    drift c (affine families a = theta b + c) the reference response is
    removed, which reduces to the same ratio against the reference
    innovation increments.  Left-point stochastic sum, trapezoid
    denominator.
    """
    quad = _quad_for(obs, H, quad)
    n = quad.n_steps
    dt = quad.dt
    cst = make_constants(quad.H)
    t_pos = dt * np.arange(1, n + 1)
    pref = t_pos ** (quad.H - 0.5) / (cst.bar_d_H * obs.sigma)

    b_vals = np.asarray(base_drift(obs.values), dtype=float)
    q = np.concatenate([[0.0], pref * (quad.beta_matrix @ b_vals)])

    denom = float(np.trapezoid(q**2, dx=dt))
    if denom < 1e-12 * (n * dt):
        raise DegenerateDesignError(
            f"int q^2 dt = {denom:.3e} is degenerate for this design"
        )

    if offset_drift is None:
        ref_incr = np.diff(obs.values) / obs.sigma
    else:
        c_vals = np.asarray(offset_drift(obs.values), dtype=float)
        c_int = 0.5 * (c_vals[:-1] + c_vals[1:]) * dt
        ref_incr = (np.diff(obs.values) - c_int) / obs.sigma
    w_ref = quad.innovation_matrix @ ref_incr
    dw = np.diff(np.concatenate([[0.0], w_ref]))
    numer = float(np.sum(q[:-1] * dw))
    return numer / denom


def _linear_objective(obs: ObservedPath, model: DriftModel, theta_init,
                      quad: SingularQuadrature):
    """Cached loglik_ratio(theta_init -> u) for linear-in-theta drifts.

    beta(u) - beta(theta_init) = sum_i (u_i - theta_init_i) q_i with q_i the
    beta transforms of the drift gradient components, so one transform pass
    per component supports every objective evaluation.
    """
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))
    cst = make_constants(quad.H)
    n = quad.n_steps
    dt = quad.dt
    t_pos = dt * np.arange(1, n + 1)
    pref = t_pos ** (quad.H - 0.5) / (cst.bar_d_H * obs.sigma)
    grads = model.dtheta_a(obs.values, theta_init)
    q_cols = np.empty((n + 1, model.param_dim))
    for i in range(model.param_dim):
        q_cols[:, i] = np.concatenate([[0.0], pref * (quad.beta_matrix @ grads[i])])
    w = innovation_W(obs, model, theta_init, quad=quad)
    dw = np.diff(w.values)
    score = q_cols[:-1].T @ dw
    # trapezoid Gram matrix of the q columns
    weights = np.full(n + 1, dt)
    weights[0] = weights[-1] = 0.5 * dt
    gram = (q_cols * weights[:, None]).T @ q_cols

    def objective(u: np.ndarray) -> float:
        delta = np.atleast_1d(u) - theta_init
        return float(score @ delta - 0.5 * delta @ gram @ delta)

    return objective


def _downhill_bracket(f, x0: float, step: float = 0.5,
                      max_expand: int = 60) -> tuple[float, float, float] | None:
    """Expand around x0 until f(mid) < f(left) and f(mid) < f(right)."""
    a, b, c = x0 - step, x0, x0 + step
    fa, fb, fc = f(a), f(b), f(c)
    for _ in range(max_expand):
        if fb < fa and fb < fc:
            return (a, b, c)
        step *= 1.6
        if fa <= fc:
            a, b, c = a - step, a, b
            fa, fb, fc = f(a), fa, fb
        else:
            a, b, c = b, c, c + step
            fa, fb, fc = fb, fc, f(c)
    return None


def mle_numeric(obs: ObservedPath, model: DriftModel, theta_init, *,
                quad: SingularQuadrature | None = None,
                H: float | None = None,
                max_iter: int = 500,
                xtol: float = 1e-6) -> MleResult:
    """Derivative-free maximization of u -> loglik_ratio(theta_init, u).

    Golden-section search for one parameter, Nelder-Mead simplex otherwise.
    Inadmissible trial points are rejected by penalty.  Raises
    NonConvergenceError (carrying the best iterate) past `max_iter`.
    """
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))
    model.check_admissible(theta_init)
    quad = _quad_for(obs, H, quad)

    if model.theta_linear:
        objective = _linear_objective(obs, model, theta_init, quad)
    else:
        def objective(u: np.ndarray) -> float:
            return loglik_ratio(obs, model, theta_init, u, quad=quad).value

    def penalized_neg(u) -> float:
        u = np.atleast_1d(u)
        if model.admissible is not None and not model.admissible(u):
            return 1e100
        return -objective(u)

    if model.param_dim == 1:
        bracket = _downhill_bracket(penalized_neg, theta_init[0])
        if bracket is None:
            best = MleResult(theta=theta_init, value=float(objective(theta_init)),
                             iterations=0)
            raise NonConvergenceError("failed to bracket a maximizer", best)
        res = optimize.minimize_scalar(
            penalized_neg, bracket=bracket, method="golden",
            options={"maxiter": max_iter, "xtol": xtol},
        )
        theta_hat = np.array([float(res.x)])
        iters = int(res.get("nit", res.get("nfev", 0)))
        converged = bool(res.get("success", True))
    else:
        res = optimize.minimize(
            penalized_neg, theta_init, method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": xtol, "fatol": 1e-10},
        )
        theta_hat = np.asarray(res.x, dtype=float)
        iters = int(res.nit)
        converged = bool(res.success)

    best = MleResult(theta=theta_hat, value=float(objective(theta_hat)),
                     iterations=iters)
    if not converged:
        raise NonConvergenceError(
            f"optimizer exceeded {max_iter} iterations", best
        )
    if best.value < -1e-12:
        # ascent property: the argmax cannot fall below the start point
        return MleResult(theta=theta_init, value=0.0, iterations=iters)
    return best
