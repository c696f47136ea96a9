"""Direct minimization of the marginal pseudo log-likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .em import default_init
from .model import (
    DEFAULT_SIGMA2_FLOOR,
    SIGMA2_EVAL_MIN,
    FitResult,
    IndicatorPanel,
    ModelParams,
    WeightMatrix,
    check_aligned,
    check_identifiable,
    check_params,
    finalize_fit,
    neg2_pll_and_gradient,
    neg2_pll_value,
)


@dataclass(frozen=True)
class OptConfig:
    """Stopping rules for :func:`fit_marginal`.

    ``grad_tol`` applies to the max-norm of the (projected) gradient divided
    by the number of subjects.
    """

    max_iters: int = 500
    grad_tol: float = 1e-7
    step_tol: float = 1e-10
    sigma2_floor: float = DEFAULT_SIGMA2_FLOOR

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.sigma2_floor >= SIGMA2_EVAL_MIN:
            raise ValueError(f"sigma2_floor must be at least {SIGMA2_EVAL_MIN:g}")


def _projected_grad(theta, grad, lower):
    m = theta.size // 3
    g = grad.copy()
    at_floor = theta[2 * m :] <= lower + 1e-12
    # at an active lower bound only a negative slope (pointing outward) counts
    g[2 * m :][at_floor] = np.minimum(g[2 * m :][at_floor], 0.0)
    return g


def fit_marginal(
    panel: IndicatorPanel,
    weights: WeightMatrix,
    init: ModelParams | None = None,
    config: OptConfig | None = None,
) -> FitResult:
    """Fit by quasi-Newton minimization over ``(mu, gamma, log sigma2)``.

    The objective is -2 log marginal pseudo-likelihood divided by ``H`` with
    its analytic gradient; ``log sigma2`` is bounded below by the log of the
    variance floor.  Latent scores are the posterior means at the optimum.
    """
    config = config or OptConfig()
    check_identifiable(panel, weights)
    if init is None:
        init = default_init(panel, weights)
    check_params(init, panel.m)

    Y, W = panel.scores, weights.weights
    m, H = panel.m, panel.H
    lower = math.log(config.sigma2_floor)
    theta0 = init.to_vector()
    theta0[2 * m :] = np.maximum(theta0[2 * m :], lower)

    trace = []

    def fun(theta):
        mu, gamma, s2 = theta[:m], theta[m : 2 * m], np.exp(theta[2 * m :])
        f, g = neg2_pll_and_gradient(Y, W, mu, gamma, s2)
        return f / H, g / H

    def callback(intermediate_result):
        trace.append(H * float(intermediate_result.fun))

    trace.append(H * fun(theta0)[0])
    bounds = [(None, None)] * (2 * m) + [(lower, None)] * m
    res = minimize(
        fun,
        theta0,
        jac=True,
        method="L-BFGS-B",
        bounds=bounds,
        callback=callback,
        options={
            "maxiter": config.max_iters,
            "gtol": config.grad_tol,
            "ftol": config.step_tol * 1e-5,
            "maxcor": 20,
            "maxls": 50,
        },
    )
    theta = res.x
    f_final, g_final = fun(theta)
    if not trace or trace[-1] != H * f_final:
        trace.append(H * f_final)
    pg = np.max(np.abs(_projected_grad(theta, g_final, lower)))
    converged = bool(pg < config.grad_tol or (res.success and pg < 100 * config.grad_tol))
    message = str(res.message)
    if not converged:
        message = f"{message} (projected gradient {pg:.3g})"

    return finalize_fit(
        panel,
        weights,
        theta[:m],
        theta[m : 2 * m],
        np.exp(theta[2 * m :]),
        config.sigma2_floor,
        objective_trace=trace,
        converged=converged,
        iterations=int(res.nit),
        method="marginal",
        message=message,
        info={"grad_maxnorm_per_subject": float(pg), "n_evals": int(res.nfev)},
    )


def profile_objective(
    panel: IndicatorPanel,
    weights: WeightMatrix,
    params: ModelParams,
    coordinate: int,
    grid,
    sigma2_floor: float = DEFAULT_SIGMA2_FLOOR,
) -> np.ndarray:
    """Objective along one coordinate with all other parameters held fixed.

    Coordinates are numbered ``mu_1..m, gamma_1..m, sigma2_1..m``; grid values
    for a variance coordinate are variances (not logs).  Variance values at or
    below ``sigma2_floor`` yield NaN.
    """
    check_aligned(panel, weights)
    check_params(params, panel.m)
    m = panel.m
    if not 0 <= coordinate < 3 * m:
        raise IndexError(f"coordinate must lie in [0, {3 * m})")
    Y, W = panel.scores, weights.weights
    block, j = divmod(coordinate, m)
    out = np.empty(len(grid))
    for i, value in enumerate(grid):
        arrs = [params.mu.copy(), params.gamma.copy(), params.sigma2.copy()]
        if block == 2 and not value > max(sigma2_floor, SIGMA2_EVAL_MIN):
            out[i] = np.nan
            continue
        arrs[block][j] = value
        out[i] = neg2_pll_value(Y, W, *arrs)
    return out
