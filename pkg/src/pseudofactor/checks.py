"""Independent numerical cross-checks of the closed-form likelihood code.

Nothing here reuses the posterior formulas: the quadrature route locates the
mode of the joint pseudo-density with a scalar optimizer and integrates it
with adaptive quadrature, and gradients are checked by central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .asymptotics import mvn_nll_oracle
from .model import (
    LOG_2PI,
    IndicatorPanel,
    ModelParams,
    WeightMatrix,
    marginal_neg2_pll,
    marginal_neg2_pll_gradient,
    subject_neg2_pll,
)


def _joint_log_density_1d(y, w, mu, gamma, sigma2):
    def f(a):
        resid = y - mu - gamma * a
        return (
            -0.5 * a * a
            - 0.5 * LOG_2PI
            - 0.5 * np.sum(w * np.log(sigma2))
            - np.sum(w * resid**2 / (2.0 * sigma2))
            - 0.5 * np.sum(w) * LOG_2PI
        )

    return f


def quadrature_subject_neg2_pll(panel: IndicatorPanel, weights: WeightMatrix, params: ModelParams) -> np.ndarray:
    """-2 log of the latent-integrated joint pseudo-density, one subject at a time."""
    out = np.empty(panel.H)
    for h in range(panel.H):
        f = _joint_log_density_1d(
            panel.scores[:, h], weights.weights[:, h], params.mu, params.gamma, params.sigma2
        )
        mode = optimize.minimize_scalar(lambda a: -f(a), bracket=(-1.0, 1.0), tol=1e-12).x
        fmode = f(mode)
        step = 1e-3
        curv = -(f(mode + step) - 2 * fmode + f(mode - step)) / step**2
        width = 40.0 / math.sqrt(max(curv, 1e-12))
        val, _ = integrate.quad(
            lambda a: math.exp(f(a) - fmode),
            mode - width,
            mode + width,
            points=[mode],
            epsabs=0.0,
            epsrel=1e-13,
            limit=200,
        )
        out[h] = -2.0 * (fmode + math.log(val))
    return out


def finite_difference_gradient(panel, weights, params: ModelParams, step: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`marginal_neg2_pll` in ``(mu, gamma, log sigma2)``."""
    theta = params.to_vector()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        f_up = marginal_neg2_pll(panel, weights, ModelParams.from_vector(up))
        f_down = marginal_neg2_pll(panel, weights, ModelParams.from_vector(down))
        grad[i] = (f_up - f_down) / (2.0 * step)
    return grad


def random_case(rng: np.random.Generator, m: int, H: int, weighted: bool = True, missing: float = 0.0):
    """Random panel, weights and parameters for cross-checks."""
    Y = rng.normal(0.0, 1.5, (m, H))
    observed = rng.random((m, H)) >= missing
    observed[rng.integers(m, size=H), np.arange(H)] = True
    panel = IndicatorPanel(Y, observed)
    W = rng.uniform(0.05, 3.0, (m, H)) if weighted else np.ones((m, H))
    weights = WeightMatrix(np.where(observed, W, 0.0))
    params = ModelParams(
        rng.normal(0.0, 0.5, m), rng.normal(0.0, 1.0, m), rng.uniform(0.2, 2.0, m)
    )
    return panel, weights, params


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    worst: float
    tolerance: float
    cases: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: worst={self.worst:.3e} tol={self.tolerance:.1e} cases={self.cases}"


def check_mvn(rng, cases: int = 50, ms=(2, 3, 4, 7)) -> CheckOutcome:
    worst = 0.0
    for m in ms:
        for _ in range(cases):
            H = int(rng.integers(1, 40))
            panel, _, params = random_case(rng, m, H, weighted=False)
            w = WeightMatrix.uniform(panel)
            diff = abs(2.0 * mvn_nll_oracle(panel, params) - marginal_neg2_pll(panel, w, params))
            worst = max(worst, diff / H)
    return CheckOutcome("mvn-oracle", worst < 1e-10, worst, 1e-10, cases * len(ms))


def check_quadrature(rng, cases: int = 20) -> CheckOutcome:
    worst = 0.0
    for _ in range(cases):
        m, H = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        panel, weights, params = random_case(rng, m, H)
        ours = subject_neg2_pll(panel, weights, params)
        quad = quadrature_subject_neg2_pll(panel, weights, params)
        # relative error of the likelihood value exp(-neg2 / 2)
        worst = max(worst, float(np.max(np.abs(np.expm1(-(ours - quad) / 2.0)))))
    return CheckOutcome("quadrature", worst < 1e-8, worst, 1e-8, cases)


def check_gradient(rng, cases: int = 20) -> CheckOutcome:
    worst = 0.0
    for _ in range(cases):
        m, H = int(rng.integers(1, 6)), int(rng.integers(2, 30))
        panel, weights, params = random_case(rng, m, H, missing=0.1)
        g = marginal_neg2_pll_gradient(panel, weights, params)
        fd = finite_difference_gradient(panel, weights, params)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))))
    return CheckOutcome("gradient", worst < 1e-6, worst, 1e-6, cases)


def run_checks(seed: int = 0, cases: int = 20) -> list:
    rng = np.random.default_rng(seed)
    return [check_mvn(rng, cases), check_quadrature(rng, cases), check_gradient(rng, cases)]
