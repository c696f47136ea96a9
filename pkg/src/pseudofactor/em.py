"""EM fitting of the weighted single-factor model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateIndicatorError, UnidentifiableIndicatorError
from .model import (
    DEFAULT_SIGMA2_FLOOR,
    SIGMA2_EVAL_MIN,
    FitResult,
    IndicatorPanel,
    ModelParams,
    PosteriorMoments,
    WeightMatrix,
    check_aligned,
    check_identifiable,
    check_params,
    finalize_fit,
    subject_terms,
)

#: Cap on the latent-score refinement passes run after the objective settles.
MAX_ALPHA_PASSES = 100


@dataclass(frozen=True)
class EmConfig:
    """Stopping rules for :func:`fit_em`.

    ``tol`` bounds the relative change of the marginal objective between
    iterations.  Once it is met, refinement passes continue until the largest
    latent-score change is below ``alpha_tol`` and the largest parameter
    change is below ``tol``.
    """

    max_iters: int = 1000
    tol: float = 1e-8
    alpha_tol: float = 1e-6
    sigma2_floor: float = DEFAULT_SIGMA2_FLOOR

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if not self.alpha_tol > 0:
            raise ValueError("alpha_tol must be positive")
        if not self.sigma2_floor >= SIGMA2_EVAL_MIN:
            raise ValueError(f"sigma2_floor must be at least {SIGMA2_EVAL_MIN:g}")


def _m_step_arrays(Y, W, x, z, gamma, floor):
    wsum = W.sum(axis=1)
    mu = (W * (Y - gamma[:, None] * x)).sum(axis=1) / wsum
    r = Y - mu[:, None]
    gamma = (W * x * r).sum(axis=1) / (W * z).sum(axis=1)
    g = gamma[:, None]
    sigma2 = (W * (r * r - 2.0 * r * g * x + g * g * z)).sum(axis=1) / wsum
    return mu, gamma, np.maximum(sigma2, floor)


def m_step(
    panel: IndicatorPanel,
    weights: WeightMatrix,
    post: PosteriorMoments,
    current: ModelParams,
    sigma2_floor: float = DEFAULT_SIGMA2_FLOOR,
) -> ModelParams:
    """One M-step: update mu, then gamma, then sigma2, each from the freshest values.

    Every coordinate maximizes the expected complete-data pseudo
    log-likelihood given the posterior moments, so the sweep never decreases
    it.  Residual variances are clamped at ``sigma2_floor``.
    """
    check_aligned(panel, weights)
    if post.x.shape != (panel.H,) or post.z.shape != (panel.H,):
        raise ValueError("posterior moments do not match the panel")
    W = weights.weights
    zero = np.flatnonzero(W.sum(axis=1) <= 0)
    if zero.size:
        raise UnidentifiableIndicatorError(
            f"indicator(s) {[panel.indicator_names[j] for j in zero]} carry zero total weight"
        )
    mu, gamma, sigma2 = _m_step_arrays(
        panel.scores, W, post.x, post.z, current.gamma, sigma2_floor
    )
    return ModelParams(mu, gamma, sigma2)


def default_init(panel: IndicatorPanel, weights: WeightMatrix) -> ModelParams:
    """Starting values that split each indicator's weighted variance evenly.

    Loading signs follow the leading eigenvector of the correlation matrix of
    the standardized (mean-imputed) scores.
    """
    check_identifiable(panel, weights)
    Y, W = panel.scores, weights.weights
    wsum = W.sum(axis=1)
    mu = (W * Y).sum(axis=1) / wsum
    r = np.where(panel.observed, Y - mu[:, None], 0.0)
    var = (W * r * r).sum(axis=1) / wsum
    bad = np.flatnonzero(~(var > 0))
    if bad.size:
        raise DegenerateIndicatorError(
            f"indicator(s) {[panel.indicator_names[j] for j in bad]} have zero weighted variance"
        )
    half = var / 2.0
    signs = np.ones(panel.m)
    if panel.m > 1:
        Z = r / np.sqrt(var)[:, None]
        _, vecs = np.linalg.eigh(Z @ Z.T / panel.H)
        lead = vecs[:, -1]
        if lead.sum() < 0:
            lead = -lead
        signs = np.where(lead < 0, -1.0, 1.0)
    return ModelParams(mu, signs * np.sqrt(half), half)


def fit_em(
    panel: IndicatorPanel,
    weights: WeightMatrix,
    init: ModelParams | None = None,
    config: EmConfig | None = None,
) -> FitResult:
    """Fit by EM until the marginal objective settles, then stabilize latent scores.

    Parameters
    ----------
    panel, weights : IndicatorPanel, WeightMatrix
        Data and aligned sample weights.
    init : ModelParams, optional
        Starting point; :func:`default_init` when omitted.
    config : EmConfig, optional

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iters`` was exhausted before the
        relative objective change fell below ``tol``.
    """
    config = config or EmConfig()
    check_identifiable(panel, weights)
    if init is None:
        init = default_init(panel, weights)
    check_params(init, panel.m)

    Y, W = panel.scores, weights.weights
    floor = config.sigma2_floor
    mu, gamma = init.mu.copy(), init.gamma.copy()
    sigma2 = np.maximum(init.sigma2, floor)

    neg2, x, v = subject_terms(Y, W, mu, gamma, sigma2)
    trace = [math.fsum(neg2)]
    converged = False
    it = 0
    while it < config.max_iters:
        mu, gamma, sigma2 = _m_step_arrays(Y, W, x, x * x + v, gamma, floor)
        neg2, x, v = subject_terms(Y, W, mu, gamma, sigma2)
        trace.append(math.fsum(neg2))
        it += 1
        if abs(trace[-1] - trace[-2]) < config.tol * max(1.0, abs(trace[-1])):
            converged = True
            break

    # keep cycling until every latent score (and parameter) is stable
    passes = 0
    if converged:
        while passes < MAX_ALPHA_PASSES:
            x_old, theta_old = x, np.concatenate([mu, gamma, sigma2])
            mu, gamma, sigma2 = _m_step_arrays(Y, W, x, x * x + v, gamma, floor)
            neg2, x, v = subject_terms(Y, W, mu, gamma, sigma2)
            trace.append(math.fsum(neg2))
            passes += 1
            step = np.max(np.abs(np.concatenate([mu, gamma, sigma2]) - theta_old))
            if np.max(np.abs(x - x_old)) < config.alpha_tol and step < config.tol:
                break

    message = "converged" if converged else f"no convergence within {config.max_iters} iterations"
    return finalize_fit(
        panel,
        weights,
        mu,
        gamma,
        sigma2,
        floor,
        objective_trace=trace,
        converged=converged,
        iterations=it + passes,
        method="em",
        message=message,
        info={"alpha_passes": passes},
    )
