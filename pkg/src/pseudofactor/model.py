"""
Core types and closed-form likelihood formulas for the weighted single-factor model.

Each indicator ``j`` of subject ``h`` follows

    Y[j, h] | alpha[h] ~ N(mu[j] + gamma[j] * alpha[h], sigma2[j]),   alpha[h] ~ N(0, 1),

and enters the pseudo likelihood raised to the power of its sample weight
``W[j, h]``.  Integrating the latent factor out gives a closed-form marginal
pseudo log-likelihood; everything in this module is built on three per-subject
quantities::

    precision P[h] = 1 + sum_j W[j, h] gamma[j]**2 / sigma2[j]
    score     S[h] = sum_j W[j, h] (Y[j, h] - mu[j]) gamma[j] / sigma2[j]
    post mean x[h] = S[h] / P[h],   post var v[h] = 1 / P[h]

Missing entries carry weight zero and a stored score of zero, so every sum can
run over the full ``m x H`` grid without branching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import InvalidInputError, InvalidParamsError, UnidentifiableIndicatorError

LOG_2PI = math.log(2.0 * math.pi)

#: Smallest residual variance at which likelihoods are evaluated.
SIGMA2_EVAL_MIN = 1e-10

#: Default floor that fitting routines clamp residual variances to.
DEFAULT_SIGMA2_FLOOR = 1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _fsum(values: np.ndarray) -> float:
    # exactly rounded, hence independent of subject order
    return math.fsum(np.asarray(values, dtype=float).ravel())


@dataclass(frozen=True)
class IndicatorPanel:
    """m x H matrix of indicator scores with an explicit observation mask.

    Parameters
    ----------
    scores : array-like, shape (m, H)
        Indicator scores.  Entries where ``observed`` is False are ignored
        and stored as 0.
    observed : array-like of bool, shape (m, H), optional
        Observation mask.  Defaults to fully observed.
    indicator_names, subject_ids : sequence of str, optional
        Labels; default to ``"y1".."ym"`` and ``"1".."H"``.
    """

    scores: np.ndarray
    observed: Optional[np.ndarray] = None
    indicator_names: Optional[Sequence[str]] = None
    subject_ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float)
        if scores.ndim != 2:
            raise InvalidInputError(f"scores must be 2-D (m x H), got shape {scores.shape}")
        m, H = scores.shape
        if m < 1 or H < 1:
            raise InvalidInputError("panel needs at least one indicator and one subject")
        if self.observed is None:
            observed = np.ones((m, H), dtype=bool)
        else:
            observed = np.array(self.observed, dtype=bool)
            if observed.shape != scores.shape:
                raise InvalidInputError(
                    f"observed mask shape {observed.shape} != scores shape {scores.shape}"
                )
        if not np.all(np.isfinite(scores[observed])):
            raise InvalidInputError("observed scores must be finite")
        empty = np.flatnonzero(~observed.any(axis=0))
        if empty.size:
            raise InvalidInputError(f"subjects without any observed indicator: {empty.tolist()}")
        scores[~observed] = 0.0

        names = (
            tuple(f"y{j + 1}" for j in range(m))
            if self.indicator_names is None
            else tuple(str(s) for s in self.indicator_names)
        )
        ids = (
            tuple(str(h + 1) for h in range(H))
            if self.subject_ids is None
            else tuple(str(s) for s in self.subject_ids)
        )
        if len(names) != m or len(ids) != H:
            raise InvalidInputError("label lengths do not match panel shape")

        object.__setattr__(self, "scores", _readonly(scores))
        object.__setattr__(self, "observed", _readonly(observed))
        object.__setattr__(self, "indicator_names", names)
        object.__setattr__(self, "subject_ids", ids)

    @property
    def m(self) -> int:
        return self.scores.shape[0]

    @property
    def H(self) -> int:
        return self.scores.shape[1]

    def masked(self, drop) -> "IndicatorPanel":
        """Return a copy with the entries flagged in ``drop`` marked unobserved."""
        drop = np.asarray(drop, dtype=bool)
        return IndicatorPanel(
            self.scores, self.observed & ~drop, self.indicator_names, self.subject_ids
        )


@dataclass(frozen=True)
class WeightMatrix:
    """Nonnegative m x H measure-specific sample weights."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2:
            raise InvalidInputError(f"weights must be 2-D (m x H), got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("weights must be finite")
        if np.any(w < 0):
            raise InvalidInputError("weights must be nonnegative")
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def shape(self):
        return self.weights.shape

    @classmethod
    def uniform(cls, panel: IndicatorPanel) -> "WeightMatrix":
        """Weight 1 on every observed entry, 0 elsewhere."""
        return cls(panel.observed.astype(float))

    def indicator_means(self, panel: IndicatorPanel) -> np.ndarray:
        """Per-indicator mean weight over observed entries."""
        n = panel.observed.sum(axis=1)
        return np.array(
            [_fsum(self.weights[j][panel.observed[j]]) for j in range(panel.m)]
        ) / np.maximum(n, 1)


@dataclass(frozen=True)
class ModelParams:
    """Per-indicator intercepts, loadings and residual variances."""

    mu: np.ndarray
    gamma: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.array(a, dtype=float)) for a in (self.mu, self.gamma, self.sigma2)]
        mu, gamma, sigma2 = arrs
        if not (mu.ndim == gamma.ndim == sigma2.ndim == 1):
            raise InvalidParamsError("mu, gamma and sigma2 must be 1-D")
        if not (mu.size == gamma.size == sigma2.size >= 1):
            raise InvalidParamsError("mu, gamma and sigma2 must have the same positive length")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise InvalidParamsError("parameters must be finite")
        if np.any(sigma2 <= 0):
            raise InvalidParamsError("residual variances must be positive")
        object.__setattr__(self, "mu", _readonly(mu))
        object.__setattr__(self, "gamma", _readonly(gamma))
        object.__setattr__(self, "sigma2", _readonly(sigma2))

    @property
    def m(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma2)

    def to_vector(self) -> np.ndarray:
        """Unconstrained vector ``(mu, gamma, log sigma2)``."""
        return np.concatenate([self.mu, self.gamma, np.log(self.sigma2)])

    @classmethod
    def from_vector(cls, theta) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        if theta.ndim != 1 or theta.size % 3:
            raise InvalidParamsError("parameter vector length must be a multiple of 3")
        m = theta.size // 3
        return cls(theta[:m], theta[m : 2 * m], np.exp(theta[2 * m :]))

    def canonical(self) -> "ModelParams":
        """Resolve the (gamma, alpha) -> (-gamma, -alpha) ambiguity so that sum(gamma) >= 0."""
        if self.gamma.sum() < 0:
            return ModelParams(self.mu, -self.gamma, self.sigma2)
        return self


@dataclass(frozen=True)
class PosteriorMoments:
    """Posterior mean ``x``, variance ``v`` and second moment ``z`` of each latent score."""

    x: np.ndarray
    v: np.ndarray
    z: np.ndarray


@dataclass
class FitResult:
    """Outcome of a model fit.

    ``objective_trace`` holds -2 log pseudo-likelihood after every iteration;
    ``objective`` is its value at the returned parameters (which may sit one
    boundary snap below the last trace entry).
    """

    params: ModelParams
    alpha: np.ndarray
    alpha_var: np.ndarray
    objective_trace: list
    converged: bool
    iterations: int
    boundary_flags: np.ndarray
    objective: float = float("nan")
    method: str = ""
    message: str = ""
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def check_aligned(panel: IndicatorPanel, weights: WeightMatrix) -> None:
    if weights.shape != panel.scores.shape:
        raise InvalidInputError(
            f"weight shape {weights.shape} does not match panel shape {panel.scores.shape}"
        )
    if np.any(weights.weights[~panel.observed] != 0):
        raise InvalidInputError("weights must be zero where the panel is unobserved")


def check_params(params: ModelParams, m: int) -> None:
    if params.m != m:
        raise InvalidParamsError(f"params describe {params.m} indicators, panel has {m}")
    if np.any(params.sigma2 < SIGMA2_EVAL_MIN):
        raise InvalidParamsError(
            f"residual variances below {SIGMA2_EVAL_MIN:g} cannot be evaluated"
        )


def _arrays(panel, weights, params):
    check_aligned(panel, weights)
    check_params(params, panel.m)
    return panel.scores, weights.weights, params.mu, params.gamma, params.sigma2


# ---------------------------------------------------------------------------
# array kernels (no validation; used in inner loops)
# ---------------------------------------------------------------------------


def _posterior(Y, W, mu, gamma, sigma2):
    a = W / sigma2[:, None]
    r = Y - mu[:, None]
    q = (a * (gamma**2)[:, None]).sum(axis=0)
    S = (a * r * gamma[:, None]).sum(axis=0)
    P = 1.0 + q
    x = S / P
    return a, r, q, P, x


def subject_terms(Y, W, mu, gamma, sigma2):
    """Per-subject -2 log marginal pseudo-likelihood and the posterior pieces.

    Returns ``(neg2, x, v)``.  The quadratic form is evaluated as
    ``sum_j a_j (r_j - gamma_j x)^2 + x^2``, which equals the textbook
    ``sum a r^2 - S^2 / P`` but has no cancellation when a variance is tiny.
    """
    a, r, q, P, x = _posterior(Y, W, mu, gamma, sigma2)
    e = r - gamma[:, None] * x
    quad = (a * e * e).sum(axis=0) + x * x
    neg2 = (
        W.sum(axis=0) * LOG_2PI
        + np.log1p(q)
        + (W * np.log(sigma2)[:, None]).sum(axis=0)
        + quad
    )
    return neg2, x, 1.0 / P


def neg2_pll_value(Y, W, mu, gamma, sigma2) -> float:
    return _fsum(subject_terms(Y, W, mu, gamma, sigma2)[0])


def neg2_pll_and_gradient(Y, W, mu, gamma, sigma2):
    """Objective and gradient with respect to ``(mu, gamma, log sigma2)``."""
    a, r, q, P, x = _posterior(Y, W, mu, gamma, sigma2)
    v = 1.0 / P
    g = gamma[:, None]
    e = r - g * x
    ae = a * e
    quad = (ae * e).sum(axis=0) + x * x
    neg2 = (
        W.sum(axis=0) * LOG_2PI
        + np.log1p(q)
        + (W * np.log(sigma2)[:, None]).sum(axis=0)
        + quad
    )
    d_mu = -2.0 * ae.sum(axis=1)
    d_gamma = 2.0 * (a * (g * v - x * e)).sum(axis=1)
    d_logs2 = (W - a * (e * e + g * g * v)).sum(axis=1)
    return _fsum(neg2), np.concatenate([d_mu, d_gamma, d_logs2])


# ---------------------------------------------------------------------------
# public formulas
# ---------------------------------------------------------------------------


def conditional_log_density(
    panel: IndicatorPanel, weights: WeightMatrix, params: ModelParams, alpha, h: int
) -> float:
    """Weighted conditional log-density of subject ``h``'s indicators given ``alpha[h]``.

    Returns ``sum_j w_jh log N(Y_jh; mu_j + gamma_j alpha_h, sigma2_j)``; entries
    with zero weight contribute exactly zero.
    """
    Y, W, mu, gamma, sigma2 = _arrays(panel, weights, params)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (panel.H,):
        raise InvalidInputError(f"alpha must have length H={panel.H}")
    if not 0 <= h < panel.H:
        raise IndexError(f"subject index {h} out of range")
    a_h = alpha[h]
    if not np.isfinite(a_h):
        raise InvalidInputError("alpha must be finite")
    w = W[:, h]
    resid = Y[:, h] - mu - gamma * a_h
    terms = -0.5 * w * np.log(sigma2) - w * resid**2 / (2.0 * sigma2) - 0.5 * w * LOG_2PI
    return math.fsum(terms)


def joint_neg_log_density(
    panel: IndicatorPanel, weights: WeightMatrix, params: ModelParams, alpha
) -> float:
    """Negative log joint pseudo-density of data and latent scores, summed over subjects."""
    Y, W, mu, gamma, sigma2 = _arrays(panel, weights, params)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (panel.H,):
        raise InvalidInputError(f"alpha must have length H={panel.H}")
    if not np.all(np.isfinite(alpha)):
        raise InvalidInputError("alpha must be finite")
    resid = Y - mu[:, None] - gamma[:, None] * alpha[None, :]
    cond = (
        0.5 * W * np.log(sigma2)[:, None] + W * resid**2 / (2.0 * sigma2[:, None]) + 0.5 * W * LOG_2PI
    ).sum(axis=0)
    return _fsum(0.5 * alpha**2 + 0.5 * LOG_2PI + cond)


def posterior_moments(
    panel: IndicatorPanel, weights: WeightMatrix, params: ModelParams
) -> PosteriorMoments:
    """Posterior mean, variance and second moment of every latent score."""
    Y, W, mu, gamma, sigma2 = _arrays(panel, weights, params)
    _, _, _, P, x = _posterior(Y, W, mu, gamma, sigma2)
    v = 1.0 / P
    return PosteriorMoments(_readonly(x), _readonly(v), _readonly(x * x + v))


def marginal_neg2_pll(panel: IndicatorPanel, weights: WeightMatrix, params: ModelParams) -> float:
    """-2 x marginal pseudo log-likelihood, summed over subjects."""
    return neg2_pll_value(*_arrays(panel, weights, params))


def subject_neg2_pll(panel: IndicatorPanel, weights: WeightMatrix, params: ModelParams) -> np.ndarray:
    """Per-subject contributions to :func:`marginal_neg2_pll`."""
    return subject_terms(*_arrays(panel, weights, params))[0]


def marginal_neg2_pll_gradient(
    panel: IndicatorPanel, weights: WeightMatrix, params: ModelParams
) -> np.ndarray:
    """Analytic gradient of :func:`marginal_neg2_pll`.

    Ordered as ``(d/dmu_1..m, d/dgamma_1..m, d/dlog sigma2_1..m)``.  With
    ``a = w / sigma2``, ``e = Y - mu - gamma x`` and posterior ``(x, v)`` the
    per-subject partials are ``-2 a e``, ``2 a (gamma v - x e)`` and
    ``w - a (e^2 + gamma^2 v)``.
    """
    return neg2_pll_and_gradient(*_arrays(panel, weights, params))[1]


# ---------------------------------------------------------------------------
# shared fit post-processing
# ---------------------------------------------------------------------------


def settle_boundary(Y, W, mu, gamma, sigma2, floor: float):
    """Move residual variances onto ``floor`` when doing so does not raise the objective.

    Near a degenerate solution the objective flattens out as ``sigma2 -> 0`` and
    iterative fitters stall above the floor.  Each variance is tried at the
    floor in turn; the move is kept only if the objective does not increase.
    Returns the new variances and the boundary flags.
    """
    sigma2 = np.maximum(np.array(sigma2, dtype=float), floor)
    best = neg2_pll_value(Y, W, mu, gamma, sigma2)
    for j in range(sigma2.size):
        if sigma2[j] <= floor:
            continue
        trial = sigma2.copy()
        trial[j] = floor
        val = neg2_pll_value(Y, W, mu, gamma, trial)
        if val <= best:
            sigma2, best = trial, val
    return sigma2, sigma2 <= floor * (1.0 + 1e-12)


def finalize_fit(
    panel: IndicatorPanel,
    weights: WeightMatrix,
    mu,
    gamma,
    sigma2,
    floor: float,
    **fields,
) -> FitResult:
    """Snap to the variance floor, fix the sign convention and attach latent scores."""
    Y, W = panel.scores, weights.weights
    sigma2, flags = settle_boundary(Y, W, mu, gamma, sigma2, floor)
    params = ModelParams(mu, gamma, sigma2).canonical()
    neg2, x, v = subject_terms(Y, W, params.mu, params.gamma, params.sigma2)
    return FitResult(
        params=params,
        alpha=_readonly(x),
        alpha_var=_readonly(v),
        boundary_flags=_readonly(np.asarray(flags)),
        objective=_fsum(neg2),
        **fields,
    )


def check_identifiable(panel: IndicatorPanel, weights: WeightMatrix) -> None:
    """Reject panels in which some indicator cannot be estimated."""
    check_aligned(panel, weights)
    n_obs = panel.observed.sum(axis=1)
    wsum = weights.weights.sum(axis=1)
    for j in range(panel.m):
        name = panel.indicator_names[j]
        if n_obs[j] < 2:
            raise UnidentifiableIndicatorError(
                f"indicator {name!r} has {n_obs[j]} observed subject(s); at least 2 are needed"
            )
        if not wsum[j] > 0:
            raise UnidentifiableIndicatorError(f"indicator {name!r} carries zero total weight")
