"""Multiplicative EM and variational Bayes for Poisson/KL tensor factorization.

Both engines work on plain ``numpy`` arrays laid out in the index order of
each :class:`~pltf.model.FactorSpec`; index bookkeeping goes through
:func:`pltf.tensor.contract`.

VB keeps, per factor, the Gamma posterior shape ``C`` and scale ``D`` together
with two derived views: the mean ``E = C*D`` and the geometric mean
``L = exp(digamma(C))*D``.  One epoch recomputes the ``L``- and ``E``-based
reconstructions, updates ``C, D, E`` for every factor in declaration order,
then refreshes every ``L``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from math import prod

import numpy as np
from scipy.special import digamma, gammaln

from .errors import SingularModelError
from .model import Observation, PltfModel, check_model, check_observation
from .tensor import contract, divide_zero_safe

__all__ = [
    "FactorState",
    "FitConfig",
    "FitResult",
    "LatentStats",
    "init_factors",
    "em_step",
    "vb_step",
    "compute_bound",
    "latent_stats",
    "kl_divergence",
    "gamma_kl",
    "reconstruct",
    "fit",
]

logger = logging.getLogger(__name__)

DIGAMMA_FLOOR = 1e-8


@dataclass
class FactorState:
    """Gamma posterior of one factor and its two expectation views."""

    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    L: np.ndarray

    @classmethod
    def from_gamma(cls, C, D):
        C = np.asarray(C, dtype=float)
        D = np.asarray(D, dtype=float)
        return cls(C, D, C * D, np.exp(_digamma(C)) * D)

    def copy(self):
        return FactorState(self.C.copy(), self.D.copy(), self.E.copy(), self.L.copy())


@dataclass
class FitConfig:
    method: str = "vb"
    max_iters: int = 2000
    tol: float = 0.0
    seed: int = 0
    em_prior_mode: str = "flat"

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in ("vb", "em"):
            raise ValueError(f"method must be 'vb' or 'em', got {self.method!r}")
        if self.em_prior_mode not in ("flat", "full"):
            raise ValueError(f"em_prior_mode must be 'flat' or 'full', got {self.em_prior_mode!r}")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``factors`` holds the point estimate of every factor: the posterior mean
    ``E`` for VB, ``Z`` for EM.  ``states`` is only populated by VB.
    """

    method: str
    factors: list
    states: list | None
    bound_trace: list = field(default_factory=list)
    divergence_trace: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    seed: int = 0

    @property
    def bound(self) -> float:
        return self.bound_trace[-1] if self.bound_trace else float("nan")

    @property
    def divergence(self) -> float:
        return self.divergence_trace[-1] if self.divergence_trace else float("nan")

    @property
    def score(self) -> float:
        """Higher is better: the bound for VB, minus the divergence for EM."""
        return self.bound if self.method == "vb" else -self.divergence

    def reconstruction(self, model: PltfModel) -> np.ndarray:
        return reconstruct(model, self.factors)


@dataclass
class LatentStats:
    """Posterior cell probabilities and expected latent counts over all of V.

    ``identity_residual`` is the largest absolute gap, over factors, between
    the masked marginal of ``S_expect`` and its factored form
    ``L * Delta_L(M * X / Xhat_L)``.
    """

    names: tuple
    P: np.ndarray
    S_expect: np.ndarray
    intensity: np.ndarray
    identity_residual: float

    def marginal(self, model: PltfModel, obs: Observation, alpha: int) -> np.ndarray:
        """Masked sum of expected counts over every index outside factor ``alpha``."""
        return contract(
            [(self.names, self.S_expect), (model.observed, obs.M)],
            model.factors[alpha].indices,
        )


def _digamma(x):
    x = np.asarray(x, dtype=float)
    if x.size and x.min() < DIGAMMA_FLOOR:
        warnings.warn(
            f"digamma argument below {DIGAMMA_FLOOR:g} clamped", RuntimeWarning, stacklevel=3
        )
        x = np.maximum(x, DIGAMMA_FLOOR)
    return digamma(x)


def _operands(model, views, skip=None):
    return [(f.indices, v) for k, (f, v) in enumerate(zip(model.factors, views)) if k != skip]


def reconstruct(model: PltfModel, views) -> np.ndarray:
    """Model output over the visible indices from one view of every factor."""
    return contract(_operands(model, views), model.observed)


def _delta(model, alpha, Q, views):
    return contract(
        [(model.observed, Q)] + _operands(model, views, skip=alpha),
        model.factors[alpha].indices,
        model.sizes,
    )


def _ratio(obs, xhat):
    # Singular cells raise here.
    return divide_zero_safe(obs.M * obs.X, xhat)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_factors(model: PltfModel, seed) -> list[FactorState]:
    """Draw ``L`` and ``E`` independently from each factor's prior.

    ``C`` and ``D`` are back-filled as ``C = A`` and ``D = E / A`` so that
    ``E = C * D`` holds; ``L`` is an independent draw and only becomes
    consistent with ``C, D`` after the first VB epoch.  Clamped factors get
    ``E = L = value``.
    """
    rng = np.random.default_rng(seed)
    states = []
    for f in model.factors:
        a = f.prior.shape
        if f.clamped:
            value = np.array(f.value, dtype=float)
            states.append(FactorState(a.copy(), value / a, value.copy(), value.copy()))
            continue
        scale = f.prior.scale
        L = rng.gamma(a, scale)
        E = rng.gamma(a, scale)
        states.append(FactorState(a.copy(), E / a, E, L))
    return states


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

def em_step(factors, model: PltfModel, obs: Observation, mode: str = "flat"):
    """One sweep of multiplicative EM over the unclamped factors.

    The reconstruction is recomputed before every factor update.  ``mode``
    ``"flat"`` applies ``Z <- Z * Delta(M*X/Xhat) / Delta(M)``; ``"full"``
    keeps the prior terms, ``Z <- ((A-1) + Z*Delta(M*X/Xhat)) / (A/B +
    Delta(M))``, clipped at zero.
    """
    Z = [np.asarray(z, dtype=float) for z in factors]
    for alpha, f in enumerate(model.factors):
        if f.clamped:
            continue
        xhat = reconstruct(model, Z)
        num = Z[alpha] * _delta(model, alpha, _ratio(obs, xhat), Z)
        den = _delta(model, alpha, obs.M, Z)
        if mode == "flat":
            Z[alpha] = divide_zero_safe(num, den)
        elif mode == "full":
            a = f.prior.shape
            top = (a - 1.0) + num
            if np.any(top < 0):
                warnings.warn(
                    f"full-prior EM produced negative values in factor {f.name!r}; clipped to 0",
                    RuntimeWarning,
                    stacklevel=2,
                )
                top = np.maximum(top, 0.0)
            Z[alpha] = top / (a / f.prior.scale_mean + den)
        else:
            raise ValueError(f"unknown EM mode {mode!r}")
    return Z


def kl_divergence(X, X_hat, M=None) -> float:
    """Masked generalized KL divergence ``sum M (X log(X/Xhat) - X + Xhat)``."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    X_hat = np.asarray(getattr(X_hat, "values", X_hat), dtype=float)
    M = np.ones_like(X) if M is None else np.asarray(getattr(M, "values", M), dtype=float)
    if X.shape != X_hat.shape or X.shape != M.shape:
        raise ValueError(f"shape mismatch: {X.shape}, {X_hat.shape}, {M.shape}")
    on = M != 0
    pos = on & (X > 0)
    bad = pos & (X_hat <= 0)
    if bad.any():
        cell = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SingularModelError(f"positive count with zero model output at cell {cell}", cell=cell)
    log_term = np.zeros_like(X)
    log_term[pos] = X[pos] * np.log(X[pos] / X_hat[pos])
    return float(np.sum(M * (log_term - X + X_hat)))


# ---------------------------------------------------------------------------
# Variational Bayes
# ---------------------------------------------------------------------------

def _vb_update(model, obs, states, xhat_L):
    ratio = _ratio(obs, xhat_L)
    L_views = [s.L for s in states]
    E_views = [s.E for s in states]
    new = list(states)
    updated = []
    for alpha, f in enumerate(model.factors):
        if f.clamped:
            continue
        a = f.prior.shape
        C = a + L_views[alpha] * _delta(model, alpha, ratio, L_views)
        D = 1.0 / (a / f.prior.scale_mean + _delta(model, alpha, obs.M, E_views))
        E = C * D
        # Later factors in this sweep see the refreshed mean.
        E_views[alpha] = E
        new[alpha] = (C, D, E)
        updated.append(alpha)
    for alpha in updated:
        C, D, E = new[alpha]
        new[alpha] = FactorState(C, D, E, np.exp(_digamma(C)) * D)
    return new


def vb_step(states, model: PltfModel, obs: Observation) -> list[FactorState]:
    """One VB epoch: new ``C, D, E`` for every unclamped factor, then new ``L``."""
    xhat_L = reconstruct(model, [s.L for s in states])
    return _vb_update(model, obs, states, xhat_L)


def gamma_kl(C, D, A, scale):
    """Elementwise KL(Gamma(C, D) || Gamma(A, scale)), shape/scale form."""
    return (
        (C - A) * digamma(C)
        - gammaln(C)
        + gammaln(A)
        + A * (np.log(scale) - np.log(D))
        + C * (D / scale - 1.0)
    )


def _bound(model, obs, states, xhat_L, xhat_E):
    X, M = obs.X, obs.M
    on = M != 0
    pos = on & (X > 0)
    bad = pos & (xhat_L <= 0)
    if bad.any():
        cell = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SingularModelError(f"zero geometric-mean intensity at observed cell {cell}", cell=cell)
    data = np.sum(X[pos] * np.log(xhat_L[pos]))
    data -= np.sum(xhat_E[on]) + np.sum(gammaln(X[on] + 1.0))
    prior = 0.0
    for f, s in zip(model.factors, states):
        if f.clamped:
            continue
        prior -= np.sum(gamma_kl(s.C, s.D, f.prior.shape, f.prior.scale))
    value = float(data + prior)
    if not np.isfinite(value):
        raise SingularModelError("variational bound is not finite")
    return value


def compute_bound(states, model: PltfModel, obs: Observation) -> float:
    """Variational lower bound on ``log p(X)`` for the current ``q(Z)``.

    The latent counts are integrated with their optimal multinomial posterior,
    leaving ``sum_M [X log Xhat_L - Xhat_E - log Gamma(X+1)]`` minus the Gamma
    KL of every unclamped factor element from its prior.
    """
    xhat_L = reconstruct(model, [s.L for s in states])
    xhat_E = reconstruct(model, [s.E for s in states])
    return _bound(model, obs, states, xhat_L, xhat_E)


def latent_stats(states, model: PltfModel, obs: Observation, max_configs: int = 10**6) -> LatentStats:
    """Materialize cell probabilities and expected latent counts over all of V.

    Only meant for small models; raises ``ValueError`` when the full latent
    configuration count exceeds ``max_configs``.
    """
    names = tuple(ix.name for ix in model.indices)
    total = prod(ix.cardinality for ix in model.indices)
    if total > max_configs:
        raise ValueError(f"{total} latent configurations exceed the limit of {max_configs}")
    L_views = [s.L for s in states]
    intensity = contract(_operands(model, L_views), names)
    xhat_L = contract([(names, intensity)], model.observed)
    expand = [names.index(n) for n in model.observed]
    # Broadcast an observed-index array against the full V layout.
    shape = [1] * len(names)
    for ax, n in zip(expand, model.observed):
        shape[ax] = model.sizes[n]
    order = np.argsort(expand)
    def lift(arr):
        return arr.transpose(order).reshape(shape)
    P = divide_zero_safe(intensity, lift(xhat_L))
    S = lift(obs.X) * P

    stats = LatentStats(names, P, S, intensity, 0.0)
    ratio = _ratio(obs, xhat_L)
    residual = 0.0
    for alpha in range(len(model.factors)):
        direct = stats.marginal(model, obs, alpha)
        factored = L_views[alpha] * _delta(model, alpha, ratio, L_views)
        residual = max(residual, float(np.max(np.abs(direct - factored))))
    stats.identity_residual = residual
    return stats


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def _stop(trace, tol):
    if tol <= 0 or len(trace) < 2:
        return False
    prev = trace[-2]
    return abs(trace[-1] - prev) < tol * max(abs(prev), np.finfo(float).tiny)


def fit(model: PltfModel, obs: Observation, config: FitConfig | None = None) -> FitResult:
    """Fit ``model`` to ``obs`` with EM or VB.

    Runs ``config.max_iters`` epochs, or stops early once the relative change
    of the monitored trace (bound for VB, divergence for EM) drops below
    ``config.tol``.  Deterministic for a given seed.

    Raises
    ------
    ValidationError
        The model or observation shape is invalid.
    SingularModelError
        A masked-in positive count received zero intensity; ``iteration`` is
        set on the exception.
    """
    config = config or FitConfig()
    check_model(model)
    check_observation(model, obs)
    states = init_factors(model, config.seed)
    result = FitResult(config.method, [], None, seed=config.seed)
    it = 0
    try:
        if config.method == "vb":
            xhat_L = reconstruct(model, [s.L for s in states])
            for it in range(config.max_iters):
                states = _vb_update(model, obs, states, xhat_L)
                xhat_L = reconstruct(model, [s.L for s in states])
                xhat_E = reconstruct(model, [s.E for s in states])
                result.bound_trace.append(_bound(model, obs, states, xhat_L, xhat_E))
                if _stop(result.bound_trace, config.tol):
                    result.converged = True
                    break
            result.states = states
            result.factors = [s.E for s in states]
        else:
            Z = [s.E for s in states]
            for it in range(config.max_iters):
                Z = em_step(Z, model, obs, config.em_prior_mode)
                result.divergence_trace.append(kl_divergence(obs.X, reconstruct(model, Z), obs.M))
                if _stop(result.divergence_trace, config.tol):
                    result.converged = True
                    break
            result.factors = Z
    except SingularModelError as exc:
        raise SingularModelError(f"iteration {it}: {exc}", cell=exc.cell, iteration=it) from exc
    result.iterations_run = it + 1
    logger.debug("%s fit finished after %d iterations", config.method, result.iterations_run)
    return result
