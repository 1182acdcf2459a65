"""Optimizer steppers: NAG-GS, its fully implicit variant NAG-FI, and the
SGD-with-momentum / AdamW baselines.

All steppers are pure functions from (state, inputs, config) to a new state;
input arrays are never written to. State arrays may carry a leading batch
axis, in which case the update applies elementwise across the batch (the
NAG-GS coefficients are scalars, so a batch of trajectories shares one
config and one gamma).

NAG-GS uses a two-phase contract: the gradient must be evaluated at the
point returned by :func:`nag_gs_propose`, then fed to :func:`nag_gs_step`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "OptimizerState",
    "AdamWState",
    "NagGsConfig",
    "NagFiConfig",
    "GradientOracle",
    "DivergenceError",
    "DomainError",
    "NewtonError",
    "initial_state",
    "nag_gs_propose",
    "nag_gs_step",
    "nag_fi_step",
    "sgd_momentum_step",
    "adamw_step",
    "nesterov_alpha",
    "is_diverged",
    "diverged_mask",
]

DIVERGENCE_THRESHOLD = 1e8


class DivergenceError(RuntimeError):
    """A gradient or state contains non-finite entries."""


class DomainError(RuntimeError):
    """The scheme left its admissible parameter domain (gamma or
    alpha*mu + gamma became non-positive), which only happens for
    negative mu."""


class NewtonError(RuntimeError):
    """Newton-Raphson inner solve failed."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class OptimizerState:
    """Paired iterate (x, v) plus the scaling factor gamma.

    ``v`` doubles as the momentum buffer for sgd_momentum_step.
    """

    x: np.ndarray
    v: np.ndarray
    gamma: float
    step_count: int = 0

    def __post_init__(self):
        if self.x.shape != self.v.shape:
            raise ValueError(f"x and v shapes differ: {self.x.shape} vs {self.v.shape}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class AdamWState:
    """AdamW iterate with first/second moment buffers."""

    x: np.ndarray
    m: np.ndarray
    s: np.ndarray
    step_count: int = 0


@dataclass(frozen=True)
class NagGsConfig:
    alpha: float
    mu: float = 0.0
    gamma0: float = 1.0
    sigma: float = 0.0
    update_gamma: bool = True

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.gamma0 > 0.0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        # negative mu is allowed only while alpha*mu + gamma stays positive;
        # check the first step's gamma so bad configs fail loudly up front
        gamma1 = self._first_gamma()
        if gamma1 <= 0.0 or self.alpha * self.mu + gamma1 <= 0.0:
            raise ValueError(
                f"inadmissible config: alpha*mu + gamma = "
                f"{self.alpha * self.mu + gamma1:g} at the first step")

    def _first_gamma(self):
        if not self.update_gamma:
            return self.gamma0
        a = self.alpha / (self.alpha + 1.0)
        return (1.0 - a) * self.gamma0 + a * self.mu


@dataclass(frozen=True)
class NagFiConfig:
    alpha: float
    mu: float = 0.0
    gamma0: float = 1.0
    sigma: float = 0.0
    newton_tol: float = 1e-10
    newton_max_iter: int = 50

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.gamma0 > 0.0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if not self.newton_tol > 0.0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be positive")


@dataclass(frozen=True)
class GradientOracle:
    """Matrix-free objective access: gradient plus optional Hessian-vector
    product (needed by NAG-FI and the spectrum module)."""

    dim: int
    eval_grad: Callable[[np.ndarray], np.ndarray]
    eval_hessian_apply: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


def initial_state(x0, gamma0, v0=None):
    """State at step 0; v defaults to a copy of x (Algorithm start v0 = x0)."""
    x0 = np.array(x0, dtype=float)
    v0 = x0.copy() if v0 is None else np.array(v0, dtype=float)
    return OptimizerState(x=x0, v=v0, gamma=float(gamma0), step_count=0)


def _next_gamma(gamma, cfg):
    if not cfg.update_gamma:
        return gamma
    a = cfg.alpha / (cfg.alpha + 1.0)
    return (1.0 - a) * gamma + a * cfg.mu


def nag_gs_propose(state, cfg):
    """x_{k+1} = (1 - a_k) x_k + a_k v_k with a_k = alpha/(alpha+1).

    Does not mutate the state; the caller must evaluate the gradient at the
    returned point before calling :func:`nag_gs_step`.
    """
    a = cfg.alpha / (cfg.alpha + 1.0)
    return (1.0 - a) * state.x + a * state.v


def nag_gs_step(state, grad, cfg, noise=None):
    """One NAG-GS step given the gradient at the proposed point x_{k+1}.

    The v-update is written as v' = (1-b_k) v + b_k x' - alpha/(alpha mu +
    gamma') grad, which is finite for mu = 0 (the mu^-1 b_k coefficient has
    a removable singularity there). With ``noise`` supplied (SDE mode) the
    term sigma sqrt(alpha) noise / (1 + alpha mu / gamma') is added to v'.

    Raises DivergenceError on non-finite gradients so the caller can mark
    the trajectory instead of silently propagating NaN.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.x.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match state {state.x.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient entries")

    alpha, mu = cfg.alpha, cfg.mu
    a = alpha / (alpha + 1.0)
    gamma_next = _next_gamma(state.gamma, cfg)
    denom = alpha * mu + gamma_next
    if gamma_next <= 0.0 or denom <= 0.0:
        raise DomainError(
            f"alpha*mu + gamma = {denom:g} at step {state.step_count}; "
            "the scheme is outside its admissible domain")

    x_next = (1.0 - a) * state.x + a * state.v
    b = alpha * mu / denom
    v_next = (1.0 - b) * state.v + b * x_next - (alpha / denom) * grad
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != state.x.shape:
            raise ValueError(f"noise shape {noise.shape} does not match state {state.x.shape}")
        tau = alpha * mu / gamma_next
        v_next = v_next + cfg.sigma * math.sqrt(alpha) / (1.0 + tau) * noise
    return OptimizerState(x=x_next, v=v_next, gamma=gamma_next,
                          step_count=state.step_count + 1)


def nag_fi_step(state, oracle, cfg, noise=None):
    """One fully implicit step: the new iterate solves a fixed-point equation.

    gamma' = (gamma + alpha mu)/(1 + alpha), tau = 1/alpha + mu/gamma', and
    x' is the root of

        g(u) = u - (v + tau x - (alpha/gamma') grad f(u) + sigma sqrt(alpha) eta)
                   / (1 + tau)

    found by Newton-Raphson with J_g(u) = I + alpha/(gamma' (1+tau)) H(u),
    started at u0 = x. Then v' = (x' - x)/alpha + x'. For quadratics g is
    affine and Newton converges in a single iteration.
    """
    if oracle.eval_hessian_apply is None:
        raise ValueError("nag_fi_step needs an oracle with eval_hessian_apply")
    x, v = state.x, state.v
    if x.ndim != 1:
        raise ValueError("nag_fi_step operates on single states, not batches")
    alpha, mu = cfg.alpha, cfg.mu
    gamma_next = (state.gamma + alpha * mu) / (1.0 + alpha)
    if gamma_next <= 0.0:
        raise DomainError(f"gamma = {gamma_next:g} at step {state.step_count}")
    tau = 1.0 / alpha + mu / gamma_next

    target = v + tau * x
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != x.shape:
            raise ValueError(f"noise shape {noise.shape} does not match state {x.shape}")
        target = target + cfg.sigma * math.sqrt(alpha) * noise

    c_grad = alpha / gamma_next
    c_hess = c_grad / (1.0 + tau)

    def residual(u):
        grad = np.asarray(oracle.eval_grad(u), dtype=float)
        if not np.all(np.isfinite(grad)):
            raise DivergenceError("non-finite gradient entries in Newton solve")
        r = u - (target - c_grad * grad) / (1.0 + tau)
        # rounding floor of the fixed-point map; large alpha/gamma' amplifies
        # gradient round-off, so a purely absolute tolerance is unreachable
        scale = 1.0 + float(np.linalg.norm(u)) + (
            float(np.linalg.norm(target))
            + c_grad * float(np.linalg.norm(grad))) / (1.0 + tau)
        return r, scale

    n = x.size
    eye = np.eye(n)
    u = x.copy()
    r, scale = residual(u)
    converged = float(np.linalg.norm(r)) <= cfg.newton_tol * scale
    for _ in range(cfg.newton_max_iter):
        if converged:
            break
        jac = np.empty((n, n))
        for j in range(n):
            jac[:, j] = oracle.eval_hessian_apply(u, eye[j])
        jac = eye + c_hess * jac
        try:
            du = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular Jacobian in Newton solve: {exc}",
                              residual=float(np.linalg.norm(r))) from None
        u = u - du
        r, scale = residual(u)
        converged = (float(np.linalg.norm(r)) <= cfg.newton_tol * scale
                     or float(np.linalg.norm(du))
                     <= cfg.newton_tol * (1.0 + float(np.linalg.norm(u))))
    if not converged:
        raise NewtonError(
            f"Newton did not converge in {cfg.newton_max_iter} iterations",
            residual=float(np.linalg.norm(r)))

    v_next = (u - x) / alpha + u
    return OptimizerState(x=u, v=v_next, gamma=gamma_next,
                          step_count=state.step_count + 1)


def sgd_momentum_step(state, grad, lr, momentum=0.9, weight_decay=0.0):
    """Heavy-ball update with decoupled weight decay; buffer lives in v.

    buf' = momentum * buf + grad;  x' = x - lr * buf' - lr * wd * x.
    """
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.x.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match state {state.x.shape}")
    buf = momentum * state.v + grad
    x_next = state.x - lr * buf - lr * weight_decay * state.x
    return OptimizerState(x=x_next, v=buf, gamma=state.gamma,
                          step_count=state.step_count + 1)


def adamw_step(state, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.0):
    """Standard AdamW with bias correction and decoupled weight decay."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.x.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match state {state.x.shape}")
    t = state.step_count + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    s = beta2 * state.s + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    s_hat = s / (1.0 - beta2 ** t)
    x_next = state.x - lr * m_hat / (np.sqrt(s_hat) + eps) - lr * weight_decay * state.x
    return AdamWState(x=x_next, m=m, s=s, step_count=t)


def adamw_initial_state(x0):
    x0 = np.array(x0, dtype=float)
    return AdamWState(x=x0, m=np.zeros_like(x0), s=np.zeros_like(x0))


def nesterov_alpha(L, gamma, mu):
    """Step size from Nesterov's rule L alpha^2 = (1 - alpha) gamma + alpha mu.

    Positive root of the quadratic; reduces to sqrt(mu/L) when gamma = mu.
    """
    if not L > 0.0:
        raise ValueError("L must be positive")
    d = gamma - mu
    return (-d + math.sqrt(d * d + 4.0 * L * gamma)) / (2.0 * L)


def diverged_mask(x, threshold=DIVERGENCE_THRESHOLD):
    """Boolean mask over the batch axis: non-finite or |x| above threshold."""
    x = np.asarray(x)
    flat = x.reshape(x.shape[0], -1) if x.ndim > 1 else x.reshape(-1, 1)
    bad = ~np.isfinite(flat) | (np.abs(flat) > threshold)
    return bad.any(axis=1)


def is_diverged(state, threshold=DIVERGENCE_THRESHOLD):
    """True if any entry of x or v is non-finite or exceeds the threshold."""
    for arr in (state.x, state.v):
        if not np.all(np.isfinite(arr)) or np.abs(arr).max() > threshold:
            return True
    return False
