"""Closed-form stability theory for NAG-GS on quadratics.

For f(x) = 1/2 x^T A x with A having extreme eigenvalues (mu, L), a constant
step alpha and a fixed scaling factor gamma, the deterministic part of the
NAG-GS update is linear: y_{k+1} = E y_k with y = (x_1, x_2, v_1, v_2) in the
2-D model. This module builds E, evaluates the closed-form eigenvalues, the
rate-optimal and critical step sizes, and solves the stationary-covariance
discrete Lyapunov equation C = E C E^T + Q via its Kronecker vectorization.

In n dimensions the analysis decouples: an orthogonal change of basis plus a
permutation reduce the 2n x 2n iteration matrix to independent 2x2 blocks,
one per eigenvalue of A, so every n-dimensional question routes through
:func:`mode_matrix` / :func:`mode_eigenvalues`.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .optimizers import NagGsConfig, initial_state, nag_gs_propose, nag_gs_step

__all__ = [
    "SpectrumConfig",
    "StabilityReport",
    "StationaryCovariance",
    "NonStationaryError",
    "mode_matrix",
    "mode_eigenvalues",
    "mode_pairs",
    "build_iteration_matrix",
    "build_full_matrix",
    "iteration_eigenvalues",
    "optimal_alpha",
    "critical_alpha",
    "spectral_radius",
    "system_spectral_radius",
    "spectral_radius_curve",
    "stability_report",
    "stationary_covariance",
    "montecarlo_covariance_check",
    "covariance_denominator_cubic",
]


class NonStationaryError(RuntimeError):
    """The Lyapunov equation has no PSD solution because rho(E) >= 1."""


@dataclass(frozen=True)
class SpectrumConfig:
    """Parameters of the 2-D model: curvature endpoints (mu, L) of A, the
    scheme's gamma and alpha, and the noise volatility sigma."""

    mu: float
    L: float
    gamma: float
    alpha: float
    sigma: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.mu <= self.L):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def tau(self):
        return self.alpha * self.mu / self.gamma


@dataclass(frozen=True)
class StabilityReport:
    """Eigenvalues of E with the derived step-size landmarks."""

    eigenvalues: np.ndarray  # four complex numbers
    spectral_radius: float
    alpha_star: float
    alpha_crit: Optional[float]
    stable: bool

    def to_dict(self):
        return {
            "eigenvalues": [{"re": z.real, "im": z.imag} for z in self.eigenvalues],
            "spectral_radius": self.spectral_radius,
            "alpha_star": self.alpha_star,
            "alpha_crit": self.alpha_crit,
            "stable": self.stable,
        }


@dataclass(frozen=True)
class StationaryCovariance:
    """Solution of C = E C E^T + Q with its eigenvalues; ``warning`` is set
    when the Kronecker system was badly conditioned."""

    C: np.ndarray
    eigenvalues: np.ndarray
    warning: Optional[str] = None


def mode_matrix(lam, alpha, gamma, mu):
    """2x2 iteration block of the (x, v) pair for one curvature lam.

    The scheme parameters (alpha, gamma, mu) are global; only the curvature
    differs between modes.
    """
    tau = alpha * mu / gamma
    coupling = alpha * (mu - lam) / (gamma * (1.0 + tau) * (1.0 + alpha))
    return np.array([
        [1.0 / (1.0 + alpha), alpha / (1.0 + alpha)],
        [coupling, alpha * coupling + 1.0 / (1.0 + tau)],
    ])


def mode_eigenvalues(lam, alpha, gamma, mu):
    """Closed-form multipliers of :func:`mode_matrix`, complex when the
    discriminant is negative."""
    d = lam - mu
    num = 2.0 * gamma + alpha * gamma + alpha * mu - alpha * alpha * d
    den = 2.0 * (gamma + alpha * gamma + alpha * mu + alpha * alpha * mu)
    disc = (alpha * d) ** 2 - 2.0 * alpha * d * (mu + gamma) + (mu + gamma) ** 2 \
        - 4.0 * gamma * lam
    root = cmath.sqrt(disc)
    lam_plus = (num + alpha * root) / den
    lam_minus = (num - alpha * root) / den
    return lam_plus, lam_minus


def mode_pairs(eigenvalues):
    """Group a spectrum into the 2-D analysis blocks: consecutive pairs in
    ascending order, duplicating the last eigenvalue when n is odd."""
    eigs = sorted(float(v) for v in eigenvalues)
    if len(eigs) % 2 == 1:
        eigs.append(eigs[-1])
    return [(eigs[i], eigs[i + 1]) for i in range(0, len(eigs), 2)]


def build_iteration_matrix(cfg):
    """Explicit 4x4 matrix E in the ordering y = (x1, x2, v1, v2)."""
    E = np.zeros((4, 4))
    for i, lam in enumerate((cfg.mu, cfg.L)):
        block = mode_matrix(lam, cfg.alpha, cfg.gamma, cfg.mu)
        E[i, i] = block[0, 0]
        E[i, i + 2] = block[0, 1]
        E[i + 2, i] = block[1, 0]
        E[i + 2, i + 2] = block[1, 1]
    return E


def build_full_matrix(eigenvalues, alpha, gamma, mu):
    """2n x 2n iteration matrix for a diagonal A, ordering y = (x, v)."""
    eigs = np.asarray(eigenvalues, dtype=float)
    n = eigs.size
    E = np.zeros((2 * n, 2 * n))
    for i, lam in enumerate(eigs):
        block = mode_matrix(lam, alpha, gamma, mu)
        E[i, i] = block[0, 0]
        E[i, i + n] = block[0, 1]
        E[i + n, i] = block[1, 0]
        E[i + n, i + n] = block[1, 1]
    return E


def iteration_eigenvalues(cfg):
    """The four closed-form eigenvalues (lam1, lam2, lam3, lam4) of E.

    lam1 = gamma/(gamma + alpha mu) and lam2 = 1/(1 + alpha) come from the
    mu-mode (its block is triangular); lam3/lam4 are the L-mode multipliers.
    """
    lam1 = cfg.gamma / (cfg.gamma + cfg.alpha * cfg.mu)
    lam2 = 1.0 / (1.0 + cfg.alpha)
    lam3, lam4 = mode_eigenvalues(cfg.L, cfg.alpha, cfg.gamma, cfg.mu)
    return np.array([lam1, lam2, lam3, lam4], dtype=complex)


def spectral_radius(cfg):
    return float(np.max(np.abs(iteration_eigenvalues(cfg))))


def system_spectral_radius(eigenvalues, alpha, gamma, mu):
    """rho of the full 2n x 2n matrix via the decoupled per-mode blocks."""
    rho = 0.0
    for lam_a, lam_b in mode_pairs(eigenvalues):
        for lam in (lam_a, lam_b):
            p, m = mode_eigenvalues(lam, alpha, gamma, mu)
            rho = max(rho, abs(p), abs(m))
    return rho


def optimal_alpha(mu, L, gamma):
    """Step size minimizing rho(E); +inf when the problem has kappa = 1.

    (2 mu + 2 sqrt(mu L)) / (L - mu)                       for gamma = mu,
    (mu + gamma + sqrt((mu-gamma)^2 + 4 gamma L)) / (L-mu) for gamma > mu.
    The two branches coincide at gamma = mu.
    """
    if not (0.0 < mu <= L):
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if gamma < mu:
        raise ValueError(f"gamma >= mu required, got gamma={gamma}, mu={mu}")
    if L == mu:
        return math.inf
    if gamma == mu:
        return (2.0 * mu + 2.0 * math.sqrt(mu * L)) / (L - mu)
    return (mu + gamma + math.sqrt((mu - gamma) ** 2 + 4.0 * gamma * L)) / (L - mu)


def critical_alpha(mu, L, gamma):
    """Step size at which rho(E) reaches 1; None when mu >= L/2 (the scheme
    is then stable for every positive alpha)."""
    if not (0.0 < mu <= L):
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if not gamma > 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if mu >= L / 2.0:
        return None
    disc = gamma * gamma - 6.0 * gamma * mu + mu * mu + 4.0 * gamma * L
    return (mu + gamma + math.sqrt(disc)) / (L - 2.0 * mu)


def covariance_denominator_cubic(alpha, mu, L, gamma):
    """Common denominator polynomial of the stationary-covariance eigenvalues;
    its unique positive root (when mu < L/2) is the covariance asymptote and
    coincides with :func:`critical_alpha`."""
    return (mu * (2.0 * mu - L) * alpha ** 3
            + (mu + gamma) * (4.0 * mu - L) * alpha ** 2
            + (2.0 * mu * mu + 8.0 * gamma * mu + 2.0 * gamma * gamma) * alpha
            + 4.0 * gamma * (mu + gamma))


def spectral_radius_curve(mu, L, gamma, alphas):
    """Table of (alpha, rho(E(alpha))) with built-in sanity checks.

    Past the rate-optimal step the radius must grow strictly; a violation
    indicates a broken formula and raises rather than returning bad data.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size == 0:
        raise ValueError("alphas must be a non-empty 1-D sequence")
    if np.any(alphas <= 0.0):
        raise ValueError("alphas must be positive")
    rho = np.array([
        spectral_radius(SpectrumConfig(mu=mu, L=L, gamma=gamma, alpha=a))
        for a in alphas
    ])
    alpha_star = optimal_alpha(mu, L, gamma)
    past = alphas >= alpha_star
    idx = np.nonzero(past)[0]
    for i, j in zip(idx[:-1], idx[1:]):
        if not rho[j] > rho[i] - 1e-12:
            raise RuntimeError(
                f"spectral radius not increasing past alpha_star: "
                f"rho({alphas[i]:g})={rho[i]:.15g} vs rho({alphas[j]:g})={rho[j]:.15g}")
    return np.column_stack([alphas, rho])


def stability_report(cfg):
    eigs = iteration_eigenvalues(cfg)
    rho = float(np.max(np.abs(eigs)))
    return StabilityReport(
        eigenvalues=eigs,
        spectral_radius=rho,
        alpha_star=optimal_alpha(cfg.mu, cfg.L, cfg.gamma),
        alpha_crit=critical_alpha(cfg.mu, cfg.L, cfg.gamma),
        stable=rho < 1.0,
    )


def _noise_intensity(cfg):
    return cfg.alpha * cfg.sigma ** 2 / (1.0 + cfg.tau) ** 2


def _solve_discrete_lyapunov(E, Q):
    """Solve C = E C E^T + Q through (I - E (x) E) vec(C) = vec(Q).

    Direct LU on the fixed 16x16 system; returns (C, condition estimate).
    With row-major vec, vec(E C E^T) = (E (x) E) vec(C) because the right
    factor is E^T.
    """
    n = E.shape[0]
    M = np.eye(n * n) - np.kron(E, E)
    cond = float(np.linalg.cond(M))
    C = np.linalg.solve(M, Q.reshape(-1)).reshape(n, n)
    return 0.5 * (C + C.T), cond


def stationary_covariance(cfg):
    """Stationary second-moment matrix of y = (x1, x2, v1, v2).

    Q is zero except for the v-block, which receives alpha sigma^2/(1+tau)^2
    per coordinate (the injected noise term of the v-update). Raises
    NonStationaryError when rho(E) >= 1; attaches a warning when the
    Kronecker system is near-singular (condition above 1e12).
    """
    E = build_iteration_matrix(cfg)
    rho = float(np.max(np.abs(np.linalg.eigvals(E))))
    if rho >= 1.0:
        raise NonStationaryError(
            f"rho(E) = {rho:.12g} >= 1; no stationary covariance exists")
    Q = np.zeros((4, 4))
    q = _noise_intensity(cfg)
    Q[2, 2] = Q[3, 3] = q
    C, cond = _solve_discrete_lyapunov(E, Q)
    warning = None
    if cond > 1e12:
        warning = f"Kronecker system condition {cond:.3g} exceeds 1e12"
    return StationaryCovariance(C=C, eigenvalues=np.linalg.eigvalsh(C),
                                warning=warning)


def montecarlo_covariance_check(cfg, n_traj=20000, n_steps=80, seed=0):
    """Empirical second-moment matrix of y after n_steps, for validation of
    :func:`stationary_covariance`.

    Runs n_traj NAG-GS trajectories on the diagonal 2-D quadratic
    A = diag(mu, L) through the public stepper (fixed gamma, so the linear
    theory applies), starting from x = v = 0 so the second moment equals the
    covariance. Pass n_steps large enough for burn-in at the given alpha.
    """
    gs_cfg = NagGsConfig(alpha=cfg.alpha, mu=cfg.mu, gamma0=cfg.gamma,
                         sigma=cfg.sigma, update_gamma=False)
    d = np.array([cfg.mu, cfg.L])
    rng = np.random.default_rng(seed)
    state = initial_state(np.zeros((n_traj, 2)), cfg.gamma)
    for _ in range(n_steps):
        x_next = nag_gs_propose(state, gs_cfg)
        noise = rng.standard_normal((n_traj, 2)) if cfg.sigma > 0.0 else None
        state = nag_gs_step(state, x_next * d, gs_cfg, noise=noise)
    y = np.concatenate([state.x, state.v], axis=1)
    return y.T @ y / n_traj
