"""Matrix-free extreme-eigenvalue estimation for symmetric operators.

Power iteration finds the eigenvalue of largest modulus (the Rayleigh
quotient recovers its sign); a spectral shift by that value turns the
opposite end of the spectrum into the dominant one, and a Rayleigh-quotient
refinement polishes both estimates. Operators are abstract Hessian-vector
products, so nothing here ever assembles a dense matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "LinearOperator",
    "EigenEstimate",
    "power_iteration",
    "rayleigh_refine",
    "extreme_eigenvalues",
]


@dataclass(frozen=True)
class LinearOperator:
    """A symmetric linear map given only through ``apply``."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_matrix(cls, H):
        H = np.asarray(H, dtype=float)
        return cls(dim=H.shape[0], apply=lambda v: H @ v)


@dataclass(frozen=True)
class EigenEstimate:
    value: float
    vector: np.ndarray  # unit norm
    residual: float  # ||H v - value v||
    converged: bool = True
    iterations: int = 0


def _validate_operator(op, rng, tol=1e-8, probes=2):
    """Probabilistic linearity and symmetry check on random probe pairs."""
    for _ in range(probes):
        u = rng.standard_normal(op.dim)
        v = rng.standard_normal(op.dim)
        Hu = np.asarray(op.apply(u), dtype=float)
        Hv = np.asarray(op.apply(v), dtype=float)
        if Hu.shape != (op.dim,):
            raise ValueError(f"apply returned shape {Hu.shape}, expected ({op.dim},)")
        scale = (np.linalg.norm(u) * np.linalg.norm(Hv)
                 + np.linalg.norm(v) * np.linalg.norm(Hu) + 1e-30)
        if abs(u @ Hv - Hu @ v) > tol * scale:
            raise ValueError("operator is not symmetric on random probes")
        a, b = 0.7, -1.3
        combo = np.asarray(op.apply(a * u + b * v), dtype=float)
        lin_scale = np.linalg.norm(a * Hu + b * Hv) + 1e-30
        if np.linalg.norm(combo - a * Hu - b * Hv) > tol * lin_scale:
            raise ValueError("operator is not linear on random probes")


def power_iteration(op, tol=1e-12, max_iter=500, seed=0):
    """Dominant-modulus eigenvalue estimate.

    Iterates v <- H v / ||H v|| from a random unit start and stops when the
    Rayleigh quotient settles to ``tol`` (relative) or max_iter is hit; the
    returned ``converged`` flag records which. The Rayleigh quotient, not
    the norm growth, supplies the value, so its sign is correct.
    """
    rng = np.random.default_rng(seed)
    _validate_operator(op, rng)
    v = rng.standard_normal(op.dim)
    v /= np.linalg.norm(v)
    theta_prev = np.inf
    theta = 0.0
    converged = False
    it = 0
    w = np.asarray(op.apply(v), dtype=float)
    for it in range(1, max_iter + 1):
        theta = float(v @ w)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # v lies in the kernel and the quotient is exactly zero
            return EigenEstimate(0.0, v, 0.0, True, it)
        if abs(theta - theta_prev) <= tol * max(1.0, abs(theta)):
            converged = True
            break
        theta_prev = theta
        v = w / norm_w
        w = np.asarray(op.apply(v), dtype=float)
    residual = float(np.linalg.norm(w - theta * v))
    return EigenEstimate(theta, v, residual, converged, it)


def rayleigh_refine(op, v0, tol=1e-10, max_iter=200):
    """Polish an eigenpair by ascent on the Rayleigh-quotient modulus.

    Each step does an exact line search in the plane spanned by the current
    vector and the quotient's gradient direction r = Hv - theta v (a 2x2
    Rayleigh-Ritz solve), and keeps the Ritz pair of largest modulus. An
    exact eigenvector returns immediately with zero refinement steps.
    Stagnation before the residual target returns converged=False.
    """
    v = np.asarray(v0, dtype=float).copy()
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("v0 must be nonzero")
    v /= norm
    theta = 0.0
    residual = np.inf
    for it in range(max_iter + 1):
        w = np.asarray(op.apply(v), dtype=float)
        theta = float(v @ w)
        r = w - theta * v
        residual = float(np.linalg.norm(r))
        if residual <= tol * max(1.0, abs(theta)):
            return EigenEstimate(theta, v, residual, True, it)
        if it == max_iter:
            break
        q = r / residual
        # rounding in r leaks a v-component of order eps/residual; without
        # this re-orthogonalization the Ritz cross term picks up theta * (v.q)
        # and the refinement floors near sqrt(eps)
        q = q - (v @ q) * v
        norm_q = np.linalg.norm(q)
        if norm_q == 0.0:
            break
        q = q / norm_q
        z = np.asarray(op.apply(q), dtype=float)
        cross = float(v @ z)
        T = np.array([[theta, cross], [cross, float(q @ z)]])
        vals, vecs = np.linalg.eigh(T)
        # keep the Ritz value of largest modulus; on a near-tie prefer the
        # Ritz vector closest to the current iterate for continuity
        if abs(abs(vals[0]) - abs(vals[1])) <= 1e-12 * max(1.0, abs(vals).max()):
            pick = int(np.argmax(np.abs(vecs[0, :])))
        else:
            pick = int(np.argmax(np.abs(vals)))
        v_new = vecs[0, pick] * v + vecs[1, pick] * q
        v = v_new / np.linalg.norm(v_new)
    return EigenEstimate(theta, v, residual, False, max_iter)


def extreme_eigenvalues(op, tol=1e-10, max_iter=500, seed=0):
    """Smallest and largest eigenvalues of a symmetric operator.

    One power-iteration plus refinement pass finds the eigenvalue lam_a of
    largest modulus (one end of the spectrum). On the shifted operator
    v -> H v - lam_a v the other end dominates, so a second pass recovers
    it; adding the shift back gives lam_b. Returns the two estimates as
    (lambda_min, lambda_max), each with residual measured on the original
    operator.
    """
    first = rayleigh_refine(op, power_iteration(op, tol, max_iter, seed).vector,
                            tol, max_iter)

    shifted = LinearOperator(op.dim, lambda u: np.asarray(op.apply(u), dtype=float)
                             - first.value * u)
    start = power_iteration(shifted, tol, max_iter, seed + 1)
    second_shifted = rayleigh_refine(shifted, start.vector, tol, max_iter)
    value_b = second_shifted.value + first.value
    vec_b = second_shifted.vector
    residual_b = float(np.linalg.norm(np.asarray(op.apply(vec_b), dtype=float)
                                      - value_b * vec_b))
    second = EigenEstimate(value_b, vec_b, residual_b,
                           second_shifted.converged, second_shifted.iterations)

    if first.value <= second.value:
        return first, second
    return second, first
