"""Objective-function catalog: quadratics, scalar non-convex test functions,
logistic regression, and CSV dataset ingestion.

Every objective exposes ``value``/``grad`` and, where second-order information
is cheap, ``hessian_apply`` so that matrix-free consumers (implicit steppers,
extreme-eigenvalue estimation) can run without assembling dense Hessians.
"""

from __future__ import annotations

import csv
import math

import numpy as np

__all__ = [
    "Quadratic",
    "ScalarTestFunction",
    "LogisticRegressionProblem",
    "make_test_matrix",
    "make_blobs",
    "load_csv_dataset",
]

_LOG2 = math.log(2.0)


class Quadratic:
    """f(x) = 1/2 (x - c e)^T A (x - c e) for symmetric PSD A.

    Parameters
    ----------
    A : (n, n) array_like
        Symmetric positive semi-definite matrix. A 1-D array is taken as a
        diagonal spectrum.
    shift_c : float
        Minimizer shift; the minimizer is x* = c * ones(n).
    """

    def __init__(self, A, shift_c=0.0):
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = np.diag(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("A contains non-finite entries")
        if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        A = 0.5 * (A + A.T)
        eigs = np.linalg.eigvalsh(A)
        if eigs[0] < -1e-10 * max(1.0, eigs[-1]):
            raise ValueError(f"A must be PSD, smallest eigenvalue {eigs[0]:g}")
        self.A = A
        self.shift_c = float(shift_c)
        self._eigs = eigs

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def minimizer(self):
        return np.full(self.dim, self.shift_c)

    @property
    def spectrum(self):
        """Eigenvalues of A in ascending order."""
        return self._eigs.copy()

    def _centered(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected last dimension {self.dim}, got {x.shape}")
        return x - self.shift_c

    def value(self, x):
        z = self._centered(x)
        return 0.5 * np.einsum("...i,ij,...j->...", z, self.A, z)

    def grad(self, x):
        """A (x - c e); supports batches with points along the last axis."""
        return self._centered(x) @ self.A

    def hessian_apply(self, x, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected last dimension {self.dim}, got {v.shape}")
        return v @ self.A


class ScalarTestFunction:
    """Scalar non-convex objectives used in the stationary-distribution study.

    kind='two_pit':  f(x) = (1/50) (2 log(cosh x) - 5)^2, two symmetric pits.
    kind='fm_sin':   f(x) = cos(1.6 x + (5/3) sin(0.64 x) - pi), frequency
                     modulated cosine whose local minima all sit at -1.
    """

    KINDS = ("two_pit", "fm_sin")

    def __init__(self, kind):
        if kind not in self.KINDS:
            raise ValueError(f"kind must be one of {self.KINDS}, got {kind!r}")
        self.kind = kind

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "two_pit":
            # log(cosh x) = logaddexp(x, -x) - log 2 stays finite for large |x|
            g = 2.0 * (np.logaddexp(x, -x) - _LOG2) - 5.0
            return g * g / 50.0
        phase = 1.6 * x + (5.0 / 3.0) * np.sin(0.64 * x) - np.pi
        return np.cos(phase)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "two_pit":
            g = 2.0 * (np.logaddexp(x, -x) - _LOG2) - 5.0
            return 0.08 * g * np.tanh(x)
        phase = 1.6 * x + (5.0 / 3.0) * np.sin(0.64 * x) - np.pi
        return -np.sin(phase) * (1.6 + (16.0 / 15.0) * np.cos(0.64 * x))

    def __call__(self, x):
        return self.value(x)


class LogisticRegressionProblem:
    """Binary cross-entropy with optional bias column and l2 penalty.

    The penalty (l2_reg/2)||w||^2 covers the full parameter vector. Labels
    are {0, 1}; use :func:`load_csv_dataset` for {-1, +1} or one-vs-rest
    ingestion.
    """

    def __init__(self, features, labels, l2_reg=0.0, includes_bias=True):
        X = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("labels must be 0/1")
        if l2_reg < 0.0:
            raise ValueError("l2_reg must be non-negative")
        self.features = X
        self.labels = y
        self.l2_reg = float(l2_reg)
        self.includes_bias = bool(includes_bias)
        if includes_bias:
            self._design = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
        else:
            self._design = X

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_params(self):
        return self._design.shape[1]

    def _batch_design(self, w, batch):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n_params,):
            raise ValueError(f"expected weight shape ({self.n_params},), got {w.shape}")
        if batch is None:
            return w, self._design, self.labels
        batch = np.asarray(batch, dtype=int)
        if batch.size == 0:
            raise ValueError("empty batch")
        return w, self._design[batch], self.labels[batch]

    def loss_grad(self, w, batch=None):
        """Mean cross-entropy plus l2 term and its gradient."""
        w, Xb, yb = self._batch_design(w, batch)
        z = Xb @ w
        # log(1 + e^z) - y z, evaluated without overflow
        loss = float(np.mean(np.logaddexp(0.0, z) - yb * z))
        loss += 0.5 * self.l2_reg * float(w @ w)
        p = _sigmoid(z)
        grad = Xb.T @ (p - yb) / len(yb) + self.l2_reg * w
        return loss, grad

    def loss(self, w, batch=None):
        return self.loss_grad(w, batch)[0]

    def grad(self, w, batch=None):
        return self.loss_grad(w, batch)[1]

    def hessian_apply(self, w, v, batch=None):
        """X^T diag(s(1-s)) X v / n + l2_reg v."""
        w, Xb, _ = self._batch_design(w, batch)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_params,):
            raise ValueError(f"expected direction shape ({self.n_params},), got {v.shape}")
        s = _sigmoid(Xb @ w)
        return Xb.T @ (s * (1.0 - s) * (Xb @ v)) / Xb.shape[0] + self.l2_reg * v

    def accuracy(self, w, batch=None):
        w, Xb, yb = self._batch_design(w, batch)
        return float(np.mean((Xb @ w > 0.0) == (yb == 1.0)))


def _sigmoid(z):
    # piecewise form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def make_test_matrix(mu, L, dim, seed, shift_c=0.0):
    """Random symmetric matrix with prescribed extreme eigenvalues.

    A = Q D Q^T with Q drawn from the QR factorization of a Gaussian matrix
    and D diagonal holding mu, L at the extremes and dim-2 interior values
    uniform in [mu, L]. Deterministic in ``seed``.
    """
    if not (0.0 < mu <= L):
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if dim < 2:
        raise ValueError("dim must be at least 2")
    rng = np.random.default_rng(seed)
    interior = np.sort(rng.uniform(mu, L, size=dim - 2))
    D = np.concatenate([[mu], interior, [L]])
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    Q = Q * np.sign(np.diag(R))  # fix the sign convention
    A = (Q * D) @ Q.T
    return Quadratic(0.5 * (A + A.T), shift_c=shift_c)


def make_blobs(n_samples, dim, separation=3.0, scale=1.0, seed=0):
    """Two Gaussian clusters pushed apart by ``separation`` (in cluster widths).

    Returns (features, labels) with labels 0/1 split evenly and rows shuffled.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    half = n_samples // 2
    X = rng.standard_normal((n_samples, dim)) * scale
    y = np.zeros(n_samples)
    X[:half] -= 0.5 * separation * scale
    X[half:] += 0.5 * separation * scale
    y[half:] = 1.0
    perm = rng.permutation(n_samples)
    return X[perm], y[perm]


def load_csv_dataset(path, label_col, feature_cols=None, has_header=False,
                     standardize=False, positive_label=None, l2_reg=0.0,
                     includes_bias=True):
    """Read a CSV file into a LogisticRegressionProblem.

    Parameters
    ----------
    label_col : int
        Column index of the label.
    feature_cols : list of int, optional
        Feature column indices; all non-label columns when omitted.
    has_header : bool
        Skip the first row.
    standardize : bool
        Per-feature mean-0 / variance-1 normalization.
    positive_label : str, optional
        One-vs-rest reduction: rows whose raw label cell equals this string
        get label 1, everything else 0. Without it labels must be numeric
        0/1 or -1/+1 (the latter mapped to 0/1).
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row:
                continue
            rows.append((lineno, row))
    if not rows:
        raise ValueError(f"{path}: no data rows")

    width = len(rows[0][1])
    if feature_cols is None:
        feature_cols = [j for j in range(width) if j != label_col]
    if label_col >= width or any(j >= width for j in feature_cols):
        raise ValueError(f"{path}: column index out of range for width {width}")

    feats = np.empty((len(rows), len(feature_cols)))
    labels = np.empty(len(rows))
    for i, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: row {lineno} has {len(row)} cells, expected {width}")
        try:
            feats[i] = [float(row[j]) for j in feature_cols]
        except ValueError as exc:
            raise ValueError(f"{path}: row {lineno}: non-numeric feature cell ({exc})") from None
        cell = row[label_col].strip()
        if positive_label is not None:
            labels[i] = 1.0 if cell == positive_label else 0.0
        else:
            try:
                val = float(cell)
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: non-numeric label {cell!r}") from None
            if val in (0.0, 1.0):
                labels[i] = val
            elif val == -1.0:
                labels[i] = 0.0
            else:
                raise ValueError(f"{path}: row {lineno}: label {val:g} not in {{0,1,-1}}")

    if standardize:
        mean = feats.mean(axis=0)
        std = feats.std(axis=0)
        std[std == 0.0] = 1.0  # constant columns pass through centered
        feats = (feats - mean) / std

    return LogisticRegressionProblem(feats, labels, l2_reg=l2_reg,
                                     includes_bias=includes_bias)
