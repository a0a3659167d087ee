"""Closed-form helpers for symmetric 2x2 matrices."""

import math

import numpy as np

from .errors import InferenceError


def eigh2(mat):
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns)."""
    a, b, d = float(mat[0][0]), 0.5 * (float(mat[0][1]) + float(mat[1][0])), float(mat[1][1])
    mean = 0.5 * (a + d)
    rad = math.hypot(0.5 * (a - d), b)
    lo, hi = mean - rad, mean + rad
    if b == 0.0:
        if a <= d:
            return np.array([a, d]), np.eye(2)
        return np.array([d, a]), np.array([[0.0, 1.0], [1.0, 0.0]])
    # eigenvector for hi: (b, hi - a) or (hi - d, b); pick the better conditioned form
    if abs(hi - a) > abs(hi - d):
        v = np.array([b, hi - a])
    else:
        v = np.array([hi - d, b])
    v /= math.hypot(v[0], v[1])
    vecs = np.array([[-v[1], v[0]], [v[0], v[1]]])
    return np.array([lo, hi]), vecs


def require_pd(mat, what="covariance"):
    """Raise ``InferenceError`` unless ``mat`` is symmetric positive definite."""
    mat = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise InferenceError(f"degenerate {what}: non-finite entries", code="degenerate_covariance")
    vals, _ = eigh2(mat)
    scale = max(abs(vals[1]), 0.0)
    if vals[0] <= 0.0 or vals[0] <= 1e-14 * scale:
        raise InferenceError(f"degenerate {what}: eigenvalues {vals[0]:.3g}, {vals[1]:.3g}",
                             code="degenerate_covariance")
    return mat


def sqrtm2(mat):
    """Symmetric (spectral) square root of a positive semidefinite 2x2 matrix."""
    vals, vecs = eigh2(mat)
    root = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * root) @ vecs.T


def inv2(mat):
    a, b, c, d = mat[0][0], mat[0][1], mat[1][0], mat[1][1]
    det = a * d - b * c
    if det == 0.0:
        raise InferenceError("singular 2x2 matrix", code="degenerate_covariance")
    return np.array([[d, -b], [-c, a]]) / det
