"""Principal-minor sums and ordered eigenvalues of symmetric matrices.

``det(r; S)`` is the sum of the determinants of all ``r x r`` principal
submatrices of ``S``. It is also the ``r``-th elementary symmetric polynomial
of the eigenvalues, which is how :func:`minor_sums` evaluates it. The literal
enumeration lives in :func:`minor_sums_enum` and is meant as a cross-check.

All functions accept a single ``(d, d)`` matrix or a stack ``(..., d, d)``.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10
RANK_TOL = 1e-10
ENUM_MAX_DIM = 12


class InvalidInputError(ValueError):
    """Raised for non-square or non-symmetric input."""


class SizeLimitError(ValueError):
    """Raised when brute-force enumeration is asked for too large a matrix."""


class NumericError(ArithmeticError):
    """Eigen-solver failure. The offending input is kept on ``.matrix``."""

    def __init__(self, message, matrix):
        super().__init__(message)
        self.matrix = matrix


def as_symmetric(sigma, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Validate and return ``sigma`` as a float array of symmetric matrices."""
    a = np.asarray(sigma, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[-1] < 1:
        raise InvalidInputError(f"expected square matrix (..., d, d), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = 1.0 + np.abs(a).max(axis=(-2, -1), initial=0.0)
    asym = np.abs(a - np.swapaxes(a, -1, -2)).max(axis=(-2, -1), initial=0.0)
    if np.any(asym > tol * scale):
        raise InvalidInputError(f"matrix is not symmetric (max asymmetry {np.max(asym):.3g})")
    return a


def _eigvalsh(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue computation failed: {exc}", a) from exc


def _clamp_psd(lam: np.ndarray) -> np.ndarray:
    # lam ascending along the last axis
    trace = np.abs(lam.sum(axis=-1, keepdims=True))
    small = (lam < 0) & (lam >= -PSD_TOL * trace)
    return np.where(small, 0.0, lam)


def eigenvalues_desc(sigma, psd: bool = True) -> np.ndarray:
    """Eigenvalues sorted non-increasing.

    With ``psd=True`` tiny negative eigenvalues (at least ``-1e-10 * trace``)
    produced by rounding are clamped to zero.
    """
    a = as_symmetric(sigma)
    lam = _eigvalsh(a)
    if psd:
        lam = _clamp_psd(lam)
    return lam[..., ::-1]


def elementary_symmetric(lam) -> np.ndarray:
    """Elementary symmetric polynomials ``e_1 .. e_d`` of the last axis of ``lam``."""
    lam = np.asarray(lam, dtype=float)
    d = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (d + 1,))
    e[..., 0] = 1.0
    for k in range(d):
        x = lam[..., k : k + 1]
        # e_j <- e_j + x * e_{j-1}, for j = k+1 .. 1
        e[..., 1 : k + 2] = e[..., 1 : k + 2] + x * e[..., 0 : k + 1]
    return e[..., 1:]


def minor_sums(sigma, psd: bool = False) -> np.ndarray:
    """Return ``[det(1; S), ..., det(d; S)]``.

    Computed in O(d^3) from the eigenvalues: ``det(r; S)`` equals the
    ``r``-th elementary symmetric polynomial of the spectrum.

    Parameters
    ----------
    sigma : array_like, shape (..., d, d)
        Symmetric matrix or stack of matrices.
    psd : bool
        Treat the input as positive semi-definite and clamp rounding-level
        negative eigenvalues to zero before forming the products. This makes
        every returned value non-negative.

    Returns
    -------
    ndarray, shape (..., d)
    """
    a = as_symmetric(sigma)
    lam = _eigvalsh(a)
    if psd:
        lam = _clamp_psd(lam)
    # descending order so large terms are accumulated first
    return elementary_symmetric(lam[..., ::-1])


def minor_sums_enum(sigma) -> np.ndarray:
    """Literal sum over all principal minors of each order (O(2^d) determinants)."""
    a = as_symmetric(sigma)
    d = a.shape[-1]
    if d > ENUM_MAX_DIM:
        raise SizeLimitError(f"enumeration limited to d <= {ENUM_MAX_DIM}, got d = {d}")
    out = np.zeros(a.shape[:-2] + (d,))
    out[..., 0] = np.trace(a, axis1=-2, axis2=-1)  # 1x1 minors are exact entries
    for r in range(2, d + 1):
        acc = np.zeros(a.shape[:-2])
        for k in combinations(range(d), r):
            idx = np.array(k)
            acc = acc + np.linalg.det(a[..., idx[:, None], idx[None, :]])
        out[..., r - 1] = acc
    return out


def numerical_rank(sigma, tol: float = RANK_TOL) -> np.ndarray | int:
    """Number of eigenvalues above ``tol * lambda_1`` (0 for the zero matrix)."""
    lam = eigenvalues_desc(sigma, psd=True)
    top = lam[..., :1]
    rank = np.sum((lam > tol * top) & (lam > 0), axis=-1)
    return int(rank) if np.ndim(rank) == 0 else rank
