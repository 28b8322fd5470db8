"""Ground-truth functionals from a recorded coefficient path ``c_s = sigma sigma^T``.

Integrals over time are left Riemann sums on the simulation grid. The
moment functions ``gamma`` and ``Gamma`` of a fixed covariance are estimated
by plain Monte Carlo; determinants of sums of ``j`` outer products are taken
as ``j x j`` Gram determinants (Cauchy-Binet), independent of the eigenvalue
route used by the estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .minors import RANK_TOL, eigenvalues_desc, minor_sums


@dataclass(frozen=True, eq=False)
class CoeffPath:
    """``c`` sampled at ``k h``, ``k = 0..N``, as an ``(N+1, d, d)`` array."""

    h: float
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 3 or c.shape[1] != c.shape[2]:
            raise ValueError(f"coefficients must be (N+1, d, d), got {c.shape}")
        if not self.h > 0:
            raise ValueError("grid step must be positive")
        object.__setattr__(self, "c", c)

    @property
    def d(self) -> int:
        return self.c.shape[1]

    @property
    def horizon(self) -> float:
        return (len(self.c) - 1) * self.h

    def _cells(self, t: float) -> int:
        """Number of grid cells in ``[0, t]``."""
        if t < 0 or t > self.horizon * (1 + 1e-12):
            raise ValueError(f"t = {t} outside [0, {self.horizon}]")
        return min(int(math.floor(t / self.h + 1e-9)), len(self.c) - 1)


def _minor_integrals(cp: CoeffPath, t: float) -> np.ndarray:
    k = cp._cells(t)
    if k == 0:
        return np.zeros(cp.d)
    return minor_sums(cp.c[:k], psd=True).sum(axis=0) * cp.h


def lbar_true(cp: CoeffPath, r: int, t: float) -> float:
    """``int_0^t det(r; c_s) ds``."""
    return float(_minor_integrals(cp, t)[r - 1])


def lbar_true_curve(cp: CoeffPath, r: int) -> np.ndarray:
    """``lbar_true`` at every grid time ``k h``, ``k = 0..N``."""
    w = minor_sums(cp.c[:-1], psd=True)[:, r - 1]
    return np.concatenate([[0.0], np.cumsum(w) * cp.h])


def l_true(cp: CoeffPath, r: int, t: float) -> float:
    """``int_0^t lambda(r)_s ds`` with ``lambda(1) >= ... >= lambda(d)``."""
    k = cp._cells(t)
    if k == 0:
        return 0.0
    return float(eigenvalues_desc(cp.c[:k], psd=True)[:, r - 1].sum() * cp.h)


def rank_true(cp: CoeffPath, t: float, tol: float = RANK_TOL) -> int:
    """Largest numerical rank of ``c_s`` over grid points ``s <= t``."""
    k = min(cp._cells(t), len(cp.c) - 1)
    lam = eigenvalues_desc(cp.c[: k + 1], psd=True)
    ranks = np.sum((lam > tol * lam[:, :1]) & (lam > 0), axis=1)
    return int(ranks.max())


def s_true(cp: CoeffPath, r: int, t: float) -> float:
    """``t^(r-1) Lbar(r)_t / Lbar(1)_t^r`` with ``0/0 = 0``."""
    L = _minor_integrals(cp, t)
    if L[0] <= 0:
        return 0.0
    return float(t ** (r - 1) * L[r - 1] / L[0] ** r)


def xi_true(cp: CoeffPath, r: int, t: float) -> float:
    """Scale-free ratio ``t^(1/r) Lbar(r+1)_t / Lbar(r)_t^((r+1)/r)`` of the true integrals."""
    L = _minor_integrals(cp, t)
    if L[r - 1] <= 0:
        return 0.0
    return float(t ** (1.0 / r) * L[r] / L[r - 1] ** ((r + 1.0) / r))


# -- Monte Carlo moments of a fixed covariance --------------------------------

def _factor(Sigma) -> np.ndarray:
    """``F`` with ``F F^T = Sigma`` and as many columns as the numerical rank."""
    S = np.asarray(Sigma, dtype=float)
    lam, vec = np.linalg.eigh(S)
    top = max(lam.max(), 0.0)
    keep = lam > RANK_TOL * top
    if top == 0.0:
        keep[:] = False
    return vec[:, keep] * np.sqrt(lam[keep])


def _gram_det(G: np.ndarray, rank: int) -> np.ndarray:
    """``det(j; sum_i g_i g_i^T)`` for draws ``G`` of shape ``(N, d, j)``.

    Equal to ``det(G^T G)``; exactly 0 when ``j`` exceeds the rank of the
    underlying covariance, since then the ``j`` vectors are dependent.
    """
    j = G.shape[-1]
    if j > rank:
        return np.zeros(G.shape[0])
    return np.linalg.det(np.swapaxes(G, -1, -2) @ G)


def _rng(seed):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(ss))


def gamma_mc(Sigma, r: int, N: int, seed) -> tuple[float, float]:
    """Monte-Carlo ``E[det(r; zeta_r)] / r!`` for ``zeta_r`` a sum of ``r`` N(0, Sigma) outer products.

    Returns ``(mean, standard error)``.
    """
    if N < 100:
        raise ValueError("N must be >= 100")
    F = _factor(Sigma)
    d, k = F.shape
    rng = _rng(seed)
    G = F @ rng.standard_normal((N, k, r)) if k else np.zeros((N, d, r))
    vals = _gram_det(G, k) / math.factorial(r)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(N))


def gamma2_mc(Sigma, r: int, rp: int, N: int, seed) -> tuple[float, float]:
    """Monte-Carlo ``Gamma(r, r'; Sigma)``.

    Each sample draws ``d + r'`` independent vectors; ``zeta_j`` sums the
    first ``j`` and ``zeta'_j`` the ``j`` starting at index ``d + 1``, and the
    sample value is ``det(r; zeta_r) (det(r'; zeta_r') - det(r'; zeta'_r')) / (r! r'!)``.
    """
    if N < 100:
        raise ValueError("N must be >= 100")
    F = _factor(Sigma)
    d, k = F.shape
    rng = _rng(seed)
    m = d + rp
    G = F @ rng.standard_normal((N, k, m)) if k else np.zeros((N, d, m))
    a = _gram_det(G[:, :, :r], k)
    b = _gram_det(G[:, :, :rp], k)
    b2 = _gram_det(G[:, :, d : d + rp], k)
    vals = a * (b - b2) / (math.factorial(r) * math.factorial(rp))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(N))


def z_true(cp: CoeffPath, r: int, rp: int, t: float, N_per_point: int = 2000,
           coarse_stride: int = 100, seed=0) -> tuple[float, float]:
    """``int_0^t Gamma(r, r'; c_s) ds`` by Monte Carlo on every ``coarse_stride``-th grid point.

    Point ``k`` uses its own stream derived from ``(seed, k)``. Returns the
    integral and its propagated standard error.
    """
    if coarse_stride < 1:
        raise ValueError("coarse_stride must be >= 1")
    cells = cp._cells(t)
    total, var = 0.0, 0.0
    for k in range(0, cells, coarse_stride):
        width = min(coarse_stride, cells - k) * cp.h
        ss = np.random.SeedSequence(int(seed), spawn_key=(k,))
        mean, se = gamma2_mc(cp.c[k], r, rp, N_per_point, ss)
        total += mean * width
        var += (se * width) ** 2
    return total, math.sqrt(var)
