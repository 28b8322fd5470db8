"""Seeded Euler simulation of Ito diffusions ``dX = a(t, X) dt + sigma(t, X) dW``.

Coefficient functions work on batches: ``drift(t, x)`` maps ``(..., d)`` to
``(..., d)`` and ``diffusion(t, x)`` maps ``(..., d)`` to ``(..., d, q)``.
Several replications are stepped together, each with its own random stream,
so a replication's path does not depend on which batch it ran in.

Catalog (see :func:`make_model`):

``sv2d``      two Black-Scholes assets with correlated noise
``energy3d``  three mean-reverting indices whose noise switches on above a level
``osc2d``     a drift oscillating with a Brownian motion; rank-one noise
``homog``     ``X = sigma W`` for a constant matrix
``drift``     constant drift, no noise
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .pathdata import SamplePath

DEFAULT_H = 1e-3
FINE_H = 1e-4


class ModelConfigError(ValueError):
    pass


class SimulationDiverged(ArithmeticError):
    def __init__(self, step, replication=None):
        where = f" in replication {replication}" if replication is not None else ""
        super().__init__(f"non-finite state at Euler step {step}{where}")
        self.step = step
        self.replication = replication


@dataclass(frozen=True, eq=False)
class ModelSpec:
    name: str
    d: int
    q: int
    x0: np.ndarray
    drift: Callable
    diffusion: Callable
    params: dict = field(default_factory=dict)

    def coeff(self, t, x) -> np.ndarray:
        """``c = sigma sigma^T`` at the given state(s)."""
        s = self.diffusion(t, np.asarray(x, dtype=float))
        return _outer_sum(s)


@dataclass(frozen=True, eq=False)
class SimResult:
    path: SamplePath
    coeffs: np.ndarray | None
    seed: object
    h: float


@dataclass(frozen=True, eq=False)
class BatchResult:
    T: float
    h: float
    values: np.ndarray              # (R, N+1, d)
    coeffs: np.ndarray | None       # (R, N+1, d, d)
    diverged: dict                  # replication -> first bad step

    def path(self, j: int) -> SamplePath:
        return SamplePath(self.values[j], self.T)


def _outer_sum(s: np.ndarray) -> np.ndarray:
    # s @ s^T over the last two axes, written as an explicit reduction
    return (s[..., :, None, :] * s[..., None, :, :]).sum(axis=-1)


def smooth_hinge(x):
    """0 for ``x <= 0``, ``2.5 x^2`` on ``(0, 0.2)``, ``x - 0.1`` from 0.2 on."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0, 0.0, np.where(x < 0.2, 2.5 * x * x, x - 0.1))


# -- catalog coefficient functions --------------------------------------------

def _sv2d_drift(t, x, r1, r2):
    return x * np.array([r1, r2])


def _sv2d_diffusion(t, x, sigma1, sigma2, rho):
    out = np.zeros(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = sigma1 * x[..., 0]
    out[..., 1, 0] = sigma2 * x[..., 1] * rho
    out[..., 1, 1] = sigma2 * x[..., 1] * math.sqrt(1.0 - rho * rho)
    return out


def _energy_drift(t, x, nu, mu):
    return nu * (mu - x)


def _energy_diffusion(t, x, alpha, beta, K):
    v = alpha * smooth_hinge(x - K) + beta
    out = np.zeros(x.shape + (x.shape[-1],))
    idx = np.arange(x.shape[-1])
    out[..., idx, idx] = v
    return out


def _osc_drift(t, x, eta, theta):
    out = np.zeros_like(x)
    out[..., 0] = eta * np.cos(theta * x[..., 1])
    return out


def _osc_diffusion(t, x):
    out = np.zeros(x.shape[:-1] + (2, 1))
    out[..., 1, 0] = 1.0
    return out


def _const_drift(t, x, a):
    return np.broadcast_to(a, x.shape).copy()


def _const_diffusion(t, x, sigma):
    return np.broadcast_to(sigma, x.shape[:-1] + sigma.shape).copy()


ENERGY_PRESETS = {
    7: {"beta": (1.0, 1.0, 0.0), "K": (3.0, 3.0, 0.9)},
    8: {"beta": (1.0, 0.0, 0.0), "K": (3.0, 0.9, 0.9)},
    9: {"beta": (1.0, 0.0, 0.0), "K": (3.0, 0.6, 0.6)},
    10: {"beta": (1.0, 0.0, 0.0), "K": (3.0, 0.6, 0.9)},
}

_DEFAULTS = {
    "sv2d": {"rho": 0.0, "sigma1": 0.1, "sigma2": 0.2, "r1": 0.05, "r2": 0.15, "x0": (1.0, 1.0)},
    "energy3d": {"preset": 7, "beta": None, "K": None, "alpha": (1.0, 1.0, 1.0),
                 "nu": (1.0, 1.0, 1.0), "mu": (1.0, 1.0, 1.0), "x0": (0.29, 0.89, 0.62)},
    "osc2d": {"eta": 1.0, "theta": 1.0, "x0": (0.0, 0.0)},
    "homog": {"Sigma": None, "sigma": None, "x0": None},
    "drift": {"a": (1.0, 2.0), "x0": None},
}

MODEL_NAMES = tuple(_DEFAULTS)


def _vec(value, d, name):
    v = np.array(value, dtype=float).reshape(-1)
    if v.size == 1 and d > 1:
        v = np.full(d, v[0])
    if v.shape != (d,) or not np.all(np.isfinite(v)):
        raise ModelConfigError(f"{name} must be {d} finite numbers, got {value!r}")
    return v


def _psd_factor(Sigma):
    S = np.array(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.all(np.isfinite(S)):
        raise ModelConfigError("Sigma must be a finite square matrix")
    if np.abs(S - S.T).max() > 1e-12 * (1 + np.abs(S).max()):
        raise ModelConfigError("Sigma must be symmetric")
    lam, vec = np.linalg.eigh(S)
    if lam.min() < -1e-10 * (1 + abs(lam).max()):
        raise ModelConfigError("Sigma must be positive semi-definite")
    return vec * np.sqrt(np.clip(lam, 0, None))


def make_model(name: str, params: dict | None = None, **overrides) -> ModelSpec:
    """Build a catalog model; omitted parameters take their default values.

    Parameters by model:

    * ``sv2d``: ``rho`` (correlation, ``|rho| <= 1``), ``sigma1``, ``sigma2``,
      ``r1``, ``r2``, ``x0``
    * ``energy3d``: ``preset`` (7, 8, 9 or 10 for the four published
      configurations), ``beta``, ``K`` (override the preset), ``alpha``,
      ``nu``, ``mu``, ``x0``
    * ``osc2d``: ``eta``, ``theta``, ``x0``
    * ``homog``: ``Sigma`` (d x d covariance) or ``sigma`` (d x q), ``x0``
    * ``drift``: ``a`` (constant drift vector), ``x0``
    """
    if name not in _DEFAULTS:
        raise ModelConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    given = dict(params or {})
    given.update(overrides)
    unknown = set(given) - set(_DEFAULTS[name])
    if unknown:
        raise ModelConfigError(f"unknown parameter(s) for {name}: {', '.join(sorted(unknown))}")
    p = {**_DEFAULTS[name], **{k: v for k, v in given.items() if v is not None}}

    if name == "sv2d":
        rho = float(p["rho"])
        if not -1.0 <= rho <= 1.0:
            raise ModelConfigError(f"|rho| must be <= 1, got {rho}")
        for k in ("sigma1", "sigma2", "r1", "r2"):
            p[k] = float(p[k])
        x0 = _vec(p["x0"], 2, "x0")
        return ModelSpec(name, 2, 2, x0,
                         partial(_sv2d_drift, r1=p["r1"], r2=p["r2"]),
                         partial(_sv2d_diffusion, sigma1=p["sigma1"], sigma2=p["sigma2"], rho=rho),
                         {**p, "rho": rho, "x0": tuple(x0)})

    if name == "energy3d":
        preset = int(p["preset"])
        if preset not in ENERGY_PRESETS:
            raise ModelConfigError(f"energy3d preset must be one of {sorted(ENERGY_PRESETS)}")
        beta = _vec(p["beta"] if p["beta"] is not None else ENERGY_PRESETS[preset]["beta"], 3, "beta")
        K = _vec(p["K"] if p["K"] is not None else ENERGY_PRESETS[preset]["K"], 3, "K")
        alpha, nu, mu = (_vec(p[k], 3, k) for k in ("alpha", "nu", "mu"))
        x0 = _vec(p["x0"], 3, "x0")
        return ModelSpec(name, 3, 3, x0,
                         partial(_energy_drift, nu=nu, mu=mu),
                         partial(_energy_diffusion, alpha=alpha, beta=beta, K=K),
                         {"preset": preset, "beta": tuple(beta), "K": tuple(K),
                          "alpha": tuple(alpha), "nu": tuple(nu), "mu": tuple(mu),
                          "x0": tuple(x0)})

    if name == "osc2d":
        eta, theta = float(p["eta"]), float(p["theta"])
        if not (eta > 0 and theta > 0):
            raise ModelConfigError("eta and theta must be positive")
        x0 = _vec(p["x0"], 2, "x0")
        return ModelSpec(name, 2, 1, x0, partial(_osc_drift, eta=eta, theta=theta),
                         _osc_diffusion, {"eta": eta, "theta": theta, "x0": tuple(x0)})

    if name == "homog":
        if p["sigma"] is not None:
            sigma = np.array(p["sigma"], dtype=float)
            if sigma.ndim == 1:
                sigma = sigma[:, None]
            if sigma.ndim != 2 or not np.all(np.isfinite(sigma)):
                raise ModelConfigError("sigma must be a finite d x q matrix")
        else:
            sigma = _psd_factor(p["Sigma"] if p["Sigma"] is not None else np.eye(2))
        d, q = sigma.shape
        x0 = np.zeros(d) if p["x0"] is None else _vec(p["x0"], d, "x0")
        return ModelSpec(name, d, q, x0, partial(_const_drift, a=np.zeros(d)),
                         partial(_const_diffusion, sigma=sigma),
                         {"sigma": sigma.tolist(), "x0": tuple(x0)})

    a = np.array(p["a"], dtype=float).reshape(-1)
    if a.size < 1 or not np.all(np.isfinite(a)):
        raise ModelConfigError("drift vector a must be finite")
    d = a.size
    x0 = np.zeros(d) if p["x0"] is None else _vec(p["x0"], d, "x0")
    return ModelSpec("drift", d, 1, x0, partial(_const_drift, a=a),
                     partial(_const_diffusion, sigma=np.zeros((d, 1))),
                     {"a": tuple(a), "x0": tuple(x0)})


# -- Euler scheme ------------------------------------------------------------

def n_steps(T: float, h: float) -> int:
    if not (h > 0 and T > 0):
        raise ValueError(f"need T > 0 and h > 0, got T={T}, h={h}")
    N = int(round(T / h))
    if N < 1 or abs(N * h - T) > 1e-9 * T:
        raise ValueError(f"T/h must be an integer, got T={T}, h={h}")
    return N


def replication_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for replication ``index`` of a run seeded by ``master_seed``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def brownian_increments(seed, N: int, q: int, h: float) -> np.ndarray:
    """``(N, q)`` increments ``sqrt(h) G`` from the stream identified by ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.standard_normal((N, q)) * math.sqrt(h)


def simulate_batch(model: ModelSpec, T: float, h: float, seeds: Sequence | None = None,
                   dW: np.ndarray | None = None, record_coeffs: bool = True) -> BatchResult:
    """Step several independent replications of ``model`` together.

    Either ``seeds`` (one per replication) or explicit Brownian increments
    ``dW`` of shape ``(R, N, q)`` must be given. Replications that blow up
    are reported in ``diverged`` rather than raising.
    """
    N = n_steps(T, h)
    if dW is None:
        if seeds is None:
            raise ValueError("pass seeds or dW")
        dW = np.stack([brownian_increments(s, N, model.q, h) for s in seeds])
    dW = np.asarray(dW, dtype=float)
    if dW.ndim != 3 or dW.shape[1:] != (N, model.q):
        raise ValueError(f"dW must have shape (R, {N}, {model.q}), got {dW.shape}")
    R, d = dW.shape[0], model.d

    values = np.empty((R, N + 1, d))
    coeffs = np.empty((R, N + 1, d, d)) if record_coeffs else None
    x = np.broadcast_to(np.asarray(model.x0, dtype=float), (R, d)).copy()
    values[:, 0] = x
    diverged: dict[int, int] = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            t = k * h
            a = model.drift(t, x)
            s = model.diffusion(t, x)
            if record_coeffs:
                coeffs[:, k] = _outer_sum(s)
            x = x + a * h + (s * dW[:, k, None, :]).sum(axis=-1)
            values[:, k + 1] = x
            ok = np.isfinite(x).all(axis=-1)
            if not ok.all():
                for j in np.flatnonzero(~ok):
                    diverged.setdefault(int(j), k + 1)
        if record_coeffs:
            coeffs[:, N] = _outer_sum(model.diffusion(N * h, x))
    return BatchResult(float(T), float(h), values, coeffs, diverged)


def simulate_euler(model: ModelSpec, T: float, h: float = DEFAULT_H, seed=0,
                   dW: np.ndarray | None = None, record_coeffs: bool = True) -> SimResult:
    """One Euler path ``X_{k+1} = X_k + a h + sigma sqrt(h) G_k`` on the grid ``k h``.

    Deterministic in ``(model, T, h, seed)``. Pass ``dW`` of shape
    ``(T/h, q)`` to drive the scheme with given Brownian increments.

    Raises
    ------
    SimulationDiverged
        If the state becomes non-finite.
    """
    batch = simulate_batch(model, T, h, seeds=None if dW is not None else [seed],
                           dW=None if dW is None else np.asarray(dW, dtype=float)[None],
                           record_coeffs=record_coeffs)
    if batch.diverged:
        raise SimulationDiverged(batch.diverged[0])
    coeffs = None if batch.coeffs is None else batch.coeffs[0]
    return SimResult(batch.path(0), coeffs, seed, float(h))


def osc_closed_form(b_path, eta: float, theta: float, h: float | None = None) -> np.ndarray:
    """First component of ``osc2d`` rebuilt from its Brownian driver.

    ``X1_t = 2 eta/theta^2 (1 - cos(theta B_t)) - (2 eta/theta) int_0^t sin(theta B) dB``
    with the stochastic integral as a left-point sum on the grid of ``b_path``.
    ``h`` is accepted for symmetry with the Euler call and not needed.
    """
    b = np.asarray(b_path, dtype=float).reshape(-1)
    ito = np.concatenate([[0.0], np.cumsum(np.sin(theta * b[:-1]) * np.diff(b))])
    c = 2.0 * eta / theta ** 2
    return c - c * np.cos(theta * b) - (2.0 * eta / theta) * ito
