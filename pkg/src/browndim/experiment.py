"""Monte-Carlo harness: replicated simulations and the tables built from them.

A replication is identified by its index; its random stream comes from
``(plan.seed, index)``. Replications are simulated in fixed-size chunks
whose layout depends only on the plan, so the raw samples are identical
for any number of worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .deciders import RULES, ThresholdSchedule, ci_test, ci_pairs
from .estimators import EstimatorPanel, build_panel, xi_value
from .minors import minor_sums, RANK_TOL
from .pathdata import FLOAT_FMT, subsample
from .simulator import DEFAULT_H, ModelSpec, n_steps, replication_seed, simulate_batch

QUANTILE_LEVELS = (0.0, 0.01, 0.10, 0.25, 0.50, 0.75, 0.90, 0.99, 1.0)
QUANTILE_NAMES = ("min", "q01", "q10", "q25", "q50", "q75", "q90", "q99", "max")
MAX_DIVERGED_FRACTION = 0.01
_CHUNK = 50
_COEFF_BUDGET = 4_000_000  # floats of recorded coefficients per chunk


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentPlan:
    model: ModelSpec
    T: float = 10.0
    h: float = DEFAULT_H
    n_obs: tuple = (1000,)
    times: tuple = tuple(float(t) for t in range(2, 11))
    reps: int = 100
    seed: int = 0
    rule: str = "relative"
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)
    z_pairs: tuple = ()
    oracle: bool = True
    chunk: int | None = None  # replications per simulated batch; None picks from the plan

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("replication count must be >= 1")
        self.n_obs = tuple(int(n) for n in self.n_obs)
        self.times = tuple(float(t) for t in self.times)
        if any(t <= 0 or t > self.T * (1 + 1e-12) for t in self.times):
            raise ValueError("evaluation times must lie in (0, T]")
        N = n_steps(self.T, self.h)
        for n in self.n_obs:
            if n < 1 or N % n:
                raise ValueError(f"observation count {n} must divide the {N} Euler steps")
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")

    def chunk_size(self) -> int:
        if self.chunk is not None:
            return max(1, int(self.chunk))
        if not self.oracle:
            return _CHUNK
        per_rep = (n_steps(self.T, self.h) + 1) * self.model.d ** 2
        return max(1, min(_CHUNK, _COEFF_BUDGET // per_rep))


@dataclass
class ReplicationStore:
    """Raw per-replication samples.

    ``lbar[n]`` has shape ``(R, len(times), d)``, ``xi[n]`` ``(R, len(times), d-1)``
    and ``z[n][(r, r')]`` ``(R, len(times))``. Oracle arrays (``lbar_true``,
    ``xi_true``, ``rank_true``) are present when the plan asks for them.
    """

    plan: ExperimentPlan
    indices: np.ndarray
    diverged: dict
    lbar: dict
    xi: dict
    z: dict
    lbar_true: np.ndarray | None = None
    xi_true: np.ndarray | None = None
    rank_true: np.ndarray | None = None

    def panel(self, n: int, j: int) -> EstimatorPanel:
        """Estimator panel of kept replication ``j`` at ``n`` observations."""
        p = self.plan
        return EstimatorPanel(d=p.model.d, T=p.T, n=n, times=np.array(p.times),
                              lbar=self.lbar[n][j], xi=self.xi[n][j],
                              z={k: v[j] for k, v in self.z[n].items()})


def _simulate_chunk(plan: ExperimentPlan, indices: list[int]) -> dict:
    seeds = [replication_seed(plan.seed, i) for i in indices]
    batch = simulate_batch(plan.model, plan.T, plan.h, seeds=seeds, record_coeffs=plan.oracle)
    d = plan.model.d
    out = {"indices": [], "diverged": {}}
    ok = [j for j in range(len(indices)) if j not in batch.diverged]
    for j, step in batch.diverged.items():
        out["diverged"][indices[j]] = step
    out["indices"] = [indices[j] for j in ok]
    for n in plan.n_obs:
        lb, xs, zs = [], [], {pair: [] for pair in plan.z_pairs}
        for j in ok:
            pan = build_panel(subsample(batch.path(j), n), times=plan.times,
                              z_pairs=plan.z_pairs)
            lb.append(pan.lbar)
            xs.append(pan.xi)
            for pair in plan.z_pairs:
                zs[pair].append(pan.z[pair])
        out[("lbar", n)] = np.array(lb).reshape(len(ok), len(plan.times), d)
        out[("xi", n)] = np.array(xs).reshape(len(ok), len(plan.times), d - 1)
        out[("z", n)] = {k: np.array(v).reshape(len(ok), len(plan.times)) for k, v in zs.items()}
    if plan.oracle:
        h = plan.h
        cells = [min(int(math.floor(t / h + 1e-9)), batch.coeffs.shape[1] - 1) for t in plan.times]
        lt, xt, rk = [], [], []
        for j in ok:
            c = batch.coeffs[j]
            ms = minor_sums(c, psd=True)
            cum = np.vstack([np.zeros(d), np.cumsum(ms[:-1], axis=0) * h])
            L = cum[cells]
            lt.append(L)
            xt.append([[xi_value(L[i, r - 1], L[i, r], r, t) for r in range(1, d)]
                       for i, t in enumerate(plan.times)])
            lam = np.linalg.eigvalsh(c)[:, ::-1]
            ranks = np.sum((lam > RANK_TOL * lam[:, :1]) & (lam > 0), axis=1)
            running = np.maximum.accumulate(ranks)
            rk.append(running[cells])
        out["lbar_true"] = np.array(lt).reshape(len(ok), len(plan.times), d)
        out["xi_true"] = np.array(xt).reshape(len(ok), len(plan.times), d - 1)
        out["rank_true"] = np.array(rk).reshape(len(ok), len(plan.times))
    return out


def _chunks(plan: ExperimentPlan) -> list[list[int]]:
    size = plan.chunk_size()
    return [list(range(s, min(s + size, plan.reps))) for s in range(0, plan.reps, size)]


def replicate(plan: ExperimentPlan, workers: int = 1) -> ReplicationStore:
    """Simulate every replication of ``plan`` and collect the raw statistics."""
    chunks = _chunks(plan)
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, [plan] * len(chunks), chunks))
    else:
        parts = [_simulate_chunk(plan, c) for c in chunks]

    diverged = {}
    for part in parts:
        diverged.update(part["diverged"])
    if len(diverged) > MAX_DIVERGED_FRACTION * plan.reps:
        raise ExperimentError(f"{len(diverged)} of {plan.reps} replications diverged")

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    store = ReplicationStore(
        plan=plan,
        indices=np.array([i for p in parts for i in p["indices"]], dtype=int),
        diverged=diverged,
        lbar={n: cat(("lbar", n)) for n in plan.n_obs},
        xi={n: cat(("xi", n)) for n in plan.n_obs},
        z={n: {k: np.concatenate([p[("z", n)][k] for p in parts]) for k in plan.z_pairs}
           for n in plan.n_obs},
    )
    if plan.oracle:
        store.lbar_true = cat("lbar_true")
        store.xi_true = cat("xi_true")
        store.rank_true = cat("rank_true")
    return store


# -- quantile tables -----------------------------------------------------------

@dataclass
class QuantileTable:
    rows: list  # (statistic, t, [9 quantiles])

    def get(self, statistic: str, t: float) -> dict:
        for name, tt, q in self.rows:
            if name == statistic and math.isclose(tt, t):
                return dict(zip(QUANTILE_NAMES, q))
        raise KeyError((statistic, t))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["statistic", "t", *QUANTILE_NAMES])
        for name, t, q in self.rows:
            w.writerow([name, FLOAT_FMT % t, *(FLOAT_FMT % v for v in q)])
        return buf.getvalue()


def quantiles(samples) -> list[float]:
    """Type-7 (linear interpolation) quantiles at the reported levels."""
    return [float(v) for v in np.quantile(np.asarray(samples, dtype=float), QUANTILE_LEVELS)]


def quantile_table(store: ReplicationStore) -> QuantileTable:
    plan = store.plan
    d = plan.model.d
    rows = []
    for r in range(1, d):
        for n in plan.n_obs:
            for i, t in enumerate(plan.times):
                rows.append((f"xi{r}_n{n}", t, quantiles(store.xi[n][:, i, r - 1])))
        if store.xi_true is not None:
            for i, t in enumerate(plan.times):
                rows.append((f"xi{r}_true", t, quantiles(store.xi_true[:, i, r - 1])))
    return QuantileTable(rows)


def run_replications(plan: ExperimentPlan, workers: int = 1):
    """Replicate ``plan`` and summarise the ``xi`` statistics (and their oracles)."""
    store = replicate(plan, workers)
    return store, quantile_table(store)


# -- power functions -----------------------------------------------------------

@dataclass
class PowerTable:
    rows: list  # dicts: rule, n, t, beta_hat, se, used, discarded

    def get(self, n: int, t: float) -> dict:
        for row in self.rows:
            if row["n"] == n and math.isclose(row["t"], t):
                return row
        raise KeyError((n, t))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rule", "n", "t", "beta_hat", "se"])
        for row in self.rows:
            w.writerow([row["rule"], row["n"], FLOAT_FMT % row["t"],
                        FLOAT_FMT % row["beta_hat"], FLOAT_FMT % row["se"]])
        return buf.getvalue()


def decisions(store: ReplicationStore, rule: str, schedule: ThresholdSchedule, n: int) -> np.ndarray:
    """``(R, len(times))`` array of chosen dimensions under ``rule``."""
    fn = RULES[rule]
    rho = schedule.value(n)
    lb = store.lbar[n]
    return np.array([[fn(lb[j, i], t, rho).r_hat for i, t in enumerate(store.plan.times)]
                     for j in range(lb.shape[0])], dtype=int)


def _binomial_se(p: float, m: int) -> float:
    return math.sqrt(p * (1 - p) / m) if m else float("nan")


def power_estimate(plan: ExperimentPlan, rule: str | None = None, true_r: int = 0,
                   eps: float | None = None, workers: int = 1, store: ReplicationStore | None = None) -> PowerTable:
    """Empirical frequency of ``r_hat != true_r`` per ``(n, t)``.

    With ``eps`` set, replications whose oracle ``Lbar(s)_t < eps t`` for
    some ``s <= true_r`` are discarded first (count kept in ``discarded``).
    """
    rule = rule or plan.rule
    if store is None:
        store = replicate(plan, workers)
    keep = np.ones((len(store.indices), len(plan.times)), dtype=bool)
    if eps is not None:
        if store.lbar_true is None:
            raise ExperimentError("conditioning on the oracle needs plan.oracle = True")
        tt = np.array(plan.times)
        for s in range(1, true_r + 1):
            keep &= store.lbar_true[:, :, s - 1] >= eps * tt
    rows = []
    for n in plan.n_obs:
        dec = decisions(store, rule, plan.schedule, n)
        for i, t in enumerate(plan.times):
            used = dec[keep[:, i], i]
            m = len(used)
            beta = float(np.mean(used != true_r)) if m else float("nan")
            rows.append({"rule": rule, "n": n, "t": t, "beta_hat": beta,
                         "se": _binomial_se(beta, m), "used": m,
                         "discarded": int((~keep[:, i]).sum())})
    return PowerTable(rows)


# -- confidence-interval test ------------------------------------------------------

@dataclass
class CIRow:
    label: str
    n: int
    s_true_median: float
    rejection: float
    se: float
    region: str  # "level" if S_t >= eps else "power"


@dataclass
class CITable:
    eps: float
    alpha: float
    rows: list

    @property
    def level(self) -> float:
        """Largest rejection frequency over configurations with ``S_t >= eps``."""
        vals = [row.rejection for row in self.rows if row.region == "level"]
        return max(vals) if vals else float("nan")

    def power_curve(self) -> list[tuple[float, float]]:
        """``(S_t, rejection)`` for configurations with ``S_t < eps``, sorted by ``S_t``."""
        return sorted((row.s_true_median, row.rejection) for row in self.rows if row.region == "power")


def ci_level_power(plans, r: int, eps: float, alpha: float, t: float | None = None,
                   labels=None, workers: int = 1) -> CITable:
    """Rejection frequencies of the test of ``S_t >= eps`` for one or more plans."""
    if isinstance(plans, ExperimentPlan):
        plans = [plans]
    labels = labels or [p.model.name for p in plans]
    rows = []
    for label, plan in zip(labels, plans):
        pairs = tuple(dict.fromkeys(tuple(plan.z_pairs) + tuple(ci_pairs(r))))
        tt = plan.T if t is None else t
        times = plan.times if any(math.isclose(tt, x) for x in plan.times) else plan.times + (tt,)
        plan = ExperimentPlan(**{**plan.__dict__, "z_pairs": pairs, "times": times, "oracle": True})
        store = replicate(plan, workers)
        i = next(k for k, x in enumerate(plan.times) if math.isclose(x, tt))
        L = store.lbar_true[:, i]
        s_true = np.where(L[:, 0] > 0, tt ** (r - 1) * L[:, r - 1] / np.where(L[:, 0] > 0, L[:, 0], 1) ** r, 0.0)
        for n in plan.n_obs:
            rej = np.array([ci_test(store.panel(n, j), r, tt, eps, alpha).reject
                            for j in range(len(store.indices))])
            for region, mask in (("level", s_true >= eps), ("power", s_true < eps)):
                if mask.any():
                    p = float(rej[mask].mean())
                    rows.append(CIRow(label, n, float(np.median(s_true[mask])), p,
                                      _binomial_se(p, int(mask.sum())), region))
    return CITable(eps, alpha, rows)


# -- convergence rate -------------------------------------------------------------

@dataclass
class RateTable:
    r: int
    rows: list  # (n, rmse)

    def ratios(self) -> list[float]:
        """``err(n) / err(4n)`` for consecutive entries whose counts differ by 4."""
        out = []
        for (n1, e1), (n2, e2) in zip(self.rows, self.rows[1:]):
            if n2 == 4 * n1:
                out.append(e1 / e2)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "n", "rmse"])
        for n, e in self.rows:
            w.writerow([self.r, n, FLOAT_FMT % e])
        return buf.getvalue()


def rate_check(plan: ExperimentPlan, r: int, t: float | None = None, workers: int = 1,
               store: ReplicationStore | None = None) -> RateTable:
    """Root-mean-square error of ``Lbar(r)^n_t`` against the oracle, for each ``n``."""
    if not plan.oracle:
        raise ExperimentError("rate check needs plan.oracle = True")
    if store is None:
        store = replicate(plan, workers)
    tt = plan.T if t is None else t
    i = next((k for k, x in enumerate(plan.times) if math.isclose(x, tt)), None)
    if i is None:
        raise ValueError(f"t = {tt} is not an evaluation time of the plan")
    truth = store.lbar_true[:, i, r - 1]
    rows = []
    for n in sorted(plan.n_obs):
        err = store.lbar[n][:, i, r - 1] - truth
        rows.append((n, float(np.sqrt(np.mean(err ** 2)))))
    return RateTable(r, rows)
