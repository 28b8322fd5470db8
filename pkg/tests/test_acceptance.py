"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every stochastic criterion uses the same pre-declared master seed. One
PASS/FAIL line per criterion is printed as it runs and repeated in the
terminal summary.
"""

import math
import time

import numpy as np
import pytest

from browndim.cli import main
from browndim.deciders import ThresholdSchedule, decide_absolute, decide_relative, decide_relative_prime
from browndim.estimators import build_panel
from browndim.experiment import ExperimentPlan, ci_level_power, decisions, rate_check, replicate
from browndim.minors import eigenvalues_desc, minor_sums, minor_sums_enum
from browndim.oracle import gamma_mc
from browndim.simulator import (brownian_increments, make_model, osc_closed_form, replication_seed,
                                simulate_batch)

from conftest import ACCEPTANCE_LINES

SEED = 20240601


def report(num, title, ok, detail, elapsed, budget):
    within = elapsed < budget
    verdict = "PASS" if ok and within else "FAIL"
    line = f"criterion {num}: {verdict}  {title}  [{detail}; {elapsed:.1f}s of {budget:g}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert within, line


# -- 1 -------------------------------------------------------------------------------

def _random_symmetric(rng, d):
    kind = rng.integers(3)
    if kind == 0:
        A = rng.standard_normal((d, d))
        return A @ A.T
    if kind == 1:
        G = rng.standard_normal((d, rng.integers(0, d + 1)))
        return G @ G.T
    A = rng.standard_normal((d, d))
    return (A + A.T) / 2


def test_criterion_01_minor_sums():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    count, worst = 10_000, 0.0
    dims = rng.integers(1, 9, size=count)
    for d in range(1, 9):
        k = int(np.sum(dims == d))
        S = np.stack([_random_symmetric(rng, d) for _ in range(k)])
        fast, slow = minor_sums(S), minor_sums_enum(S)
        # indefinite inputs cancel; the error is measured against the size of the summed minors
        norm = np.abs(np.linalg.eigvalsh(S)).max(axis=1)[:, None]
        bound = np.array([math.comb(d, r) for r in range(1, d + 1)]) * norm ** np.arange(1, d + 1)
        scale = np.maximum(np.abs(slow), 1e-3 * bound + 1e-300)
        worst = max(worst, float(np.max(np.abs(fast - slow) / scale)))
    elapsed = time.perf_counter() - t0
    report(1, "minor_sums vs enumeration", worst <= 1e-9, f"{count} matrices, max rel err {worst:.2e}", elapsed, 10)


# -- 2 -------------------------------------------------------------------------------

def test_criterion_02_sandwich():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 2)
    fails = []
    for i in range(10_000):
        d = int(rng.integers(1, 9))
        k = int(rng.integers(1, d + 1)) if i % 2 else d
        G = rng.standard_normal((d, k)) * rng.uniform(0.01, 10)
        S = G @ G.T
        lam = eigenvalues_desc(S, psd=True)
        m = minor_sums(S, psd=True)
        scale = np.trace(S)
        for r in range(1, d + 1):
            slack = 1e-9 * scale ** r
            prod = float(np.prod(lam[:r]))
            if not (m[r - 1] / math.perm(d, r) <= prod + slack and prod <= m[r - 1] + slack):
                fails.append(("eq11", i, r))
            if r <= k and not m[r - 1] > 0:
                fails.append(("positive", i, r))
            if r > k and not abs(m[r - 1]) <= 1e-8 * scale ** r:
                fails.append(("zero", i, r))
            if 2 <= r <= k:
                ratio = m[r - 1] / m[r - 2]
                lo = math.factorial(r) / math.factorial(d) * ratio
                hi = math.factorial(d) / math.factorial(r - 1) * ratio
                if not (lo <= lam[r - 1] * (1 + 1e-9) + slack and lam[r - 1] <= hi * (1 + 1e-9) + slack):
                    fails.append(("eq13", i, r))
    elapsed = time.perf_counter() - t0
    report(2, "eigenvalue/minor sandwich bounds", not fails, f"10000 PSD matrices, {len(fails)} violations {fails[:3]}",
           elapsed, 30)


# -- 3 -------------------------------------------------------------------------------

def test_criterion_03_gamma_mc():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 3)
    worst, zero_ok = 0.0, True
    for j in range(20):
        A = rng.standard_normal((3, 3))
        S = A @ A.T
        target = minor_sums(S)
        for r in (1, 2, 3):
            m, se = gamma_mc(S, r, 200_000, seed=np.random.SeedSequence(SEED, spawn_key=(j, r)))
            worst = max(worst, abs(m - target[r - 1]) / se)
        v = rng.standard_normal((3, 1 + j % 2))
        low = v @ v.T
        for r in range(low.shape[0] and v.shape[1] + 1, 4):
            zero_ok &= gamma_mc(low, r, 1000, seed=j)[0] == 0.0
    elapsed = time.perf_counter() - t0
    report(3, "gamma_mc vs det(r; Sigma)", worst <= 4 and zero_ok,
           f"max |z| {worst:.2f} over 60 checks, exact zeros {zero_ok}", elapsed, 60)


# -- 4 -------------------------------------------------------------------------------

def test_criterion_04_consistency():
    t0 = time.perf_counter()
    plan = ExperimentPlan(make_model("homog", Sigma=np.eye(2)), T=1.0, h=2.5e-4, n_obs=(250, 1000, 4000),
                          times=(1.0,), reps=200, seed=SEED)
    table = rate_check(plan, r=1)
    errs = [e for _, e in table.rows]
    A = np.random.default_rng(SEED).standard_normal((3, 2))
    rank2 = ExperimentPlan(make_model("homog", Sigma=A @ A.T), T=1.0, h=1e-3, n_obs=(1000,), times=(1.0,),
                           reps=200, seed=SEED, oracle=False)
    store = replicate(rank2)
    l1, l3 = store.lbar[1000][:, 0, 0], store.lbar[1000][:, 0, 2]
    worst3 = float(np.max(np.abs(l3) / l1 ** 3))
    ok = errs[0] > errs[1] > errs[2] and worst3 <= 1e-3
    elapsed = time.perf_counter() - t0
    report(4, "consistency of Lbar", ok,
           f"RMS err(250,1000,4000) = {', '.join(f'{e:.4f}' for e in errs)}; max Lbar3/scale^3 {worst3:.1e}",
           elapsed, 120)


# -- 5 -------------------------------------------------------------------------------

def test_criterion_05_rate():
    t0 = time.perf_counter()
    cases = {
        "homog": ExperimentPlan(make_model("homog", Sigma=np.array([[1.0, 0.3], [0.3, 0.5]])), T=1.0, h=2.5e-4,
                                n_obs=(250, 1000, 4000), times=(1.0,), reps=200, seed=SEED),
        "sv2d": ExperimentPlan(make_model("sv2d", rho=0.5), T=10.0, h=6.25e-4, n_obs=(250, 1000, 4000),
                               times=(10.0,), reps=200, seed=SEED),
    }
    ratios, ok = {}, True
    for name, plan in cases.items():
        store = replicate(plan)
        for r in (1, 2):
            rs = rate_check(plan, r, store=store).ratios()
            ratios[(name, r)] = rs
            ok &= all(1.3 <= x <= 3.0 for x in rs)
    elapsed = time.perf_counter() - t0
    detail = "; ".join(f"{k[0]} r={k[1]}: {', '.join(f'{x:.2f}' for x in v)}" for k, v in ratios.items())
    report(5, "sqrt(n) rate err(n)/err(4n)", ok, detail, elapsed, 300)


# -- 6 -------------------------------------------------------------------------------

def test_criterion_06_energy_preset7():
    t0 = time.perf_counter()
    plan = ExperimentPlan(make_model("energy3d", preset=7), T=10.0, h=1e-3, n_obs=(1000,), times=(10.0,),
                          reps=100, seed=SEED, oracle=False)
    store = replicate(plan)
    xi1 = float(np.median(store.xi[1000][:, 0, 0]))
    xi2 = float(np.median(store.xi[1000][:, 0, 1]))
    frac = float(np.mean(decisions(store, "relative", ThresholdSchedule("fixed", rho=0.01), 1000)[:, 0] == 2))
    ok = 0.1 <= xi1 <= 0.4 and 5e-4 <= xi2 <= 6e-3 and frac >= 0.9
    elapsed = time.perf_counter() - t0
    report(6, "energy3d preset 7 medians and decision", ok,
           f"median xi1 {xi1:.4f} in [0.1,0.4], median xi2 {xi2:.2e} in [5e-4,6e-3], r_hat=2 in {frac:.0%}",
           elapsed, 300)


# -- 7 -------------------------------------------------------------------------------

def test_criterion_07_oscillation_table():
    t0 = time.perf_counter()
    rows = [((10.0, 100.0), (0.005, 0.08), 1), ((10.0, 10.0), (0.05, 0.5), 2), ((1.0, 1.0), (0.0, 0.01), 1)]
    ok, parts = True, []
    for (eta, theta), (lo, hi), want in rows:
        # theta sqrt(h) must resolve the cosine, hence the finer step
        plan = ExperimentPlan(make_model("osc2d", eta=eta, theta=theta), T=10.0, h=1e-4, n_obs=(1000,),
                              times=tuple(float(t) for t in range(5, 11)), reps=100, seed=SEED, oracle=False)
        store = replicate(plan)
        med = float(np.median(store.xi[1000][:, :, 0]))
        dec = float(np.median(decisions(store, "relative", ThresholdSchedule("fixed", rho=0.02), 1000)))
        good = lo <= med <= hi and dec == want
        ok &= good
        parts.append(f"({eta:g},{theta:g}) xi1 {med:.4f} r_hat {dec:g}{'' if good else ' !'}")
    elapsed = time.perf_counter() - t0
    report(7, "oscillating-drift sensitivity table", ok, "; ".join(parts), elapsed, 600)


# -- 8 -------------------------------------------------------------------------------

def test_criterion_08_closed_form():
    t0 = time.perf_counter()
    model = make_model("osc2d", eta=1.0, theta=1.0)
    T, fine, R = 10.0, 2.5e-4, 20
    dW_fine = np.stack([brownian_increments(replication_seed(SEED, i), 40_000, 1, fine) for i in range(R)])
    dW = dW_fine.reshape(R, -1, 4, 1).sum(axis=2)
    means = []
    for h, inc in ((1e-3, dW), (fine, dW_fine)):
        v = simulate_batch(model, T, h, dW=inc, record_coeffs=False).values
        means.append(float(np.mean([np.abs(v[j, :, 0] - osc_closed_form(v[j, :, 1], 1.0, 1.0)).max()
                                    for j in range(R)])))
    factor = means[0] / means[1]
    elapsed = time.perf_counter() - t0
    report(8, "Euler vs closed form", 1.5 <= factor <= 4.0,
           f"mean sup-dev {means[0]:.4f} -> {means[1]:.4f}, factor {factor:.2f} in [1.5,4]", elapsed, 60)


# -- 9 -------------------------------------------------------------------------------

def test_criterion_09_ci_level_power():
    t0 = time.perf_counter()
    homog = ExperimentPlan(make_model("homog", Sigma=np.eye(2)), T=1.0, h=1e-3, n_obs=(1000,), times=(1.0,),
                           reps=500, seed=SEED)
    sv = ExperimentPlan(make_model("sv2d", rho=0.99), T=10.0, h=1e-3, n_obs=(1000,), times=(10.0,),
                        reps=500, seed=SEED)
    level = ci_level_power(homog, r=2, eps=0.1, alpha=0.05)
    power = ci_level_power(sv, r=2, eps=0.1, alpha=0.05)
    lv = level.level
    pw = power.power_curve()
    pw_rate = pw[0][1] if len(pw) == 1 and not [r for r in power.rows if r.region == "level"] else float("nan")
    s_homog = level.rows[0].s_true_median
    ok = math.isclose(s_homog, 0.25) and lv <= 0.10 and pw_rate >= 0.9
    elapsed = time.perf_counter() - t0
    report(9, "CI test level and power", ok,
           f"homog S={s_homog:.3f} rejection {lv:.3f} <= 0.10; sv2d rho=.99 S~{pw[0][0]:.1e} rejection {pw_rate:.3f} >= 0.9",
           elapsed, 600)


# -- 10 ------------------------------------------------------------------------------

def test_criterion_10_scale_invariance():
    t0 = time.perf_counter()
    configs = [("sv2d", {"rho": 0.5}), ("sv2d", {"rho": 0.99}), ("energy3d", {"preset": 7}),
               ("energy3d", {"preset": 8}), ("osc2d", {"eta": 1.0, "theta": 1.0})]
    same, flipped, total = True, False, 0
    for k, (name, kw) in enumerate(configs):
        seeds = [replication_seed(SEED + k, i) for i in range(10)]
        batch = simulate_batch(make_model(name, **kw), 10.0, 1e-3, seeds=seeds, record_coeffs=False)
        for j in range(10):
            path = batch.path(j)
            path = type(path)(path.values[::10], path.T)
            out = {}
            for delta in (1e-3, 1.0, 1e3):
                p = build_panel(path.scaled(delta), times=[10.0])
                out[delta] = tuple(fn(p, 10.0, 0.01).r_hat
                                   for fn in (decide_relative, decide_relative_prime, decide_absolute))
            total += 1
            same &= len({o[:2] for o in out.values()}) == 1
            flipped |= len({o[2] for o in out.values()}) > 1
    elapsed = time.perf_counter() - t0
    report(10, "scale invariance of relative rules", same and flipped,
           f"{total} paths, relative rules invariant {same}, absolute rule changed {flipped}", elapsed, 60)


# -- 11 ------------------------------------------------------------------------------

def test_criterion_11_cli_determinism(tmp_path):
    t0 = time.perf_counter()

    def files(tag, workers=1):
        d = tmp_path / tag
        d.mkdir()
        sim = ["simulate", "--model", "energy3d", "--preset", "7", "--T", "4", "--n", "400", "--seed", str(SEED)]
        codes = [
            main(sim + ["--out", str(d / "path.csv"), "--coeff-out", str(d / "coeff.csv")]),
            main(["estimate", "--in", str(d / "path.csv"), "--t", "2,4", "--z", "1:1,1:2,2:2",
                  "--out", str(d / "panel.csv"), "--z-out", str(d / "z.csv")]),
            main(["decide", "--in", str(d / "path.csv"), "--rule", "relative", "--out", str(d / "decide.txt")]),
            main(["decide", "--in", str(d / "path.csv"), "--rule", "ci", "--r", "2", "--eps", "0.1",
                  "--alpha", "0.05", "--out", str(d / "ci.txt")]),
            main(["oracle", "--coeff-in", str(d / "coeff.csv"), "--t", "2,4", "--out", str(d / "oracle.csv")]),
            main(["oracle", "--model", "sv2d", "--rho", "0.5", "--T", "2", "--seed", str(SEED),
                  "--out", str(d / "oracle_sim.csv")]),
            main(["experiment", "--model", "sv2d", "--rho", "0.5", "--T", "1", "--n", "50,100", "--times", "0.5,1",
                  "--reps", "120", "--true-r", "2", "--rate-r", "1", "--seed", str(SEED),
                  "--workers", str(workers), "--out", str(d / "exp")]),
        ]
        assert codes == [0] * len(codes), codes
        return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    runs = [files("a", 1), files("b", 1), files("c", 2), files("d", 3)]
    same = all(r == runs[0] for r in runs[1:])
    elapsed = time.perf_counter() - t0
    report(11, "CLI byte-identical reruns", same and len(runs[0]) == 11,
           f"{len(runs[0])} output files, 4 runs (workers 1,1,2,3), identical {same}", elapsed, 600)
