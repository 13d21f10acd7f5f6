"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict; the lines are printed together at the
end of the pytest run (see ``conftest.py``).  Run on its own with
``pytest tests/test_acceptance.py -v``.
"""

import copy
import csv
import functools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from mectwin import nn, phy
from mectwin.ap_optimizer import DT, URLLC, ApProblem, make_solver, solve_ap
from mectwin.energy import eta_dt
from mectwin.experiments import build_learner, load_config, run_compare, run_solve_ap
from mectwin.learner import init_state, run_learning
from mectwin.params import SystemParams
from mectwin.queueing import geo_d1_delay_ccdf, ps_delay_violation, rho_threshold, simulate_geo_d1

from tests.helpers import random_user, random_users
from tests.oracles import grid_min_max

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS: dict[int, tuple[bool, str]] = {}


def criterion(number):
    """Record the (ok, detail) returned by the test body, then fail the test if not ok."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                RESULTS[number] = (False, f"error: {type(exc).__name__}: {exc}")
                raise
            RESULTS[number] = (ok, detail)
            print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
            assert ok, detail
        return run
    return wrap


def read_rows(path):
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


# --------------------------------------------------------------------------- 1

def _solve_ap_stats(out_dir):
    rows = read_rows(Path(out_dir) / "solve_ap_draws.csv")
    by = {}
    for r in rows:
        by.setdefault((int(r["K"]), int(r["draw"])), {})[r["scheme"]] = (float(r["eta_star"]), r["feasible"] == "1")
    stats = {}
    for K in sorted({k for k, _ in by}):
        draws = [v for (k, _), v in by.items() if k == K and v["proposed"][1]]
        entry = {"feasible": len(draws)}
        for base in ("all_mec", "all_local"):
            entry[f"dominates_{base}"] = np.mean([d["proposed"][0] <= d[base][0] for d in draws])
            finite = [d for d in draws if math.isfinite(d[base][0])]
            entry[f"saving_{base}"] = np.mean([1 - d["proposed"][0] / d[base][0] for d in finite])
            entry[f"{base}_feasible"] = np.mean([d[base][1] for d in draws])
        stats[K] = entry
    return stats


@criterion(1)
def test_single_ap_sandwich(tmp_path):
    cfg = load_config(CONFIGS / "fig5_single_ap.yaml")
    t0 = time.perf_counter()
    run_solve_ap(cfg, 0, tmp_path / "ref", workers=1)
    elapsed = time.perf_counter() - t0
    stats = _solve_ap_stats(tmp_path / "ref")
    cfg["solve_ap"]["mec_bandwidth"] = "reoptimized"
    run_solve_ap(cfg, 0, tmp_path / "reopt", workers=1)
    reopt = _solve_ap_stats(tmp_path / "reopt")
    ok = elapsed < 300 and all(
        s["dominates_all_mec"] == 1.0 and s["dominates_all_local"] == 1.0
        and s["saving_all_mec"] > 0.5 and s["saving_all_local"] > 0.5 for s in stats.values())
    parts = [f"K={K}: feasible {s['feasible']}/200, saving vs MEC {s['saving_all_mec']:.1%}"
             f" (MEC within Pmax on {s['all_mec_feasible']:.0%}), vs local {s['saving_all_local']:.1%}"
             for K, s in stats.items()]
    info = ", ".join(f"K={K}: {s['saving_all_mec']:.1%}" for K, s in reopt.items())
    return ok, "; ".join(parts) + f"; {elapsed:.0f}s. [info] re-optimized-bandwidth MEC savings {info}"


# --------------------------------------------------------------------------- 2

@criterion(2)
def test_optimizer_matches_grid_oracle():
    p = SystemParams()
    t0 = time.perf_counter()
    errors = []
    for i in range(30):
        rng = np.random.default_rng([2, i])
        users = random_users(rng, 2, 2, p)
        sol = solve_ap(ApProblem(users, p))
        ref = grid_min_max(users, p)
        errors.append(abs(sol.eta_star - ref) / ref)
    elapsed = time.perf_counter() - t0
    worst = max(errors)
    return worst <= 1e-3 and elapsed < 600, f"30 instances, worst relative gap {worst:.2e}, {elapsed:.0f}s"


# --------------------------------------------------------------------------- 3

@criterion(3)
def test_queueing_against_simulation():
    rng = np.random.default_rng(3)
    zs = []
    for _ in range(10):
        D = int(rng.integers(2, 8))
        lam = rng.uniform(0.1, 0.85) / D
        level = int(rng.integers(0, D + 1))
        emp = simulate_geo_d1(lam, D, 10 ** 7, rng, max_delay=level)
        exact = geo_d1_delay_ccdf(lam, D, level)
        zs.append(abs(emp.ccdf[level] - exact) / emp.stderr[level])
    identity = []
    for _ in range(10):
        eps = 10 ** rng.uniform(-9, -3)
        c = rng.uniform(1e3, 5e4)
        S = rng.uniform(5e4, 5e5)
        dmax = int(rng.integers(2, 16))
        th = rho_threshold(eps, c, S, dmax)
        if th is None:
            continue
        identity.append(abs(ps_delay_violation(th, S, c, dmax - 1) - eps / 2) / (eps / 2))
    ok = max(zs) <= 3 and len(identity) >= 5 and max(identity) <= 1e-12
    return ok, (f"max |MC - exact| = {max(zs):.2f} SE over 10 configs; "
                f"threshold identity worst relative error {max(identity):.1e} on {len(identity)} cases")


# --------------------------------------------------------------------------- 4

@criterion(4)
def test_structural_properties():
    p = SystemParams()
    rng = np.random.default_rng(4)
    convex_bad = mono_bad = x_bad = 0
    for _ in range(10):
        u = random_user(rng, DT, p)
        N = rng.uniform(0.1, 8)
        xs = np.linspace(0, 1, 100)
        vals = []
        for x in xs:
            P = phy.required_power_dt(x * u.lam * u.bits / p.radio.Ts, N, u.alpha, p.radio, p_cap=math.inf)
            vals.append(eta_dt(x, u.lam, u.cycles, u.bits, P, p.radio.Ts, p.k0))
        vals = np.array(vals)
        convex_bad += int(np.sum(np.diff(vals, 2) < -1e-12 * np.abs(vals).max()))
    for service in (URLLC, DT):
        for _ in range(10):
            s = make_solver(random_user(rng, service, p), p, p.radio.Nmax)
            pts = [s.best_at(n) for n in np.linspace(s.n_upper / 100, s.n_upper, 100)]
            pts = [q for q in pts if q.ok]
            eta = np.array([q.eta for q in pts])
            x = np.array([q.x for q in pts])
            mono_bad += int(np.sum(np.diff(eta) > 1e-12 * eta.max()))
            x_bad += int(np.sum(np.diff(x) < -1e-12))
    ok = convex_bad == mono_bad == x_bad == 0
    return ok, (f"violations: convexity {convex_bad}, energy-vs-N {mono_bad}, offloading-vs-N {x_bad} "
                f"(10 DT users for convexity, 10 users per class for the N sweeps, 100 points each)")


# --------------------------------------------------------------------------- 5

def _numeric_grads(params, x, t, h=1e-6):
    out = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + h
            up = nn.loss(nn.forward(params, x), t)
            arr[i] = old - h
            down = nn.loss(nn.forward(params, x), t)
            arr[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


@criterion(5)
def test_network_machinery(tmp_path):
    rng = np.random.default_rng(5)
    p = nn.init_params([8, 12, 12, 8], rng)
    for b in p.b:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    x = rng.normal(size=(6, 8))
    t = rng.integers(0, 2, size=(6, 8)).astype(float)
    _, grads = nn.backward(p, x, t)
    rel = max(np.linalg.norm(g - n) / max(np.linalg.norm(g), np.linalg.norm(n))
              for g, n in zip(grads, _numeric_grads(p, x, t)))
    d = 8
    loss_err = abs(nn.loss(np.full((4, d), 0.5), rng.integers(0, 2, size=(4, d))) - d * math.log(2))
    nn.adam_step(p, grads)
    nn.save_checkpoint(p, tmp_path / "m.npz")
    q = nn.load_checkpoint(tmp_path / "m.npz")
    exact = all(a.tobytes() == b.tobytes() and a.dtype == b.dtype
                for a, b in zip(p.arrays() + p.adam.m + p.adam.v, q.arrays() + q.adam.m + q.adam.v))
    exact = exact and q.adam.step == p.adam.step
    ok = rel < 1e-4 and loss_err <= 1e-12 and exact
    return ok, f"gradient relative error {rel:.1e}; uniform-output loss error {loss_err:.1e}; checkpoint bit-exact {exact}"


# --------------------------------------------------------------------------- 6, 7, 8

@pytest.fixture(scope="module")
def learning_setup():
    cfg = load_config(CONFIGS / "learning_small.yaml")
    lc, tr = build_learner(cfg, 0)
    t0 = time.perf_counter()
    state, log = run_learning(lc, int(tr["epochs"]))
    return cfg, lc, state, log, time.perf_counter() - t0


@pytest.fixture(scope="module")
def comparison(learning_setup, tmp_path_factory):
    cfg, lc, state, _, train_time = learning_setup
    out = tmp_path_factory.mktemp("compare")
    nn.save_checkpoint(state.params, out / "model.npz")
    t0 = time.perf_counter()
    res = run_compare(cfg, 0, out, workers=1, checkpoint=out / "model.npz")
    table = {row["method"]: row for row in res["table"]}
    return table, train_time + time.perf_counter() - t0


@criterion(6)
def test_learning_quality(learning_setup, comparison):
    table, elapsed = comparison
    log = learning_setup[3]
    q = {m: table[m]["mean_Q"] for m in table}
    gap = q["dl"] / q["exhaustive"] - 1
    ok = (gap <= 0.10 and q["dl"] < q["nearest_ap"] and q["dl"] < q["highest_alpha"]
          and elapsed < 1800)
    tail = np.mean([m.loss for m in log[-100:]])
    return ok, (f"mean Q (J/Mbit) DL {q['dl'] * 1e6:.4f}, exhaustive {q['exhaustive'] * 1e6:.4f} "
                f"(gap {gap:.2%}), nearest {q['nearest_ap'] * 1e6:.4f}, highest-gain "
                f"{q['highest_alpha'] * 1e6:.4f}; {table['dl']['n_common']} common feasible of 500; "
                f"final loss {tail:.3f}; {elapsed:.0f}s. [info] exploit-only DL {q['dl_exploit'] * 1e6:.4f}")


@criterion(7)
def test_drift_recovery(learning_setup):
    _, lc, trained, _, _ = learning_setup
    state = copy.deepcopy(trained)
    frozen = trained.params.copy()
    drift_at = state.epoch
    _, log = run_learning(lc, 1000, [(drift_at, "9:1")], state=state, reference=frozen)
    assert log[0].drift_flag == 1 and log[0].ratio == "9:1"
    window = [m for m in log[500:] if math.isfinite(m.Q_best)]
    adaptive = np.mean([m.Q_best for m in window])
    fixed = np.mean([m.Q_reference for m in window])
    adaptive_exploit = np.mean([m.Q_exploit for m in window])
    blocks = []
    for b in range(10):
        part = [m for m in log[100 * b:100 * (b + 1)] if math.isfinite(m.Q_best)]
        blocks.append(np.mean([m.Q_best for m in part]) < np.mean([m.Q_reference for m in part]))
    first = blocks.index(True) + 1 if True in blocks else None
    ok = adaptive < fixed
    return ok, (f"post-drift epochs 501-1000: adaptive learner mean Q {adaptive * 1e6:.4f} vs frozen network "
                f"{fixed * 1e6:.4f} J/Mbit; adaptive below frozen from 100-epoch block {first}. "
                f"[info] adaptive exploit-only {adaptive_exploit * 1e6:.4f} J/Mbit")


@criterion(8)
def test_ordering_against_game(comparison):
    table, _ = comparison
    dl, game, ha = (table[m] for m in ("dl", "coalition_game", "highest_alpha"))
    ok = (dl["mean_Q"] <= game["mean_Q"] <= ha["mean_Q"]
          and dl["mean_evaluations"] <= game["mean_evaluations"])
    return ok, (f"mean Q (J/Mbit) DL {dl['mean_Q'] * 1e6:.4f} <= game {game['mean_Q'] * 1e6:.4f} <= "
                f"highest-gain {ha['mean_Q'] * 1e6:.4f}; objective evaluations DL "
                f"{dl['mean_evaluations']:.1f} vs game {game['mean_evaluations']:.1f}")


# --------------------------------------------------------------------------- 9

@criterion(9)
def test_complexity_scaling():
    p = SystemParams()
    counts = {}
    for K in (8, 16):
        counts[K] = np.mean([solve_ap(ApProblem(random_users(np.random.default_rng([9, K, s]), K // 2,
                                                             K // 2, p), p)).evaluations
                             for s in range(30)])
    ratio = counts[16] / counts[8]
    return 1.6 <= ratio <= 2.4, (f"mean inner evaluations {counts[8]:.0f} at K=8, {counts[16]:.0f} "
                                 f"at K=16; ratio {ratio:.2f} (30 draws each)")
