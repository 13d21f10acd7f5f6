"""Implementations behind the service endpoints and CLI subcommands.

Each ``run_*`` function takes a parsed config mapping, writes its CSVs (and
checkpoints) under ``out_dir`` and returns a small JSON-able summary.  Draws
are seeded per (seed, case, index), so results do not depend on the worker
count.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import yaml

from mectwin import __version__, nn
from mectwin.baselines import (all_local_policy, all_mec_policy, coalition_game,
                               exhaustive_optimal, highest_alpha, nearest_ap)
from mectwin.learner import (ExplorationConfig, LearnerConfig, init_state, parse_drift, propose,
                             run_learning, select_best, write_metrics)
from mectwin.params import ConfigError, params_from_dict
from mectwin.twin import (TwinConfig, TwinEvaluator, apply_drift, format_ratio, generate_scenario,
                          parse_ratio)

CSV_SCHEMA = "mectwin.csv/1"


class MissingArtifact(FileNotFoundError):
    """A file the command depends on (e.g. a checkpoint) does not exist."""


# --------------------------------------------------------------------------- config

def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return data


_TWIN_KEYS = {"M", "K_u", "K_b", "ratio", "ap_spacing_m", "region_radius_m", "min_distance_m",
              "shadowing_std_db"}


def build_twin(cfg: Mapping[str, Any]) -> TwinConfig:
    params = params_from_dict(cfg.get("system"))
    raw = dict(cfg.get("twin") or {})
    unknown = set(raw) - _TWIN_KEYS
    if unknown:
        raise ConfigError(f"unknown twin keys {sorted(unknown)}")
    try:
        if "ratio" in raw:
            raw["ratio"] = parse_ratio(raw["ratio"])
        elif "M" in raw:
            raw["ratio"] = (1.0,) * int(raw["M"])
        return TwinConfig(params=params, **raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _section(cfg: Mapping[str, Any], name: str, allowed: set[str]) -> dict:
    raw = dict(cfg.get(name) or {})
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown {name} keys {sorted(unknown)}")
    return raw


_TRAIN_KEYS = {"epochs", "mu_os", "mu_re", "batch_size", "sigma_L", "memory_capacity", "lr",
               "hidden", "steps_per_epoch", "feature_shift", "feature_scale", "drift"}


def build_learner(cfg: Mapping[str, Any], seed: int) -> tuple[LearnerConfig, dict]:
    tr = _section(cfg, "train", _TRAIN_KEYS)
    try:
        explore = ExplorationConfig(int(tr.get("mu_os", 10)), int(tr.get("mu_re", 100)),
                                    int(tr.get("batch_size", 128)), float(tr.get("sigma_L", 0.1)))
        lc = LearnerConfig(twin=build_twin(cfg), explore=explore,
                           memory_capacity=int(tr.get("memory_capacity", 1024)),
                           hidden=tuple(int(h) for h in tr.get("hidden", (100, 100, 100, 100))),
                           lr=float(tr.get("lr", 1e-3)),
                           steps_per_epoch=int(tr.get("steps_per_epoch", 1)),
                           feature_shift=float(tr.get("feature_shift", 80.0)),
                           feature_scale=float(tr.get("feature_scale", 20.0)), seed=seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return lc, tr


def build_id() -> str:
    """Short content hash of the package sources, stable across machines."""
    h = hashlib.sha1()
    root = Path(__file__).parent
    for f in sorted(root.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:12]


def csv_header(seed: int, command: str) -> list[str]:
    return [f"schema={CSV_SCHEMA}", f"command={command}", f"seed={seed}",
            f"version={__version__}", f"build={build_id()}"]


def write_csv(path: Path, header: Sequence[str], columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _savings(eta: float, base: float) -> float:
    if not math.isfinite(eta):
        return math.nan
    if math.isinf(base):
        return 1.0
    return 1.0 - eta / base if base > 0 else math.nan


# --------------------------------------------------------------------------- solve-ap

SOLVE_KEYS = {"n_draws", "k_values", "mec_bandwidth"}
SCHEMES = ("proposed", "all_mec", "all_local")


@dataclass(frozen=True)
class _DrawJob:
    twin: TwinConfig
    seed: int
    K: int
    draw: int
    mec_bandwidth: str


def _solve_draw(job: _DrawJob) -> list[tuple]:
    tw = TwinConfig(M=1, K_u=job.K, K_b=job.K, ratio=(1.0,), ap_spacing_m=job.twin.ap_spacing_m,
                    region_radius_m=job.twin.region_radius_m, min_distance_m=job.twin.min_distance_m,
                    shadowing_std_db=job.twin.shadowing_std_db, params=job.twin.params)
    sc = generate_scenario(tw, np.random.default_rng([job.seed, job.K, job.draw]), seed=job.draw)
    ev = TwinEvaluator(sc)
    members = tuple(range(sc.K))
    problem = ev.problem(0, members)
    prop = ev.solve_ap(0, members)
    mec = all_mec_policy(problem, prop, bandwidth=job.mec_bandwidth)
    loc = all_local_policy(problem)
    return [(job.K, job.draw, name, sol.eta_star, int(sol.feasible), sum(sol.N), sol.rho)
            for name, sol in zip(SCHEMES, (prop, mec, loc))]


def run_solve_ap(cfg: Mapping[str, Any], seed: int, out_dir: str | Path, workers: int = 1,
                 tag: str = "solve_ap") -> dict:
    sa = _section(cfg, "solve_ap", SOLVE_KEYS)
    twin = build_twin(cfg)
    n_draws = int(sa.get("n_draws", 200))
    k_values = [int(k) for k in sa.get("k_values", [5, 8, 13])]
    mode = str(sa.get("mec_bandwidth", "reference"))
    if n_draws < 1 or not k_values or any(k < 1 for k in k_values):
        raise ConfigError("need n_draws >= 1 and positive k_values")
    if mode not in ("reference", "reoptimized"):
        raise ConfigError(f"mec_bandwidth must be 'reference' or 'reoptimized', got {mode!r}")
    jobs = [_DrawJob(twin, seed, K, d, mode) for K in k_values for d in range(n_draws)]
    rows = [r for chunk in _map(_solve_draw, jobs, workers) for r in chunk]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = csv_header(seed, tag)
    write_csv(out / f"{tag}_draws.csv", header,
              ["K", "draw", "scheme", "eta_star", "feasible", "sum_N", "rho"], rows)
    summary = summarize_solve_ap(rows)
    write_csv(out / f"{tag}_summary.csv", header,
              ["K", "scheme", "mean_eta_j_per_mbit", "feasible_fraction", "mean_saving_vs_scheme",
               "sandwich_fraction"],
              [(s["K"], s["scheme"], s["mean_eta"] * 1e6, s["feasible_fraction"], s["saving"], s["sandwich"])
               for s in summary])
    return {"rows": len(rows), "files": [f"{tag}_draws.csv", f"{tag}_summary.csv"], "summary": summary}


def summarize_solve_ap(rows: Sequence[tuple]) -> list[dict]:
    """Mean energy per scheme plus the proposed scheme's saving and dominance rate against it.

    Statistics against a baseline use the draws where the proposed
    allocation is feasible; baselines keep their (possibly infinite) energy.
    """
    by = {}
    for K, draw, name, eta, feas, *_ in rows:
        by.setdefault(K, {}).setdefault(draw, {})[name] = (eta, feas)
    out = []
    for K in sorted(by):
        draws = by[K]
        for name in SCHEMES:
            etas = [draws[d][name][0] for d in draws]
            finite = [e for e in etas if math.isfinite(e)]
            ok = [d for d in draws if draws[d]["proposed"][1]]
            sav = [_savings(draws[d]["proposed"][0], draws[d][name][0]) for d in ok]
            dom = [draws[d]["proposed"][0] <= draws[d][name][0] for d in ok]
            out.append({
                "K": K, "scheme": name,
                "mean_eta": float(np.mean(finite)) if finite else math.inf,
                "feasible_fraction": float(np.mean([draws[d][name][1] for d in draws])),
                "saving": float(np.nanmean(sav)) if sav else math.nan,
                "sandwich": float(np.mean(dom)) if dom else math.nan,
            })
    return out


def run_sweep(cfg: Mapping[str, Any], seed: int, out_dir: str | Path, workers: int = 1) -> dict:
    """Repeat solve-ap while one config entry walks through a list of values.

    ``sweep: {key: "system.radio.n_subcarriers", values: [64, 128]}``; the key
    is a dotted path into the config document.
    """
    sw = _section(cfg, "sweep", {"key", "values"})
    key, values = sw.get("key"), sw.get("values")
    if not key or not isinstance(values, list) or not values:
        raise ConfigError("sweep needs a dotted 'key' and a non-empty 'values' list")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    all_rows = []
    for i, v in enumerate(values):
        c = copy.deepcopy(dict(cfg))
        node = c
        parts = str(key).split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"sweep key {key!r} crosses a non-mapping")
        node[parts[-1]] = v
        res = run_solve_ap(c, seed, out, workers, tag=f"sweep_{i:02d}")
        for s in res["summary"]:
            all_rows.append((key, v, s["K"], s["scheme"], s["mean_eta"] * 1e6, s["feasible_fraction"],
                             s["saving"]))
    write_csv(out / "sweep.csv", csv_header(seed, "sweep"),
              ["key", "value", "K", "scheme", "mean_eta_j_per_mbit", "feasible_fraction",
               "mean_saving_vs_scheme"], all_rows)
    return {"rows": len(all_rows), "files": ["sweep.csv"]}


# --------------------------------------------------------------------------- train

CHECKPOINT_NAME = "model.npz"


def run_train(cfg: Mapping[str, Any], seed: int, out_dir: str | Path, epochs: int | None = None,
              drift: Sequence[str] = (), resume: str | Path | None = None) -> dict:
    lc, tr = build_learner(cfg, seed)
    epochs = int(tr.get("epochs", 100) if epochs is None else epochs)
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    try:
        schedule = [parse_drift(d) for d in list(tr.get("drift", [])) + list(drift)]
        for _, ratio in schedule:
            if len(parse_ratio(ratio)) != lc.twin.M:
                raise ConfigError(f"drift ratio {ratio!r} does not have M = {lc.twin.M} entries")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    state = None
    if resume is not None:
        path = Path(resume)
        if not path.is_file():
            raise MissingArtifact(f"checkpoint not found: {path}")
        params = nn.load_checkpoint(path)
        state = init_state(lc, params)
        if "ratio" in params.meta:
            state.twin = apply_drift(state.twin, params.meta["ratio"])
    state, log = run_learning(lc, epochs, schedule, state=state)
    state.params.meta.update({"ratio": format_ratio(state.twin.ratio), "seed": seed,
                              "feature_shift": lc.feature_shift, "feature_scale": lc.feature_scale,
                              "M": lc.twin.M, "K_u": lc.twin.K_u, "K_b": lc.twin.K_b})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(state.params, out / CHECKPOINT_NAME)
    write_metrics(log, out / "metrics.csv", csv_header(seed, "train"))
    tail = [m for m in log[-100:] if math.isfinite(m.loss)]
    return {"epochs_run": len(log), "final_epoch": state.epoch,
            "mean_loss_last_100": float(np.mean([m.loss for m in tail])) if tail else math.nan,
            "converged": bool(state.converged),
            "files": [CHECKPOINT_NAME, "metrics.csv"]}


# --------------------------------------------------------------------------- compare

COMPARE_KEYS = {"n_test", "checkpoint", "mu_os", "mu_re", "game_max_iters", "game_patience",
                "exhaustive_cap"}
METHODS = ("dl", "dl_exploit", "nearest_ap", "highest_alpha", "coalition_game", "exhaustive")


@dataclass(frozen=True)
class _CompareJob:
    learner: LearnerConfig
    params: nn.MlpParams
    seed: int
    index: int
    mu_os: int
    mu_re: int
    game_max_iters: int
    game_patience: int
    exhaustive_cap: int


def _compare_one(job: _CompareJob) -> list[tuple]:
    tw = job.learner.twin
    sc = generate_scenario(tw, np.random.default_rng([job.seed, 7, job.index]), seed=job.index)
    rng = np.random.default_rng([job.seed, 8, job.index])
    rows = []

    ev = TwinEvaluator(sc)
    ex = ExplorationConfig(job.mu_os, job.mu_re, job.learner.explore.batch_size, job.learner.explore.sigma_L)
    cands = propose(job.params, job.learner, sc, rng, ex)
    _, q, qs = select_best(ev, cands)
    rows.append((job.index, "dl", q, ev.objective_evaluations))
    rows.append((job.index, "dl_exploit", qs[0], 1))

    ev = TwinEvaluator(sc)
    rows.append((job.index, "nearest_ap", ev.evaluate(nearest_ap(sc)).Q, 1))
    rows.append((job.index, "highest_alpha", ev.evaluate(highest_alpha(sc)).Q, 1))
    g = coalition_game(sc, rng, max_iters=job.game_max_iters, patience=job.game_patience,
                       evaluator=TwinEvaluator(sc))
    rows.append((job.index, "coalition_game", g.Q, g.evaluations))
    if sc.M ** sc.K <= job.exhaustive_cap:
        ev = TwinEvaluator(sc)
        _, q = exhaustive_optimal(sc, job.exhaustive_cap, ev)
        rows.append((job.index, "exhaustive", q, ev.objective_evaluations))
    return rows


def run_compare(cfg: Mapping[str, Any], seed: int, out_dir: str | Path, workers: int = 1,
                checkpoint: str | Path | None = None) -> dict:
    lc, tr = build_learner(cfg, seed)
    cp = _section(cfg, "compare", COMPARE_KEYS)
    path = Path(checkpoint or cp.get("checkpoint") or Path(out_dir) / CHECKPOINT_NAME)
    if not path.is_file():
        raise MissingArtifact(f"checkpoint not found: {path}")
    params = nn.load_checkpoint(path)
    d = lc.twin.M * lc.twin.K
    if params.sizes[0] != d or params.sizes[-1] != d:
        raise ConfigError(f"checkpoint expects {params.sizes[0]} inputs, config gives M*K = {d}")
    n_test = int(cp.get("n_test", 100))
    jobs = [_CompareJob(lc, params, seed, i, int(cp.get("mu_os", lc.explore.mu_os)),
                        int(cp.get("mu_re", lc.explore.mu_re)), int(cp.get("game_max_iters", 100)),
                        int(cp.get("game_patience", 20)), int(cp.get("exhaustive_cap", 4096)))
            for i in range(n_test)]
    rows = [r for chunk in _map(_compare_one, jobs, workers) for r in chunk]
    table = summarize_compare(rows)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = csv_header(seed, "compare")
    write_csv(out / "compare_scenarios.csv", header, ["scenario", "method", "Q", "evaluations"], rows)
    write_csv(out / "compare_table.csv", header,
              ["method", "mean_Q_j_per_mbit", "relative_to_nearest_pct", "infeasible",
               "mean_evaluations"],
              [(t["method"], t["mean_Q"] * 1e6, t["relative_pct"], t["infeasible"], t["mean_evaluations"])
               for t in table])
    return {"n_test": n_test, "table": table, "files": ["compare_scenarios.csv", "compare_table.csv"]}


def summarize_compare(rows: Sequence[tuple]) -> list[dict]:
    """Means over the scenarios where every method found a feasible association."""
    by: dict[int, dict[str, tuple[float, int]]] = {}
    for idx, method, q, n in rows:
        by.setdefault(idx, {})[method] = (q, n)
    methods = [m for m in METHODS if any(m in v for v in by.values())]
    common = [i for i, v in by.items() if all(m in v and math.isfinite(v[m][0]) for m in methods)]
    table = []
    for m in methods:
        qs = [by[i][m][0] for i in common]
        table.append({
            "method": m,
            "mean_Q": float(np.mean(qs)) if qs else math.nan,
            "infeasible": sum(1 for v in by.values() if m in v and not math.isfinite(v[m][0])),
            "mean_evaluations": float(np.mean([v[m][1] for v in by.values() if m in v])),
            "n_common": len(common),
        })
    ref = next((t["mean_Q"] for t in table if t["method"] == "nearest_ap"), math.nan)
    for t in table:
        t["relative_pct"] = 100.0 * t["mean_Q"] / ref if ref and math.isfinite(ref) else math.nan
    return table


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
