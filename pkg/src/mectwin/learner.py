"""Twin-driven training of the association network.

Every epoch draws a fresh scenario, proposes associations around the
network's current guess, labels the scenario with the best one the twin
finds, and takes an Adam step on a minibatch sampled from replay memory.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from mectwin import nn
from mectwin.twin import (AssociationScheme, Scenario, TwinConfig, TwinEvaluator, apply_drift,
                          dnn_input_features, format_ratio, generate_scenario)

METRIC_COLUMNS = ["epoch", "loss", "Q_best", "Q_exploit", "feasible_fraction", "drift_flag",
                  "ratio", "evaluations", "Q_reference"]


class ReplayMemory:
    """Fixed-capacity FIFO of (features, label) pairs."""

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[tuple[np.ndarray, np.ndarray]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, features: np.ndarray, label: np.ndarray) -> None:
        self._items.append((np.asarray(features, dtype=np.float64), np.asarray(label, dtype=np.float64)))

    def items(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(self._items)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """``n`` distinct entries uniformly at random, or everything if fewer are stored."""
        if not self._items:
            raise ValueError("memory is empty")
        if len(self._items) <= n:
            idx = np.arange(len(self._items))
        else:
            idx = rng.choice(len(self._items), size=n, replace=False)
        xs = np.stack([self._items[i][0] for i in idx])
        ys = np.stack([self._items[i][1] for i in idx])
        return xs, ys


@dataclass(frozen=True)
class ExplorationConfig:
    mu_os: int = 10
    mu_re: int = 100
    batch_size: int = 128
    sigma_L: float = 0.1

    def __post_init__(self):
        if self.mu_os < 0 or self.mu_re < 0 or self.batch_size < 1 or self.sigma_L <= 0:
            raise ValueError("exploration counts must be >= 0, batch >= 1, sigma_L > 0")


@dataclass(frozen=True)
class LearnerConfig:
    twin: TwinConfig = field(default_factory=TwinConfig)
    explore: ExplorationConfig = field(default_factory=ExplorationConfig)
    memory_capacity: int = 1024
    hidden: tuple[int, ...] = (100, 100, 100, 100)
    lr: float = 1e-3
    steps_per_epoch: int = 1
    # affine map applied to the dB-valued features before they enter the network
    feature_shift: float = 80.0
    feature_scale: float = 20.0
    seed: int = 0


# --------------------------------------------------------------------------- candidate generation

def exploit_map(beta_hat, M: int) -> AssociationScheme:
    """Per-user argmax over APs (lowest index on ties)."""
    b = np.asarray(beta_hat, dtype=np.float64).reshape(-1, M)
    return AssociationScheme(tuple(int(i) for i in b.argmax(axis=1)), M)


def one_step_neighbors(beta0: AssociationScheme, count: int,
                       rng: np.random.Generator) -> list[AssociationScheme]:
    """``count`` distinct schemes differing from ``beta0`` in exactly one user."""
    K, M = len(beta0.assignment), beta0.M
    total = K * (M - 1)
    if count <= 0 or total == 0:
        return []
    picks = rng.choice(total, size=min(count, total), replace=False)
    out = []
    for p in picks:
        k, j = divmod(int(p), M - 1)
        m = j if j < beta0.assignment[k] else j + 1
        a = list(beta0.assignment)
        a[k] = m
        out.append(AssociationScheme(tuple(a), M))
    return out


def random_schemes(count: int, K: int, M: int, rng: np.random.Generator) -> list[AssociationScheme]:
    if count <= 0:
        return []
    draws = rng.integers(M, size=(count, K))
    return [AssociationScheme(tuple(int(v) for v in row), M) for row in draws]


def select_best(evaluator: TwinEvaluator,
                candidates: Sequence[AssociationScheme]) -> tuple[AssociationScheme | None, float, list[float]]:
    """Lowest-Q candidate (first on ties); ``None`` if every candidate is infeasible."""
    if not candidates:
        raise ValueError("need at least one candidate")
    qs = [evaluator.evaluate(c).Q for c in candidates]
    i = int(np.argmin(qs))
    if not math.isfinite(qs[i]):
        return None, math.inf, qs
    return candidates[i], qs[i], qs


# --------------------------------------------------------------------------- training loop

@dataclass
class LearnerState:
    config: LearnerConfig
    params: nn.MlpParams
    memory: ReplayMemory
    rng: np.random.Generator
    twin: TwinConfig
    epoch: int = 0
    last_loss: float = math.nan

    @property
    def converged(self) -> bool:
        return self.last_loss < self.config.explore.sigma_L


def init_state(config: LearnerConfig, params: nn.MlpParams | None = None) -> LearnerState:
    tw = config.twin
    d = tw.M * tw.K
    if params is None:
        params = nn.init_params(nn.layer_sizes(d, d, config.hidden),
                                np.random.default_rng([config.seed, 0]), lr=config.lr)
    elif params.sizes[0] != d or params.sizes[-1] != d:
        raise ValueError(f"network sizes {params.sizes} do not fit M*K = {d}")
    return LearnerState(config, params, ReplayMemory(config.memory_capacity),
                        np.random.default_rng([config.seed, 2]), tw, epoch=params.epoch)


def network_input(config: LearnerConfig, scenario: Scenario) -> np.ndarray:
    return (dnn_input_features(scenario) - config.feature_shift) / config.feature_scale


def propose(params: nn.MlpParams, config: LearnerConfig, scenario: Scenario,
            rng: np.random.Generator, explore: ExplorationConfig | None = None) -> list[AssociationScheme]:
    """Exploit candidate first, then one-step and random explorations."""
    ex = config.explore if explore is None else explore
    beta0 = exploit_map(nn.forward(params, network_input(config, scenario)), scenario.M)
    return ([beta0] + one_step_neighbors(beta0, ex.mu_os, rng)
            + random_schemes(ex.mu_re, scenario.K, scenario.M, rng))


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    Q_best: float
    Q_exploit: float
    feasible_fraction: float
    drift_flag: int
    ratio: str
    evaluations: int
    Q_reference: float = math.nan

    def row(self) -> list:
        return [getattr(self, c) for c in METRIC_COLUMNS]


def train_epoch(state: LearnerState, scenario: Scenario, drift_flag: int = 0) -> EpochMetrics:
    cfg = state.config
    x = network_input(cfg, scenario)
    candidates = propose(state.params, cfg, scenario, state.rng)
    ev = TwinEvaluator(scenario)
    best, q_best, qs = select_best(ev, candidates)
    state.epoch += 1
    state.params.epoch = state.epoch
    feasible = sum(math.isfinite(q) for q in qs) / len(qs)
    ratio = format_ratio(state.twin.ratio)
    if best is None:
        return EpochMetrics(state.epoch, math.nan, math.inf, qs[0], feasible, drift_flag, ratio,
                            ev.objective_evaluations)
    state.memory.push(x, best.beta.ravel())
    value = math.nan
    for _ in range(cfg.steps_per_epoch):
        xs, ys = state.memory.sample(cfg.explore.batch_size, state.rng)
        value, grads = nn.backward(state.params, xs, ys)
        nn.adam_step(state.params, grads)
    state.last_loss = value
    return EpochMetrics(state.epoch, value, q_best, qs[0], feasible, drift_flag, ratio,
                        ev.objective_evaluations)


def parse_drift(spec: str) -> tuple[int, str]:
    """``"9:1@2000"`` → ``(2000, "9:1")``."""
    try:
        ratio, epoch = spec.rsplit("@", 1)
        return int(epoch), ratio
    except ValueError:
        raise ValueError(f"drift must look like 'ratio@epoch', got {spec!r}") from None


def scenario_stream(config: LearnerConfig, twin: TwinConfig, start_epoch: int,
                    epochs: int, drift_schedule: Iterable[tuple[int, str]] = ()):
    """Yields ``(epoch, twin_config, drift_flag, scenario)``.

    Epoch ``e`` (1-based) draws from its own seeded stream, so a run resumed
    at any epoch sees the same scenarios as an uninterrupted one.  A drift
    scheduled at epoch ``E`` applies to epochs ``E+1`` onward.
    """
    schedule = sorted(drift_schedule)
    for e0, ratio in schedule:
        if e0 < start_epoch:
            twin = apply_drift(twin, ratio)
    for e in range(start_epoch + 1, start_epoch + epochs + 1):
        flag = 0
        for e0, ratio in schedule:
            if e0 == e - 1:
                twin = apply_drift(twin, ratio)
                flag = 1
        rng = np.random.default_rng([config.seed, 1, e])
        yield e, twin, flag, generate_scenario(twin, rng, seed=e)


def run_learning(config: LearnerConfig, epochs: int,
                 drift_schedule: Iterable[tuple[int, str]] = (),
                 state: LearnerState | None = None,
                 reference: nn.MlpParams | None = None,
                 on_epoch: Callable[[EpochMetrics], None] | None = None) -> tuple[LearnerState, list[EpochMetrics]]:
    """Train for ``epochs`` epochs, applying ratio drifts on schedule.

    On a drift the network keeps its weights and memory (warm start).  With
    ``reference`` set, each epoch also records the exploit-only Q of that
    frozen network on the same scenario.
    """
    state = init_state(config) if state is None else state
    log: list[EpochMetrics] = []
    for e, twin, flag, scenario in scenario_stream(config, state.twin, state.epoch, epochs, drift_schedule):
        state.twin = twin
        m = train_epoch(state, scenario, flag)
        if reference is not None:
            beta_ref = exploit_map(nn.forward(reference, network_input(config, scenario)), scenario.M)
            m.Q_reference = TwinEvaluator(scenario).evaluate(beta_ref).Q
        log.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return state, log


def write_metrics(rows: Sequence[EpochMetrics], path: str | Path, header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow(r.row())
