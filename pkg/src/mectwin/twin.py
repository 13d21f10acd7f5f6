"""The digital twin: seeded network draws and association evaluation.

A :class:`Scenario` freezes one draw of user positions, shadowing and
traffic.  :class:`TwinEvaluator` scores user associations on it by solving
every AP independently; per-user inner solvers and per-AP results are
memoized on the evaluator, so exploring many associations of the same draw
costs little more than the distinct (AP, user subset) pairs it touches.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from mectwin.ap_optimizer import DT, URLLC, ApProblem, ApSolution, ApUser, UserSolver, make_solver, solve_ap
from mectwin.params import ConfigError, RadioConfig, SystemParams, Tolerances, UrllcQos
from mectwin.phy import LinkGain, link_from_geometry

SCENARIO_SCHEMA = "mectwin.scenario/1"


def parse_ratio(text: str | Sequence[float]) -> tuple[float, ...]:
    """``"9:1"`` → ``(9.0, 1.0)``; sequences pass through after validation."""
    if isinstance(text, str):
        try:
            parts = tuple(float(p) for p in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad distribution ratio {text!r}") from None
    else:
        parts = tuple(float(p) for p in text)
    if not parts or any(not (p >= 0 and math.isfinite(p)) for p in parts) or sum(parts) <= 0:
        raise ConfigError(f"bad distribution ratio {text!r}")
    return parts


def format_ratio(ratio: Sequence[float]) -> str:
    return ":".join(f"{r:g}" for r in ratio)


@dataclass(frozen=True)
class TwinConfig:
    """How scenarios are drawn.

    APs sit on a line ``ap_spacing_m`` apart.  Region m is the disk of
    radius ``region_radius_m`` around AP m (minus a ``min_distance_m`` hole so
    path loss stays in the far field); a user lands in region m with
    probability proportional to ``ratio[m]``.
    """

    M: int = 2
    K_u: int = 5
    K_b: int = 5
    ratio: tuple[float, ...] = (5.0, 5.0)
    ap_spacing_m: float = 200.0
    region_radius_m: float = 100.0
    min_distance_m: float = 10.0
    shadowing_std_db: float = 8.0
    params: SystemParams = field(default_factory=SystemParams)

    def __post_init__(self):
        if self.M < 1 or self.K_u < 0 or self.K_b < 0 or self.K_u + self.K_b < 1:
            raise ConfigError("need M >= 1 and at least one user")
        object.__setattr__(self, "ratio", parse_ratio(self.ratio))
        if len(self.ratio) != self.M:
            raise ConfigError(f"ratio has {len(self.ratio)} entries for M = {self.M} APs")
        if not 0 < self.min_distance_m < self.region_radius_m:
            raise ConfigError("need 0 < min_distance_m < region_radius_m")
        if self.ap_spacing_m <= 0 or self.shadowing_std_db < 0:
            raise ConfigError("ap_spacing_m must be > 0 and shadowing_std_db >= 0")

    @property
    def K(self) -> int:
        return self.K_u + self.K_b


def apply_drift(config: TwinConfig, new_ratio: str | Sequence[float]) -> TwinConfig:
    """Same network, new user distribution ratio."""
    return replace(config, ratio=parse_ratio(new_ratio))


@dataclass(frozen=True)
class ApSite:
    position: tuple[float, float]
    S: float
    Nmax: int


@dataclass(frozen=True)
class UserProfile:
    service: str
    lam: float  # packets/slot
    bits: float
    cycles: float
    position: tuple[float, float]
    c_max: float
    gains: tuple[LinkGain, ...]

    def ap_user(self, m: int, uid: int = -1) -> ApUser:
        return ApUser(self.service, self.lam, self.bits, self.cycles, self.c_max,
                      self.gains[m].alpha, uid)


@dataclass(frozen=True)
class Scenario:
    aps: tuple[ApSite, ...]
    users: tuple[UserProfile, ...]
    params: SystemParams
    seed: int | None = None
    ratio: tuple[float, ...] = ()

    @property
    def M(self) -> int:
        return len(self.aps)

    @property
    def K(self) -> int:
        return len(self.users)

    def alpha_matrix(self) -> np.ndarray:
        return np.array([[g.alpha for g in u.gains] for u in self.users])

    def distance_matrix(self) -> np.ndarray:
        pos = np.array([u.position for u in self.users])
        ap = np.array([a.position for a in self.aps])
        return np.linalg.norm(pos[:, None, :] - ap[None, :, :], axis=2)


def generate_scenario(config: TwinConfig, rng: np.random.Generator, seed: int | None = None) -> Scenario:
    p = config.params
    M, K = config.M, config.K
    aps = tuple(ApSite((m * config.ap_spacing_m, 0.0), p.S, p.radio.Nmax) for m in range(M))
    weights = np.asarray(config.ratio) / sum(config.ratio)
    region = rng.choice(M, size=K, p=weights)
    r0, r1 = config.min_distance_m, config.region_radius_m
    radius = np.sqrt(rng.uniform(r0 * r0, r1 * r1, size=K))
    angle = rng.uniform(0.0, 2.0 * math.pi, size=K)
    shadow = rng.normal(0.0, config.shadowing_std_db, size=(K, M))
    dt_rate = rng.uniform(*p.dt_rate_pps, size=config.K_b)
    dt_bits = rng.uniform(*p.dt_packet_kbit, size=config.K_b) * 1e3

    users = []
    for k in range(K):
        cx, cy = aps[region[k]].position
        pos = (cx + radius[k] * math.cos(angle[k]), cy + radius[k] * math.sin(angle[k]))
        gains = tuple(
            link_from_geometry(math.hypot(pos[0] - a.position[0], pos[1] - a.position[1]),
                               float(shadow[k, m]))
            for m, a in enumerate(aps))
        if k < config.K_u:
            users.append(UserProfile(URLLC, p.per_slot(p.urllc_rate_pps), p.urllc_bits,
                                     p.urllc_cycles, pos, p.c_max_urllc, gains))
        else:
            j = k - config.K_u
            bits = float(dt_bits[j])
            users.append(UserProfile(DT, p.per_slot(float(dt_rate[j])), bits, p.k1 * bits / 8.0,
                                     pos, p.c_max_dt, gains))
    return Scenario(aps, tuple(users), p, seed, config.ratio)


# --------------------------------------------------------------------------- associations

@dataclass(frozen=True)
class AssociationScheme:
    """One-hot K×M user→AP assignment, stored compactly as the AP index per user."""

    assignment: tuple[int, ...]
    M: int

    def __post_init__(self):
        if self.M < 1 or any(not 0 <= a < self.M for a in self.assignment):
            raise ValueError("assignment entries must lie in [0, M)")

    @classmethod
    def from_beta(cls, beta) -> "AssociationScheme":
        beta = np.asarray(beta)
        if beta.ndim != 2 or not np.all((beta == 0) | (beta == 1)) or not np.all(beta.sum(axis=1) == 1):
            raise ValueError("beta must be a binary matrix with exactly one 1 per row")
        return cls(tuple(int(i) for i in beta.argmax(axis=1)), beta.shape[1])

    @property
    def beta(self) -> np.ndarray:
        out = np.zeros((len(self.assignment), self.M), dtype=np.int8)
        out[np.arange(len(self.assignment)), self.assignment] = 1
        return out

    def users_of(self, m: int) -> tuple[int, ...]:
        return tuple(k for k, a in enumerate(self.assignment) if a == m)


@dataclass
class TwinEvaluation:
    Q: float
    solutions: list[ApSolution]
    scheme: AssociationScheme

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.Q)


class TwinEvaluator:
    """Scores associations on one scenario, memoizing per-AP work.

    ``objective_evaluations`` counts calls to :meth:`evaluate` (cache hits
    included), which is what the learning-vs-game comparison reports.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.objective_evaluations = 0
        self._solvers: dict[tuple[int, int], UserSolver] = {}
        self._ap_cache: dict[tuple[int, tuple[int, ...]], ApSolution] = {}
        self._q_cache: dict[tuple[int, ...], TwinEvaluation] = {}

    def problem(self, m: int, members: tuple[int, ...]) -> ApProblem:
        sc = self.scenario
        site = sc.aps[m]
        users = [sc.users[k].ap_user(m, k) for k in members]
        return ApProblem(users, sc.params, S=site.S, Nmax=site.Nmax)

    def solve_ap(self, m: int, members: tuple[int, ...]) -> ApSolution:
        key = (m, members)
        sol = self._ap_cache.get(key)
        if sol is None:
            problem = self.problem(m, members)
            solvers = []
            for k, user in zip(members, problem.users):
                s = self._solvers.get((k, m))
                if s is None:
                    s = make_solver(user, problem.params, problem.n_max)
                    self._solvers[(k, m)] = s
                solvers.append(s)
            sol = solve_ap(problem, solvers)
            self._ap_cache[key] = sol
        return sol

    def evaluate(self, scheme: AssociationScheme) -> TwinEvaluation:
        if len(scheme.assignment) != self.scenario.K or scheme.M != self.scenario.M:
            raise ValueError("association shape does not match the scenario")
        self.objective_evaluations += 1
        hit = self._q_cache.get(scheme.assignment)
        if hit is not None:
            return hit
        sols = [self.solve_ap(m, scheme.users_of(m)) for m in range(self.scenario.M)]
        Q = max((s.eta_star for s in sols), default=0.0)
        ev = TwinEvaluation(Q, sols, scheme)
        self._q_cache[scheme.assignment] = ev
        return ev


def evaluate_association(scenario: Scenario, beta) -> TwinEvaluation:
    scheme = beta if isinstance(beta, AssociationScheme) else AssociationScheme.from_beta(beta)
    return TwinEvaluator(scenario).evaluate(scheme)


def dnn_input_features(scenario: Scenario) -> np.ndarray:
    """10·log10((e^λ − 1)/α + 1) per (user, AP), user-major; λ in packets/slot."""
    lam = np.array([u.lam for u in scenario.users])[:, None]
    alpha = scenario.alpha_matrix()
    return (10.0 * np.log10(np.expm1(lam) / alpha + 1.0)).ravel()


# --------------------------------------------------------------------------- persistence

def _params_to_json(p: SystemParams) -> dict:
    return asdict(p)


def _params_from_json(d: dict) -> SystemParams:
    d = dict(d)
    radio = RadioConfig(**d.pop("radio"))
    qos = UrllcQos(**d.pop("qos"))
    tol = Tolerances(**d.pop("tol"))
    for key in ("dt_rate_pps", "dt_packet_kbit"):
        d[key] = tuple(d[key])
    return SystemParams(radio=radio, qos=qos, tol=tol, **d)


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "schema": SCENARIO_SCHEMA,
        "seed": sc.seed,
        "ratio": list(sc.ratio),
        "params": _params_to_json(sc.params),
        "aps": [{"position": list(a.position), "S": a.S, "Nmax": a.Nmax} for a in sc.aps],
        "users": [
            {
                "service": u.service, "lam": u.lam, "bits": u.bits, "cycles": u.cycles,
                "position": list(u.position), "c_max": u.c_max,
                "gains": [{"alpha": g.alpha, "distance_m": g.distance_m,
                           "shadowing_db": g.shadowing_db} for g in u.gains],
            }
            for u in sc.users
        ],
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema") != SCENARIO_SCHEMA:
        raise ValueError(f"unsupported scenario schema {d.get('schema')!r}")
    aps = tuple(ApSite(tuple(a["position"]), float(a["S"]), int(a["Nmax"])) for a in d["aps"])
    users = []
    for u in d["users"]:
        gains = tuple(LinkGain(g["alpha"], g["distance_m"], g["shadowing_db"]) for g in u["gains"])
        if len(gains) != len(aps):
            raise ValueError("every user needs one gain per AP")
        users.append(UserProfile(u["service"], u["lam"], u["bits"], u["cycles"],
                                 tuple(u["position"]), u["c_max"], gains))
    return Scenario(aps, tuple(users), _params_from_json(d["params"]), d.get("seed"),
                    tuple(d.get("ratio", ())))


def save_scenario(sc: Scenario, path: str | Path) -> None:
    # NaN distances (loaded links) are legal JSON extensions in Python's encoder
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=1))


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
