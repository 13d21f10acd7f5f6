"""Reference policies used in every comparison.

Association baselines return an :class:`AssociationScheme` (and, when they
search, its objective value).  The two offloading baselines act on a single
AP problem and return an :class:`ApSolution` whose ``feasible`` flag reports
whether the forced policy respects the QoS constraints; energy is reported
either way so the comparison curves can be drawn.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from mectwin.ap_optimizer import (INFEASIBLE, URLLC, ApProblem, ApSolution, DtSolver, UrllcSolver,
                                  UserPoint, solve_ap, workload)
from mectwin import phy
from mectwin.energy import local_energy_per_packet
from mectwin.twin import AssociationScheme, Scenario, TwinEvaluator


def nearest_ap(scenario: Scenario) -> AssociationScheme:
    # argmin returns the first minimum, i.e. the lowest AP index on ties
    d = scenario.distance_matrix()
    return AssociationScheme(tuple(int(i) for i in d.argmin(axis=1)), scenario.M)


def highest_alpha(scenario: Scenario) -> AssociationScheme:
    a = scenario.alpha_matrix()
    return AssociationScheme(tuple(int(i) for i in a.argmax(axis=1)), scenario.M)


class SearchTooLarge(ValueError):
    pass


def exhaustive_optimal(scenario: Scenario, cap: int = 4096,
                       evaluator: TwinEvaluator | None = None) -> tuple[AssociationScheme, float]:
    """Global minimum of the twin objective by enumeration (refuses beyond ``cap`` schemes)."""
    M, K = scenario.M, scenario.K
    if M ** K > cap:
        raise SearchTooLarge(f"{M}^{K} schemes exceed the cap of {cap}")
    ev = evaluator or TwinEvaluator(scenario)
    best, best_q = None, math.inf
    for assignment in itertools.product(range(M), repeat=K):
        scheme = AssociationScheme(assignment, M)
        q = ev.evaluate(scheme).Q
        if best is None or q < best_q:
            best, best_q = scheme, q
    return best, best_q


@dataclass
class GameResult:
    scheme: AssociationScheme
    Q: float
    evaluations: int
    iterations: int
    trace: list[float] = field(default_factory=list)


def coalition_game(scenario: Scenario, rng: np.random.Generator, max_iters: int = 100,
                   patience: int = 20, start: AssociationScheme | None = None,
                   evaluator: TwinEvaluator | None = None) -> GameResult:
    """Coalition-formation heuristic with one coalition per AP.

    Each iteration picks a random user and scores two moves: joining a random
    other coalition, and exchanging places with a random member of another
    coalition (when one exists).  The better move is kept only if it strictly
    lowers the objective.  Stops after ``patience`` iterations without
    improvement or ``max_iters`` iterations.  The start defaults to the
    highest-gain association.
    """
    M, K = scenario.M, scenario.K
    ev = evaluator or TwinEvaluator(scenario)
    count0 = ev.objective_evaluations
    current = start or highest_alpha(scenario)
    q = ev.evaluate(current).Q
    trace = [q]
    stale = 0
    it = 0
    if M == 1:
        return GameResult(current, q, ev.objective_evaluations - count0, 0, trace)
    while it < max_iters and stale < patience:
        it += 1
        k = int(rng.integers(K))
        a = list(current.assignment)
        others = [m for m in range(M) if m != a[k]]
        target = others[int(rng.integers(len(others)))]
        moved = list(a)
        moved[k] = target
        candidates = [AssociationScheme(tuple(moved), M)]
        partners = [j for j in range(K) if a[j] != a[k]]
        if partners:
            j = partners[int(rng.integers(len(partners)))]
            swapped = list(a)
            swapped[k], swapped[j] = a[j], a[k]
            candidates.append(AssociationScheme(tuple(swapped), M))
        scored = [(ev.evaluate(c).Q, i, c) for i, c in enumerate(candidates)]
        q_new, _, best = min(scored, key=lambda t: (t[0], t[1]))
        if q_new < q:
            current, q, stale = best, q_new, 0
        else:
            stale += 1
        trace.append(q)
    return GameResult(current, q, ev.objective_evaluations - count0, it, trace)


# --------------------------------------------------------------------------- offloading baselines

def all_local_policy(problem: ApProblem) -> ApSolution:
    """Every packet processed locally; flagged infeasible if a CPU cap or deadline is broken.

    A user whose load exceeds its cap is charged the energy of the rate it
    would need, which is what the ``Local`` comparison curve reports.
    """
    p = problem.params
    sol = ApSolution(uids=[u.uid for u in problem.users], services=[u.service for u in problem.users])
    for u in problem.users:
        if u.service == URLLC:
            s = UrllcSolver(u, p, problem.n_max)
            if s.E_loc_star is None:
                sol.feasible = False
                E = local_energy_per_packet(p.k0, u.c_max, u.cycles)
            else:
                E = s.E_loc_star
            eta = E / u.bits
        else:
            if u.lam * u.cycles > u.c_max:
                sol.feasible = False
            eta = p.k0 * u.lam ** 2 * u.cycles ** 3 / u.bits
        sol.N.append(0.0)
        sol.x.append(0.0)
        sol.P.append(0.0)
        sol.eta.append(eta)
    sol.eta_star = max(sol.eta, default=0.0)
    return sol


class _UrllcAtCap(UrllcSolver):
    """URLLC user pinned to the power-cap threshold g_min (always transmits at Pmax)."""

    def __init__(self, user, params, n_max):
        super().__init__(user, params, n_max)
        self.local_eta = None

    def _compute(self, N: float) -> UserPoint:
        if N <= 0.0:
            return INFEASIBLE
        radio = self.params.radio
        rho = phy.urllc_power_coefficient(N, self.user.alpha, radio, self.user.bits,
                                          self.params.qos.eps_max / 2)
        g = rho / radio.Pmax
        x = math.exp(-g) if g < 745.0 else 0.0
        if x == 0.0:
            return INFEASIBLE
        b = self.user.bits
        eta = (1.0 - x) * self.E_local_used / b + x * radio.Pmax * radio.Ts / b
        return UserPoint(N, x, radio.Pmax, eta, ok=True, g_th=g)


class _DtFullOffload(DtSolver):
    """DT user pinned to x = 1."""

    def __init__(self, user, params, n_max):
        super().__init__(user, params, n_max)
        self.local_eta = None

    def _compute(self, N: float) -> UserPoint:
        if N <= 0.0:
            return INFEASIBLE
        u = self.user
        radio = self.params.radio
        P = phy.required_power_dt(u.lam * u.bits / radio.Ts, N, u.alpha, radio)
        if not math.isfinite(P):
            return INFEASIBLE
        return UserPoint(N, 1.0, P, P * radio.Ts / (u.lam * u.bits), ok=True)


def all_mec_policy(problem: ApProblem, reference: ApSolution | None = None,
                   bandwidth: str = "reference") -> ApSolution:
    """Every packet sent to the MEC server.

    With ``bandwidth="reference"`` each user keeps the subcarriers of the
    optimal allocation (users the optimum keeps local split whatever is left)
    and offloads everything: DT users at whatever power that takes (powers
    above ``Pmax`` are reported and flag the solution infeasible).  URLLC
    users transmit at ``Pmax`` whenever the gain clears the power-cap
    threshold ``g_min``; below it no admissible power exists and those
    packets fall back to the local CPU.

    ``bandwidth="reoptimized"`` instead reruns the min-max subcarrier search
    with the same pinned offloading decisions.
    """
    p = problem.params
    if bandwidth == "reoptimized":
        solvers = [(_UrllcAtCap if u.service == URLLC else _DtFullOffload)(u, p, problem.n_max)
                   for u in problem.users]
        return solve_ap(problem, solvers)
    if bandwidth != "reference":
        raise ValueError(f"unknown bandwidth mode {bandwidth!r}")

    radio = p.radio
    ref = reference if reference is not None else solve_ap(problem)
    sol = ApSolution(uids=[u.uid for u in problem.users], services=[u.service for u in problem.users])
    if not ref.feasible:
        sol.feasible = False
        sol.eta_star = math.inf
        return sol
    idle = [k for k, N in enumerate(ref.N) if N <= 0.0]
    spare = max(problem.n_max - sum(ref.N), 0.0)
    share = spare / len(idle) if idle else 0.0
    for u, N in zip(problem.users, ref.N):
        N = N if N > 0.0 else share
        if u.service == URLLC:
            pt = _UrllcAtCap(u, p, problem.n_max).best_at(N) if N > 0.0 else INFEASIBLE
            if not pt.ok:
                sol.feasible = False
                sol.N.append(N)
                sol.x.append(0.0)
                sol.P.append(math.inf)
                sol.eta.append(math.inf)
                continue
            sol.N.append(N)
            sol.x.append(pt.x)
            sol.P.append(pt.P)
            sol.eta.append(pt.eta)
            continue
        else:
            P = phy.required_power_dt(u.lam * u.bits / radio.Ts, N, u.alpha, radio, p_cap=math.inf)
            eta = P * radio.Ts / (u.lam * u.bits)
        if not P <= radio.Pmax:
            sol.feasible = False
        sol.N.append(N)
        sol.x.append(1.0)
        sol.P.append(P)
        sol.eta.append(eta)
    rho_mec, limit = workload(problem, sol.x)
    sol.rho = rho_mec
    sol.rho_limit = limit if limit is not None else math.nan
    if limit is None or rho_mec > limit:
        sol.feasible = False
    sol.eta_star = max(sol.eta, default=0.0)
    return sol
