"""Optimal subcarrier allocation and offloading at one access point.

The AP minimizes the largest energy-per-bit among its users.  An outer
bisection on the energy level ``eta_th`` asks every user for the fewest
subcarriers that keep it under ``eta_th``; the level is feasible when those
subcarriers fit in ``Nmax`` and the induced MEC workload respects the
URLLC deadline (or plain stability when no URLLC traffic is offloaded).

Per-user subproblems:

* URLLC: the offloading probability is set through a small-scale gain
  threshold; the energy-optimal threshold has a closed form, clipped from
  below by the power cap.
* Delay tolerant: energy is convex in the offloading probability, so the
  optimum is the root of its derivative inside the feasible interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from scipy.optimize import brentq

from mectwin import phy
from mectwin.energy import local_energy_per_packet
from mectwin.params import SystemParams
from mectwin.queueing import min_urllc_local_rate, rho_threshold

URLLC = "urllc"
DT = "dt"


@dataclass(frozen=True)
class ApUser:
    """A user as seen by one AP: traffic plus the large-scale gain to that AP."""

    service: str
    lam: float  # packets/slot
    bits: float  # bits/packet (mean for DT)
    cycles: float  # cycles/packet (mean for DT)
    c_max: float  # cycles/slot
    alpha: float
    uid: int = -1

    def __post_init__(self):
        if self.service not in (URLLC, DT):
            raise ValueError(f"unknown service class {self.service!r}")
        if not (self.lam > 0 and self.bits > 0 and self.cycles > 0 and self.alpha > 0):
            raise ValueError("lam, bits, cycles and alpha must be > 0")


@dataclass(frozen=True)
class ApProblem:
    users: Sequence[ApUser]
    params: SystemParams
    S: float | None = None
    Nmax: int | None = None

    @property
    def server_rate(self) -> float:
        return self.params.S if self.S is None else self.S

    @property
    def n_max(self) -> int:
        return self.params.radio.Nmax if self.Nmax is None else self.Nmax

    @property
    def urllc_users(self) -> list[ApUser]:
        return [u for u in self.users if u.service == URLLC]

    @property
    def dt_users(self) -> list[ApUser]:
        return [u for u in self.users if u.service == DT]


@dataclass(frozen=True)
class UserPoint:
    """Per-user optimum at a fixed subcarrier count."""

    N: float
    x: float
    P: float
    eta: float
    ok: bool = True
    g_th: float = math.nan


INFEASIBLE = UserPoint(math.nan, math.nan, math.nan, math.inf, ok=False)


@dataclass
class ApSolution:
    N: list[float] = field(default_factory=list)
    x: list[float] = field(default_factory=list)
    P: list[float] = field(default_factory=list)
    eta: list[float] = field(default_factory=list)
    uids: list[int] = field(default_factory=list)
    services: list[str] = field(default_factory=list)
    eta_star: float = 0.0
    feasible: bool = True
    rho: float = 0.0
    rho_limit: float = 1.0
    evaluations: int = 0
    iterations: int = 0

    def validate(self, problem: ApProblem, sigma_N: float | None = None) -> list[str]:
        """Re-check every constraint from scratch; returns a list of violations."""
        if not self.feasible:
            return []
        sigma_N = problem.params.tol.sigma_N if sigma_N is None else sigma_N
        radio = problem.params.radio
        errors = []
        if sum(self.N) > problem.n_max + sigma_N:
            errors.append(f"sum N = {sum(self.N)} exceeds {problem.n_max}")
        for k, (x, p) in enumerate(zip(self.x, self.P)):
            if not -1e-15 <= x <= 1 + 1e-15:
                errors.append(f"user {k}: x = {x} outside [0, 1]")
            if p > radio.Pmax * (1 + 1e-9):
                errors.append(f"user {k}: P = {p} above Pmax")
        rho, limit = workload(problem, self.x)
        if limit is None or rho > limit * (1 + 1e-12):
            errors.append(f"workload {rho} above limit {limit}")
        if self.eta and abs(max(self.eta) - self.eta_star) > 0:
            errors.append("eta_star is not the attained maximum")
        return errors


# --------------------------------------------------------------------------- single users

def urllc_offload_opt(N_th: float, user: ApUser, params: SystemParams,
                      E_loc_star: float | None) -> tuple[float, float, float]:
    """Energy-optimal gain threshold at ``N_th`` subcarriers.

    Returns ``(g_hat, x_hat, P)``.  With no admissible local CPU rate
    (``E_loc_star is None``) the threshold sits at the power-cap minimum so
    that as many packets as possible are offloaded.
    """
    radio = params.radio
    rho = phy.urllc_power_coefficient(N_th, user.alpha, radio, user.bits, params.qos.eps_max / 2)
    if rho == 0.0:
        return 0.0, 1.0, 0.0
    g_min = rho / radio.Pmax
    if E_loc_star is not None and E_loc_star > 0:
        a = rho * radio.Ts / E_loc_star
        g_tilde = 0.5 * (a + math.sqrt(a * a + 4.0 * a)) if a < 1e150 else math.inf
        g_hat = max(g_min, g_tilde)
    else:
        g_hat = g_min
    x_hat = math.exp(-g_hat) if g_hat < 745.0 else 0.0
    P = rho / g_hat if x_hat > 0.0 else 0.0
    return g_hat, x_hat, P


def dt_offload_bounds(N_th: float, user: ApUser, params: SystemParams) -> tuple[float, float]:
    """Offloading interval allowed by the local CPU cap and by the link at full power."""
    radio = params.radio
    x_lb = max(0.0, 1.0 - user.c_max / (user.lam * user.cycles))
    if N_th <= 0.0:
        return x_lb, 0.0
    cap = phy.ergodic_capacity(N_th, radio.Pmax, user.alpha, radio)
    x_ub = min(1.0, cap * radio.Ts / (user.bits * user.lam))
    return x_lb, x_ub


def dt_offload_opt(N_th: float, user: ApUser, params: SystemParams) -> tuple[float, float] | None:
    """Energy-optimal offloading probability and its power, or ``None`` if infeasible.

    Works in the SNR coordinate s (power = s·N·W·N0/α), where the offloaded
    fraction is x = E[ln(1+s g)]/r.  Energy is convex in x and x increases
    with s, so the optimum is the sign change of dη/dx, bracketed in s.
    """
    radio = params.radio
    x_lb, x_ub = dt_offload_bounds(N_th, user, params)
    if x_lb > x_ub:
        return None
    if x_ub <= 0.0:
        return 0.0, 0.0
    nw = N_th * radio.W
    r = user.lam * user.bits * phy.LN2 / (radio.Ts * nw)
    A = params.k0 * user.lam ** 2 * user.cycles ** 3 / user.bits
    BN = nw * radio.N0 * radio.Ts / (user.alpha * user.lam * user.bits)
    s_max = user.alpha * radio.Pmax / (nw * radio.N0)

    s_lb = 0.0 if x_lb == 0.0 else phy.inverse_mean_log_gain(x_lb * r)
    s_ub = s_max if x_ub < 1.0 else phy.inverse_mean_log_gain(r)
    s_ub = min(s_ub, s_max)
    s_lb = min(s_lb, s_ub)

    def slope(s: float) -> float:
        f = phy.mean_log_gain(s) / r
        return -3.0 * A * (1.0 - f) ** 2 + BN * r / phy.mean_log_gain_slope(s)

    if slope(s_lb) >= 0.0:
        s_hat, x_hat = s_lb, x_lb
    elif slope(s_ub) <= 0.0:
        s_hat, x_hat = s_ub, x_ub
    else:
        s_hat = brentq(slope, s_lb, s_ub, xtol=1e-300, rtol=1e-14, maxiter=200)
        x_hat = min(max(phy.mean_log_gain(s_hat) / r, x_lb), x_ub)
    P = s_hat * nw * radio.N0 / user.alpha
    return x_hat, min(P, radio.Pmax)


# --------------------------------------------------------------------------- solvers with memo

class UserSolver:
    """Per-user oracle ``N -> optimum`` with memoization and evaluation counting."""

    def __init__(self, user: ApUser, params: SystemParams, n_max: int):
        self.user = user
        self.params = params
        self.n_max = n_max
        self.evaluations = 0
        self._memo: dict[float, UserPoint] = {}

    # subclasses fill these in
    local_eta: float | None = None
    n_upper: float = 0.0
    eta_cap: float = math.inf

    def _compute(self, N: float) -> UserPoint:  # pragma: no cover - abstract
        raise NotImplementedError

    def best_at(self, N: float) -> UserPoint:
        self.evaluations += 1
        hit = self._memo.get(N)
        if hit is None:
            hit = self._compute(N)
            self._memo[N] = hit
        return hit

    def local_point(self) -> UserPoint:
        if self.local_eta is None:
            return INFEASIBLE
        return UserPoint(0.0, 0.0, 0.0, self.local_eta, ok=True, g_th=math.inf)

    def min_subcarriers(self, eta_th: float) -> UserPoint | None:
        """Fewest subcarriers whose per-user optimum stays at or below ``eta_th``."""
        if self.local_eta is not None and self.local_eta <= eta_th:
            return self.local_point()
        ub = self.n_upper
        best = self.best_at(ub)
        if not best.ok or best.eta > eta_th:
            return None
        lb = 0.0
        sigma = self.params.tol.sigma_N
        while ub - lb > sigma:
            mid = 0.5 * (lb + ub)
            p = self.best_at(mid)
            if p.ok and p.x > 0.0 and p.eta <= eta_th:
                ub, best = mid, p
            else:
                lb = mid
        return best


class UrllcSolver(UserSolver):
    def __init__(self, user: ApUser, params: SystemParams, n_max: int):
        super().__init__(user, params, n_max)
        c_star = min_urllc_local_rate(user.lam, user.cycles, params.qos, user.c_max)
        self.c_star = c_star
        self.E_loc_star = None if c_star is None else local_energy_per_packet(params.k0, c_star, user.cycles)
        # energy per packet actually burnt locally when no admissible rate exists
        self.E_local_used = (self.E_loc_star if self.E_loc_star is not None
                             else local_energy_per_packet(params.k0, user.c_max, user.cycles))
        self.local_eta = None if self.E_loc_star is None else self.E_loc_star / user.bits
        radio = params.radio
        n_tilde = phy.urllc_stationary_subcarriers(radio, user.bits, params.qos.eps_max / 2)
        self.n_upper = min(n_tilde, float(n_max))
        self.eta_cap = max(local_energy_per_packet(params.k0, user.c_max, user.cycles),
                           radio.Pmax * radio.Ts) / user.bits

    def _compute(self, N: float) -> UserPoint:
        if N <= 0.0:
            return self.local_point()
        g_hat, x, P = urllc_offload_opt(N, self.user, self.params, self.E_loc_star)
        if x == 0.0 and self.local_eta is None:
            return INFEASIBLE
        b = self.user.bits
        eta = (1.0 - x) * self.E_local_used / b + x * P * self.params.radio.Ts / b
        return UserPoint(N, x, P, eta, ok=True, g_th=g_hat)


class DtSolver(UserSolver):
    def __init__(self, user: ApUser, params: SystemParams, n_max: int):
        super().__init__(user, params, n_max)
        u = user
        self.A = params.k0 * u.lam ** 2 * u.cycles ** 3 / u.bits
        self.local_eta = self.A if u.lam * u.cycles <= u.c_max else None
        self.n_upper = float(n_max)
        radio = params.radio
        self.eta_cap = (local_energy_per_packet(params.k0, u.c_max, u.cycles) / u.bits
                        + radio.Pmax * radio.Ts / (u.lam * u.bits))

    def _compute(self, N: float) -> UserPoint:
        if N <= 0.0:
            return self.local_point()
        res = dt_offload_opt(N, self.user, self.params)
        if res is None:
            return INFEASIBLE
        x, P = res
        u = self.user
        eta = self.A * (1.0 - x) ** 3
        if x > 0.0:
            eta += P * self.params.radio.Ts / (u.lam * u.bits)
        return UserPoint(N, x, P, eta, ok=True)


def make_solver(user: ApUser, params: SystemParams, n_max: int) -> UserSolver:
    cls = UrllcSolver if user.service == URLLC else DtSolver
    return cls(user, params, n_max)


# --------------------------------------------------------------------------- AP level

def workload(problem: ApProblem, xs: Iterable[float]) -> tuple[float, float | None]:
    """MEC workload and its admissible limit for offloading probabilities ``xs``.

    The limit is 1 when no URLLC packet is offloaded; otherwise the tightest
    deadline-driven threshold over the offloading URLLC users (``None`` if
    some of them can never meet the deadline at this server).
    """
    S = problem.server_rate
    qos = problem.params.qos
    total = 0.0
    limit: float | None = 1.0
    urllc_offloading = False
    for u, x in zip(problem.users, xs):
        total += x * u.lam * u.cycles
        if u.service == URLLC and x > 0.0:
            th = rho_threshold(qos.eps_max, u.cycles, S, qos.Dmax_slots)
            if th is None:
                limit = None
            elif limit is not None:
                limit = th if not urllc_offloading else min(limit, th)
            urllc_offloading = True
    return total / S, limit


def _check(problem: ApProblem, points: Sequence[UserPoint]) -> tuple[bool, float, float | None]:
    n_total = sum(p.N for p in points)
    rho, limit = workload(problem, [p.x for p in points])
    ok = n_total <= problem.n_max and limit is not None and rho <= limit
    return ok, rho, limit


def _allocate(solvers: Sequence[UserSolver], eta_th: float) -> list[UserPoint] | None:
    points = []
    for s in solvers:
        p = s.min_subcarriers(eta_th)
        if p is None:
            return None
        points.append(p)
    return points


def solve_ap(problem: ApProblem, solvers: Sequence[UserSolver] | None = None) -> ApSolution:
    """Min-max energy per bit at one AP.

    ``solvers`` may carry memoized per-user oracles shared across calls on the
    same scenario; by default fresh ones are built.
    """
    users = list(problem.users)
    if not users:
        return ApSolution(feasible=True, eta_star=0.0)
    params = problem.params
    if solvers is None:
        solvers = [make_solver(u, params, problem.n_max) for u in users]
    start_counts = [s.evaluations for s in solvers]
    tol = params.tol

    lb, ub = 0.0, max(s.eta_cap for s in solvers)
    best: list[UserPoint] | None = None
    best_rho, best_limit = 0.0, 1.0
    iterations = 0
    while ub - lb > min(tol.sigma_eta, tol.rtol_eta * ub):
        iterations += 1
        th = 0.5 * (lb + ub)
        points = _allocate(solvers, th)
        if points is not None:
            ok, rho, limit = _check(problem, points)
            if ok:
                ub, best, best_rho, best_limit = th, points, rho, limit
                continue
        lb = th
    if best is None:
        points = _allocate(solvers, ub)
        if points is not None:
            ok, rho, limit = _check(problem, points)
            if ok:
                best, best_rho, best_limit = points, rho, limit

    evaluations = sum(s.evaluations - c for s, c in zip(solvers, start_counts))
    sol = ApSolution(uids=[u.uid for u in users], services=[u.service for u in users],
                     evaluations=evaluations, iterations=iterations)
    if best is None:
        sol.feasible = False
        sol.eta_star = math.inf
        return sol
    sol.N = [p.N for p in best]
    sol.x = [p.x for p in best]
    sol.P = [p.P for p in best]
    sol.eta = [p.eta for p in best]
    sol.eta_star = max(sol.eta)
    sol.rho = best_rho
    sol.rho_limit = best_limit if best_limit is not None else math.nan
    return sol
