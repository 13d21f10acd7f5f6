"""Delay laws for local Geo/D/1 servers and the shared processor-sharing MEC server."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from mectwin.params import UrllcQos


@dataclass(frozen=True)
class MecLoad:
    """Offered load at one MEC server.

    ``urllc_terms`` and ``dt_terms`` hold ``(x, lam, cycles)`` triples with
    ``lam`` in packets/slot and ``cycles`` per packet.
    """

    S: float
    urllc_terms: Sequence[tuple[float, float, float]] = field(default_factory=tuple)
    dt_terms: Sequence[tuple[float, float, float]] = field(default_factory=tuple)


def geo_d1_delay_ccdf(lambda_eff: float, D_lc: int, i: int) -> float:
    """Pr{queueing delay > i slots} in a Geo/D/1/FCFS queue with service time ``D_lc``.

    Evaluated in exact rational arithmetic on the float inputs; the
    alternating binomial sum cancels badly in floating point near 1e-9.
    """
    if D_lc < 1 or int(D_lc) != D_lc:
        raise ValueError("D_lc must be an integer >= 1")
    if i < 0:
        raise ValueError("i must be >= 0")
    if not 0.0 <= lambda_eff * D_lc < 1.0 or lambda_eff > 1.0:
        raise ValueError(f"unstable Geo/D/1 queue: lambda*D = {lambda_eff * D_lc!r}")
    if lambda_eff == 0.0:
        return 0.0
    lam = Fraction(lambda_eff)
    D = int(D_lc)
    i = int(i)
    j = i // D
    base = lam * (1 - lam) ** (D - 1)
    total = sum(base ** l * (-1) ** l * math.comb(i + l - l * D, l) for l in range(j + 1))
    value = 1 - (1 - lam * D) / (1 - lam) ** (i + 1) * total
    return min(1.0, max(0.0, float(value)))


@dataclass
class EmpiricalCcdf:
    """Empirical waiting-time CCDF with batch-means standard errors."""

    ccdf: np.ndarray
    stderr: np.ndarray
    n_packets: int


def simulate_geo_d1(lambda_eff: float, D_lc: int, n_slots: int, rng: np.random.Generator,
                    max_delay: int | None = None, n_batches: int = 50) -> EmpiricalCcdf:
    """Slot-level FCFS simulation with Bernoulli arrivals and fixed ``D_lc``-slot service.

    Waiting times follow the Lindley recursion W' = max(0, W + D - A), solved
    in closed form through the running minimum of the partial sums.
    """
    if not 0.0 <= lambda_eff * D_lc < 1.0:
        raise ValueError("unstable Geo/D/1 queue")
    max_delay = 4 * D_lc if max_delay is None else max_delay
    if lambda_eff == 0.0:
        z = np.zeros(max_delay + 1)
        return EmpiricalCcdf(z, z.copy(), 0)
    arrivals = np.flatnonzero(rng.random(n_slots) < lambda_eff)
    n = arrivals.size
    if n < 2:
        z = np.zeros(max_delay + 1)
        return EmpiricalCcdf(z, z.copy(), n)
    gaps = np.diff(arrivals)
    walk = np.concatenate(([0], np.cumsum(D_lc - gaps)))
    waits = walk - np.minimum(np.minimum.accumulate(walk), 0)
    levels = np.arange(max_delay + 1)
    n_batches = max(2, min(n_batches, n // 10 or 2))
    usable = (n // n_batches) * n_batches
    batches = waits[:usable].reshape(n_batches, -1)
    ccdf = np.empty(levels.size)
    stderr = np.empty(levels.size)
    for k, level in enumerate(levels):
        ccdf[k] = np.count_nonzero(waits > level) / n
        per_batch = (batches > level).mean(axis=1)
        stderr[k] = per_batch.std(ddof=1) / math.sqrt(n_batches)
    return EmpiricalCcdf(ccdf, stderr, n)


def min_urllc_local_rate(lam: float, c_u: float, qos: UrllcQos, C_max: float) -> float | None:
    """Smallest local CPU rate C* = c_u / D_lc meeting the local deadline and loss cap.

    Scans integer processing times from ``Dmax - 1`` down to 1 slot.  Returns
    ``None`` when no admissible processing time exists under ``C_max``.
    """
    if c_u <= 0:
        raise ValueError("c_u must be > 0")
    for d_lc in range(qos.Dmax_slots - 1, 0, -1):
        rate = c_u / d_lc
        if rate > C_max:
            break
        if lam * d_lc >= 1.0:
            continue
        if geo_d1_delay_ccdf(lam, d_lc, qos.Dmax_slots - d_lc) <= qos.eps_max:
            return rate
    return None


def mec_workload(load: MecLoad) -> float:
    total = sum(x * lam * c for x, lam, c in load.urllc_terms)
    total += sum(x * lam * c for x, lam, c in load.dt_terms)
    return total / load.S


def rho_threshold(eps_max: float, c_u: float, S: float, Dmax_slots: int) -> float | None:
    """Largest PS workload keeping the MEC deadline-violation probability at eps_max/2.

    ``None`` signals that the server can never finish a packet before the deadline.
    """
    room = S * (Dmax_slots - 1) - c_u
    if room <= 0:
        return None
    return (eps_max / 2.0) ** (c_u / room)


def ps_delay_violation(rho: float, S: float, c_u: float, D_mc_slots: float) -> float:
    """Approximate Pr{processing delay > D_mc} of a short packet in the PS server."""
    exponent = S * D_mc_slots / c_u - 1.0
    if rho >= 1.0:
        return 1.0
    if rho <= 0.0:
        return 0.0 if exponent > 0 else 1.0
    return rho ** exponent
