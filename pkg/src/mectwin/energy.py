"""Energy per packet and normalized energy (J/bit) of both service classes."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class LocalCompute:
    k0: float = 1e-15
    C: float = 0.0
    C_max: float = 5000.0

    def __post_init__(self):
        if not self.k0 > 0:
            raise ValueError("k0 must be > 0")
        if not 0.0 <= self.C <= self.C_max:
            raise ValueError("need 0 <= C <= C_max")


def local_energy_per_packet(k0: float, C: float, c: float) -> float:
    """Energy (J) to process one packet of ``c`` cycles at ``C`` cycles/slot."""
    return k0 * C * C * c


def eta_urllc(x: float, E_loc: float, P: float, Ts: float, b_u: float) -> float:
    return (1.0 - x) * E_loc / b_u + x * P * Ts / b_u


def eta_dt_local(x: float, lam: float, c_bar: float, b_bar: float, k0: float) -> float:
    """Local part of the DT energy per bit with the CPU pinned to (1-x)·λ·c̄."""
    return k0 * lam * lam * c_bar ** 3 * (1.0 - x) ** 3 / b_bar


def eta_dt(x: float, lam: float, c_bar: float, b_bar: float, P: float, Ts: float,
           k0: float) -> float:
    """Normalized energy of a delay-tolerant user offloading a fraction ``x``.

    ``P`` must be the transmit power that sustains the offloaded rate; it is
    ignored at ``x = 0``.
    """
    local = eta_dt_local(x, lam, c_bar, b_bar, k0)
    if x == 0.0:
        return local
    return local + P * Ts / (lam * b_bar)
