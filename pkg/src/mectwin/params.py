"""System parameters and unit handling.

Everything inside the package runs in SI units with time measured in slots
where the queueing math needs it: arrival rates are packets/slot, CPU rates
are cycles/slot, powers are watts, bandwidths Hz.  Human-facing config files
carry the unit in the key name (``slot_ms``, ``subcarrier_khz``...) and are
converted here exactly once.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration values."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt / 1e-3)


@dataclass(frozen=True)
class RadioConfig:
    """Per-AP radio resources.

    Attributes:
        W: bandwidth of one subcarrier (Hz).
        N0: single-sided noise spectral density (W/Hz).
        Ts: slot duration (s).
        Phi: SNR loss coefficient of the practical code.
        Nmax: subcarriers available at each AP.
        Pmax: maximal transmit power of a user (W).
    """

    W: float = 120e3
    N0: float = dbm_to_watt(-174.0)
    Ts: float = 0.125e-3
    Phi: float = 1.0
    Nmax: int = 128
    Pmax: float = dbm_to_watt(23.0)

    def __post_init__(self):
        for name in ("W", "N0", "Ts", "Phi", "Pmax"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if int(self.Nmax) != self.Nmax or self.Nmax < 1:
            raise ConfigError(f"Nmax must be an integer >= 1, got {self.Nmax!r}")


@dataclass(frozen=True)
class UrllcQos:
    """End-to-end deadline (slots) and loss-probability cap of URLLC traffic."""

    Dmax_slots: int = 8
    eps_max: float = 1e-7

    def __post_init__(self):
        if int(self.Dmax_slots) != self.Dmax_slots or self.Dmax_slots < 2:
            raise ConfigError("Dmax_slots must be an integer >= 2")
        if not 0.0 < self.eps_max < 1.0:
            raise ConfigError("eps_max must lie in (0, 1)")


@dataclass(frozen=True)
class Tolerances:
    """Search precisions of the per-AP algorithm.

    ``rtol_eta`` tightens the absolute ``sigma_eta`` whenever the optimum is so
    small that 1e-10 J/bit would be a coarse relative precision.
    """

    sigma_eta: float = 1e-10
    rtol_eta: float = 1e-6
    sigma_N: float = 1e-3
    sigma_x: float = 1e-6

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"tolerance {f.name} must be > 0")


@dataclass(frozen=True)
class SystemParams:
    """Everything the twin needs besides the random draw itself."""

    radio: RadioConfig = field(default_factory=RadioConfig)
    qos: UrllcQos = field(default_factory=UrllcQos)
    tol: Tolerances = field(default_factory=Tolerances)
    S: float = 1.6e9 * 0.125e-3  # cycles/slot
    k0: float = 1e-15
    k1: float = 330.0  # cycles/byte
    urllc_bytes: float = 32.0
    urllc_rate_pps: float = 500.0
    dt_rate_pps: tuple[float, float] = (5.0, 10.0)
    dt_packet_kbit: tuple[float, float] = (50.0, 100.0)
    c_max_dt: float = 5000.0
    c_max_urllc: float = 10000.0

    def __post_init__(self):
        if not self.S > 0:
            raise ConfigError("MEC service rate S must be > 0")
        if not self.k0 > 0 or not self.k1 > 0:
            raise ConfigError("k0 and k1 must be > 0")
        lo, hi = self.dt_rate_pps
        if not 0 < lo <= hi:
            raise ConfigError("dt_rate_pps must satisfy 0 < lo <= hi")
        lo, hi = self.dt_packet_kbit
        if not 0 < lo <= hi:
            raise ConfigError("dt_packet_kbit must satisfy 0 < lo <= hi")

    @property
    def urllc_bits(self) -> float:
        return 8.0 * self.urllc_bytes

    @property
    def urllc_cycles(self) -> float:
        return self.k1 * self.urllc_bytes

    def per_slot(self, rate_per_second: float) -> float:
        return rate_per_second * self.radio.Ts

    def with_overrides(self, **changes) -> "SystemParams":
        return replace(self, **changes)


# Config-file keys → (section attribute, converter).  Units live in the key.
_RADIO_KEYS = {
    "subcarrier_khz": ("W", lambda v: float(v) * 1e3),
    "noise_dbm_per_hz": ("N0", lambda v: dbm_to_watt(float(v))),
    "slot_ms": ("Ts", lambda v: float(v) * 1e-3),
    "snr_loss": ("Phi", float),
    "n_subcarriers": ("Nmax", int),
    "p_max_dbm": ("Pmax", lambda v: dbm_to_watt(float(v))),
}


def params_from_dict(raw: Mapping[str, Any] | None) -> SystemParams:
    """Build :class:`SystemParams` from a unit-suffixed mapping.

    Unknown keys raise :class:`ConfigError` so typos do not silently fall back
    to defaults.
    """
    raw = dict(raw or {})
    radio_raw = dict(raw.pop("radio", {}) or {})
    radio_kw = {}
    for key, value in radio_raw.items():
        if key not in _RADIO_KEYS:
            raise ConfigError(f"unknown radio key {key!r}")
        name, conv = _RADIO_KEYS[key]
        radio_kw[name] = conv(value)
    radio = RadioConfig(**radio_kw)

    qos_raw = dict(raw.pop("urllc_qos", {}) or {})
    delay_ms = float(qos_raw.pop("delay_ms", 1.0))
    eps_max = float(qos_raw.pop("eps_max", 1e-7))
    if qos_raw:
        raise ConfigError(f"unknown urllc_qos keys {sorted(qos_raw)}")
    dmax = delay_ms * 1e-3 / radio.Ts
    if abs(dmax - round(dmax)) > 1e-9:
        raise ConfigError("delay_ms must be an integer number of slots")
    qos = UrllcQos(Dmax_slots=int(round(dmax)), eps_max=eps_max)

    tol_raw = dict(raw.pop("tolerances", {}) or {})
    try:
        tol = Tolerances(**{k: float(v) for k, v in tol_raw.items()})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    comp = dict(raw.pop("compute", {}) or {})
    traffic = dict(raw.pop("traffic", {}) or {})
    if raw:
        raise ConfigError(f"unknown top-level keys {sorted(raw)}")
    kw: dict[str, Any] = {}
    conv_comp = {
        "mec_ghz": ("S", lambda v: float(v) * 1e9 * radio.Ts),
        "k0": ("k0", float),
        "k1_cycles_per_byte": ("k1", float),
        "c_max_dt_cycles_per_slot": ("c_max_dt", float),
        "c_max_urllc_cycles_per_slot": ("c_max_urllc", float),
    }
    conv_traffic = {
        "urllc_bytes": ("urllc_bytes", float),
        "urllc_rate_pps": ("urllc_rate_pps", float),
        "dt_rate_pps": ("dt_rate_pps", lambda v: tuple(float(x) for x in v)),
        "dt_packet_kbit": ("dt_packet_kbit", lambda v: tuple(float(x) for x in v)),
    }
    for src, table in ((comp, conv_comp), (traffic, conv_traffic)):
        for key, value in src.items():
            if key not in table:
                raise ConfigError(f"unknown key {key!r}")
            name, conv = table[key]
            kw[name] = conv(value)
    return SystemParams(radio=radio, qos=qos, tol=tol, **kw)


def params_to_dict(p: SystemParams) -> dict[str, Any]:
    """Inverse of :func:`params_from_dict` (round-trips up to float rounding)."""
    r = p.radio
    return {
        "radio": {
            "subcarrier_khz": r.W / 1e3,
            "noise_dbm_per_hz": watt_to_dbm(r.N0),
            "slot_ms": r.Ts * 1e3,
            "snr_loss": r.Phi,
            "n_subcarriers": r.Nmax,
            "p_max_dbm": watt_to_dbm(r.Pmax),
        },
        "urllc_qos": {"delay_ms": p.qos.Dmax_slots * r.Ts * 1e3, "eps_max": p.qos.eps_max},
        "tolerances": asdict(p.tol),
        "compute": {
            "mec_ghz": p.S / r.Ts / 1e9,
            "k0": p.k0,
            "k1_cycles_per_byte": p.k1,
            "c_max_dt_cycles_per_slot": p.c_max_dt,
            "c_max_urllc_cycles_per_slot": p.c_max_urllc,
        },
        "traffic": {
            "urllc_bytes": p.urllc_bytes,
            "urllc_rate_pps": p.urllc_rate_pps,
            "dt_rate_pps": list(p.dt_rate_pps),
            "dt_packet_kbit": list(p.dt_packet_kbit),
        },
    }
