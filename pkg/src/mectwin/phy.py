"""Channel gains and achievable rates for both service classes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from scipy.special import erfcinv, exp1

from mectwin.numerics import golden_section_min
from mectwin.params import RadioConfig

LN2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LinkGain:
    """Large-scale gain of one user→AP link (linear), with its provenance."""

    alpha: float
    distance_m: float = float("nan")
    shadowing_db: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha!r}")


def _alpha(link) -> float:
    return link.alpha if isinstance(link, LinkGain) else float(link)


def path_loss_db(distance_m: float, shadowing_db: float = 0.0) -> float:
    if not distance_m > 0:
        raise ValueError(f"distance must be > 0, got {distance_m!r}")
    return 35.3 + 37.6 * math.log10(distance_m) + shadowing_db


def path_loss_gain(distance_m: float, shadowing_db: float = 0.0) -> float:
    """Linear large-scale gain for the 35.3 + 37.6 log10(d) model plus shadowing (dB)."""
    return 10.0 ** (-path_loss_db(distance_m, shadowing_db) / 10.0)


def link_from_geometry(distance_m: float, shadowing_db: float = 0.0) -> LinkGain:
    return LinkGain(path_loss_gain(distance_m, shadowing_db), distance_m, shadowing_db)


# --------------------------------------------------------------------------- Q-function

def q_function(x: float) -> float:
    return 0.5 * math.erfc(x / _SQRT2)


def q_inverse(p: float) -> float:
    """Inverse Gaussian tail function, accurate down to p ~ 1e-300."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"q_inverse needs 0 < p < 1, got {p!r}")
    x = _SQRT2 * float(erfcinv(2.0 * p))
    for _ in range(3):
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * x * x)
        if pdf == 0.0:
            break
        step = (q_function(x) - p) / pdf
        x += step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


# --------------------------------------------------------------------------- URLLC

def urllc_snr(N: float, g: float, P: float, link, cfg: RadioConfig) -> float:
    return _alpha(link) * g * P / (cfg.Phi * N * cfg.W * cfg.N0)


def urllc_rate(N: float, g: float, P: float, link, cfg: RadioConfig, eps_d: float) -> float:
    """Finite-blocklength achievable rate (bits/s), clamped at zero.

    Uses the full channel dispersion ``V = 1 - (1 + snr)^-2``.
    """
    if not N > 0:
        raise ValueError("N must be > 0")
    snr = urllc_snr(N, g, P, link, cfg)
    v = 1.0 - 1.0 / (1.0 + snr) ** 2
    nw = N * cfg.W
    rate = nw / LN2 * (math.log1p(snr) - math.sqrt(v / (cfg.Ts * nw)) * q_inverse(eps_d))
    return max(rate, 0.0)


def _urllc_exponent(N: float, cfg: RadioConfig, b_u: float, qinv: float) -> float:
    tnw = cfg.Ts * N * cfg.W
    return qinv / math.sqrt(tnw) + b_u * LN2 / tnw


def urllc_power_coefficient(N: float, link, cfg: RadioConfig, b_u: float, eps_d: float) -> float:
    """Coefficient ϱ such that the power needed at small-scale gain ``g`` is ϱ/g.

    Delivers ``b_u`` bits in one slot with decoding error ``eps_d`` under the
    high-SNR dispersion approximation V≈1.  Returns ``inf`` when the exponent
    overflows (vanishing bandwidth).
    """
    if not N > 0:
        raise ValueError("N must be > 0")
    e = _urllc_exponent(N, cfg, b_u, q_inverse(eps_d))
    if e > 700.0:
        return math.inf
    return cfg.Phi * N * cfg.W * cfg.N0 / _alpha(link) * math.expm1(e)


@lru_cache(maxsize=256)
def _stationary_subcarriers(qinv: float, b_u: float, Ts: float, W: float, Nmax: int) -> float:
    def shape(n: float) -> float:
        tnw = Ts * n * W
        e = qinv / math.sqrt(tnw) + b_u * LN2 / tnw
        return math.inf if e > 700.0 else n * math.expm1(e)

    n, _ = golden_section_min(shape, 1.0, float(Nmax), tol=1e-10 * Nmax)
    # the stationary point may lie on the cap
    if shape(float(Nmax)) <= shape(n):
        return float(Nmax)
    return n


def urllc_stationary_subcarriers(cfg: RadioConfig, b_u: float, eps_d: float) -> float:
    """Ñ: the subcarrier count minimizing ϱ on [1, Nmax] (independent of the link gain)."""
    return _stationary_subcarriers(q_inverse(eps_d), float(b_u), cfg.Ts, cfg.W, int(cfg.Nmax))


# --------------------------------------------------------------------------- delay tolerant

def _scaled_e1(z: float) -> float:
    """e^z E1(z) for z > 0."""
    if z < 100.0:
        return math.exp(z) * float(exp1(z))
    t = 1.0 / z
    term = total = 1.0
    n = 1
    while n < 40:
        term *= -n * t
        total += term
        if abs(term) < 1e-17 * abs(total):
            break
        n += 1
    return total * t


def mean_log_gain(s: float) -> float:
    """E[ln(1 + s g)] for g ~ Exp(1), in closed form e^{1/s} E1(1/s)."""
    if s <= 0.0:
        return 0.0
    return _scaled_e1(1.0 / s)


def mean_log_gain_slope(s: float) -> float:
    """d/ds E[ln(1 + s g)] = E[g / (1 + s g)]."""
    if s <= 0.0:
        return 1.0
    z = 1.0 / s
    if z >= 100.0:
        t = s
        term, total, n = 1.0, 1.0, 1
        while n < 40:
            term *= -(n + 1) * t
            total += term
            if abs(term) < 1e-17 * abs(total):
                break
            n += 1
        return total
    return z * (1.0 - z * _scaled_e1(z))


def inverse_mean_log_gain(y: float) -> float:
    """s ≥ 0 with E[ln(1 + s g)] = y.

    Newton from the left bracket end; the map is concave increasing so the
    iterates climb monotonically to the root.
    """
    if y <= 0.0:
        return 0.0
    if y > 700.0:
        return math.inf
    lo = math.expm1(y)
    hi = 0.5 * math.expm1(2.0 * y) if y < 350.0 else math.inf
    s = lo
    for _ in range(200):
        f = mean_log_gain(s)
        deficit = y - f
        if deficit <= 0.0:
            break
        step = deficit / mean_log_gain_slope(s)
        s_new = min(s + step, hi)
        if s_new - s <= 4e-16 * s_new:
            s = s_new
            break
        s = s_new
    return s


def dt_snr(N: float, P: float, link, cfg: RadioConfig) -> float:
    return _alpha(link) * P / (N * cfg.W * cfg.N0)


def ergodic_capacity(N: float, P: float, link, cfg: RadioConfig) -> float:
    """Ergodic Shannon capacity (bits/s) of N subcarriers under unit-mean Rayleigh fading."""
    if N <= 0.0 or P <= 0.0:
        return 0.0
    return N * cfg.W / LN2 * mean_log_gain(dt_snr(N, P, link, cfg))


def required_power_dt(rate_target: float, N: float, link, cfg: RadioConfig,
                      p_cap: float | None = None) -> float:
    """Smallest power whose ergodic capacity reaches ``rate_target`` (bits/s).

    Returns ``inf`` when the target needs more than ``p_cap`` (default Pmax).
    """
    if rate_target < 0:
        raise ValueError("rate_target must be >= 0")
    if rate_target == 0.0:
        return 0.0
    if not N > 0:
        return math.inf
    cap = cfg.Pmax if p_cap is None else p_cap
    s = inverse_mean_log_gain(rate_target * LN2 / (N * cfg.W))
    p = s * N * cfg.W * cfg.N0 / _alpha(link)
    if p > cap * (1.0 + 1e-12):
        return math.inf
    return min(p, cap)
