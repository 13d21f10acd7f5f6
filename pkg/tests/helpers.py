"""Shared random instance builders for the optimizer tests."""

import numpy as np

from mectwin.ap_optimizer import DT, URLLC, ApUser
from mectwin.params import SystemParams
from mectwin.phy import path_loss_gain


def random_user(rng: np.random.Generator, service: str, p: SystemParams, uid: int = -1) -> ApUser:
    d = np.sqrt(rng.uniform(10 ** 2, 100 ** 2))
    alpha = path_loss_gain(d, rng.normal(0, 8))
    if service == URLLC:
        return ApUser(URLLC, p.per_slot(p.urllc_rate_pps), p.urllc_bits, p.urllc_cycles,
                      p.c_max_urllc, alpha, uid)
    lam = p.per_slot(rng.uniform(*p.dt_rate_pps))
    bits = rng.uniform(*p.dt_packet_kbit) * 1e3
    return ApUser(DT, lam, bits, p.k1 * bits / 8, p.c_max_dt, alpha, uid)


def random_users(rng, k_u, k_b, p):
    users = [random_user(rng, URLLC, p, k) for k in range(k_u)]
    users += [random_user(rng, DT, p, k_u + k) for k in range(k_b)]
    return users
