"""A small fully connected network trained with Adam, in plain numpy.

Hidden layers use ReLU; the output layer is logistic so that the binary
cross-entropy between the predicted and the labelled association is
defined.  All math is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_SCHEMA = "mectwin.mlp/1"
LOSS_CLAMP = 1e-12


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class MlpParams:
    """Weights ``W[l]`` of shape (fan_in, fan_out) and biases ``b[l]``."""

    W: list[np.ndarray]
    b: list[np.ndarray]
    adam: AdamState | None = None
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def sizes(self) -> list[int]:
        return [self.W[0].shape[0]] + [w.shape[1] for w in self.W]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.W, self.b) for a in pair]

    def copy(self) -> "MlpParams":
        adam = None
        if self.adam is not None:
            a = self.adam
            adam = AdamState([x.copy() for x in a.m], [x.copy() for x in a.v], a.step,
                             a.lr, a.beta1, a.beta2, a.eps)
        return MlpParams([w.copy() for w in self.W], [b.copy() for b in self.b], adam,
                         self.epoch, dict(self.meta))


def layer_sizes(n_in: int, n_out: int, hidden: Sequence[int] = (100, 100, 100, 100)) -> list[int]:
    return [n_in, *hidden, n_out]


def init_params(sizes: Sequence[int], rng: np.random.Generator, lr: float = 1e-3) -> MlpParams:
    """Zero-mean normal weights with He scaling, zero biases, fresh Adam state."""
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"bad layer sizes {list(sizes)}")
    W = [rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    b = [np.zeros(n) for n in sizes[1:]]
    params = MlpParams(W, b)
    params.adam = AdamState([np.zeros_like(x) for x in params.arrays()],
                            [np.zeros_like(x) for x in params.arrays()], lr=lr)
    return params


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(params: MlpParams, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(params.W) - 1
    for l, (W, b) in enumerate(zip(params.W, params.b)):
        z = h @ W + b
        pre.append(z)
        h = _sigmoid(z) if l == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(params: MlpParams, x) -> np.ndarray:
    """Output in (0, 1)^d for a single input vector or a batch (rows)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.W[0].shape[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.W[0].shape[0]}")
    return _forward_cache(params, x)[0][-1]


def loss(beta_hat, beta_tilde) -> float:
    """Binary cross-entropy summed over outputs, averaged over the batch."""
    p = np.clip(np.atleast_2d(np.asarray(beta_hat, dtype=np.float64)), LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    t = np.atleast_2d(np.asarray(beta_tilde, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError("prediction and target shapes differ")
    return float(-np.sum(t * np.log(p) + (1.0 - t) * np.log1p(-p)) / p.shape[0])


def backward(params: MlpParams, x, target) -> tuple[float, list[np.ndarray]]:
    """Loss and its gradient w.r.t. ``params.arrays()`` (same order)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    acts, pre = _forward_cache(params, x)
    out = acts[-1]
    n = x.shape[0]
    value = loss(out, t)
    # d loss / d z_out for logistic + BCE, with the clamp's zero-gradient region honoured
    p_c = np.clip(out, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    delta = (p_c - t) / n
    inside = (out > LOSS_CLAMP) & (out < 1.0 - LOSS_CLAMP)
    delta = np.where(inside, delta, 0.0)
    grads_W: list[np.ndarray] = []
    grads_b: list[np.ndarray] = []
    for l in range(len(params.W) - 1, -1, -1):
        grads_W.append(acts[l].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if l > 0:
            delta = (delta @ params.W[l].T) * (pre[l - 1] > 0.0)
    grads_W.reverse()
    grads_b.reverse()
    return value, [g for pair in zip(grads_W, grads_b) for g in pair]


def adam_step(params: MlpParams, grads: Sequence[np.ndarray]) -> None:
    """In-place Adam update with bias correction."""
    st = params.adam
    if st is None:
        raise ValueError("parameters carry no optimizer state")
    st.step += 1
    c1 = 1.0 - st.beta1 ** st.step
    c2 = 1.0 - st.beta2 ** st.step
    for p, g, m, v in zip(params.arrays(), grads, st.m, st.v):
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * g * g
        p -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(params: MlpParams, path: str | Path) -> None:
    """One ``.npz`` holding every array plus a JSON header; reload is bit-exact."""
    arrays = {}
    for i, (W, b) in enumerate(zip(params.W, params.b)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    st = params.adam
    header = {"schema": CHECKPOINT_SCHEMA, "sizes": params.sizes, "epoch": params.epoch,
              "meta": params.meta, "adam": None}
    if st is not None:
        header["adam"] = {"step": st.step, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2,
                          "eps": st.eps}
        for i, (m, v) in enumerate(zip(st.m, st.v)):
            arrays[f"m{i}"] = m
            arrays[f"v{i}"] = v
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> MlpParams:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {header.get('schema')!r}")
        n = len(header["sizes"]) - 1
        W = [data[f"W{i}"].copy() for i in range(n)]
        b = [data[f"b{i}"].copy() for i in range(n)]
        params = MlpParams(W, b, None, int(header["epoch"]), header.get("meta", {}))
        a = header.get("adam")
        if a is not None:
            k = 2 * n
            params.adam = AdamState([data[f"m{i}"].copy() for i in range(k)],
                                    [data[f"v{i}"].copy() for i in range(k)],
                                    a["step"], a["lr"], a["beta1"], a["beta2"], a["eps"])
    return params
