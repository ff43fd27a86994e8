"""Small feedforward approximator with hand-written gradients.

One architecture serves every learned component (Q-network, market prior,
policy, value baseline): rectifier hidden layers and either a linear or a
softmax head. Losses return exact analytic gradients of the batch mean; the
optimizer is the standard bias-corrected adaptive-moment update.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO

import numpy as np

from .rng import SeedLike, stream

HEADS = ("linear", "softmax")


@dataclass(frozen=True)
class NetSpec:
    in_dim: int
    hidden: tuple[int, ...] = (64, 64)
    out_dim: int = 7
    head: str = "linear"

    def __post_init__(self) -> None:
        widths = (self.in_dim, *self.hidden, self.out_dim)
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be positive: {widths}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        widths = (self.in_dim, *self.hidden, self.out_dim)
        return list(zip(widths[:-1], widths[1:]))


class NetParams:
    """Per-layer weights and biases. ``clone`` yields an independent copy
    (used for frozen targets and frozen priors)."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    def clone(self) -> "NetParams":
        return NetParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in self.arrays():
            h.update(a.tobytes())
        return h.hexdigest()[:16]


def init_params(spec: NetSpec, seed: SeedLike | np.random.Generator) -> NetParams:
    """Symmetric uniform fan-in initialization, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(weights, biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(params: NetParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns hidden activations (inputs to each layer) and raw head output."""
    acts = [x]
    h = x
    n_layers = len(params.weights)
    for i in range(n_layers - 1):
        h = np.maximum(h @ params.weights[i] + params.biases[i], 0.0)
        acts.append(h)
    out = h @ params.weights[-1] + params.biases[-1]
    return acts, out


def forward(params: NetParams, spec: NetSpec, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass. Accepts one feature vector or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != spec.in_dim:
        raise ValueError(f"input width {x.shape[1]} does not match spec in_dim {spec.in_dim}")
    _, out = _forward_cached(params, x)
    if spec.head == "softmax":
        out = _softmax(out)
    return out[0] if single else out


def _backward(
    params: NetParams, acts: list[np.ndarray], d_out: np.ndarray
) -> NetParams:
    """Backpropagate d(loss)/d(head output) through the stack."""
    g_w = [np.empty(0)] * len(params.weights)
    g_b = [np.empty(0)] * len(params.biases)
    delta = d_out
    for i in range(len(params.weights) - 1, -1, -1):
        g_w[i] = acts[i].T @ delta
        g_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0.0)
    return NetParams(g_w, g_b)


def nll_loss_grad(
    params: NetParams, spec: NetSpec, x: np.ndarray, labels: np.ndarray
) -> tuple[float, NetParams]:
    """Mean negative log-likelihood of labels under the softmax head."""
    x, labels = _check_batch(spec, x, labels)
    acts, logits = _forward_cached(params, x)
    probs = _softmax(logits)
    n = x.shape[0]
    idx = np.arange(n)
    loss = float(-np.log(np.maximum(probs[idx, labels], 1e-300)).mean())
    d_out = probs.copy()
    d_out[idx, labels] -= 1.0
    return loss, _backward(params, acts, d_out / n)


def td_loss_grad(
    params: NetParams, spec: NetSpec, x: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, NetParams]:
    """Mean squared error between selected-action values and fixed targets."""
    x, actions = _check_batch(spec, x, actions)
    acts, out = _forward_cached(params, x)
    n = x.shape[0]
    idx = np.arange(n)
    err = out[idx, actions] - targets
    loss = float((err**2).mean())
    d_out = np.zeros_like(out)
    d_out[idx, actions] = 2.0 * err / n
    return loss, _backward(params, acts, d_out)


def value_loss_grad(
    params: NetParams, spec: NetSpec, x: np.ndarray, targets: np.ndarray
) -> tuple[float, NetParams]:
    """Mean squared error of a scalar linear head against targets."""
    x, targets = _check_batch(spec, x, targets)
    acts, out = _forward_cached(params, x)
    n = x.shape[0]
    err = out[:, 0] - targets
    loss = float((err**2).mean())
    d_out = np.zeros_like(out)
    d_out[:, 0] = 2.0 * err / n
    return loss, _backward(params, acts, d_out)


def pg_loss_grad(
    params: NetParams,
    spec: NetSpec,
    x: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    kl_weight: float = 0.0,
    prior_probs: np.ndarray | None = None,
    entropy_coef: float = 0.0,
) -> tuple[float, NetParams]:
    """Policy-gradient surrogate for a softmax policy.

    Loss per sample: -advantage * log pi(a) + kl_weight * KL(pi || prior)
    - entropy_coef * H(pi). The KL and entropy terms differentiate through
    the full distribution, not just the sampled action.
    """
    x, actions = _check_batch(spec, x, actions)
    acts, logits = _forward_cached(params, x)
    probs = _softmax(logits)
    n = x.shape[0]
    idx = np.arange(n)
    logp = np.log(np.maximum(probs, 1e-300))
    loss = float(-(advantages * logp[idx, actions]).mean())
    d_out = probs * advantages[:, None]
    d_out[idx, actions] -= advantages
    if kl_weight != 0.0:
        if prior_probs is None:
            raise ValueError("kl_weight set but no prior distribution given")
        log_ratio = logp - np.log(np.maximum(prior_probs, 1e-300))
        kl = (probs * log_ratio).sum(axis=1)
        loss += kl_weight * float(kl.mean())
        d_out += kl_weight * probs * (log_ratio - kl[:, None])
    if entropy_coef != 0.0:
        ent = -(probs * logp).sum(axis=1)
        loss -= entropy_coef * float(ent.mean())
        d_out += entropy_coef * probs * (logp + ent[:, None])
    return loss, _backward(params, acts, d_out / n)


LOSS_KINDS = ("nll", "td", "value", "pg")


def loss_and_grad(
    params: NetParams, spec: NetSpec, batch: dict, kind: str
) -> tuple[float, NetParams]:
    """Dispatch by loss kind; ``batch`` carries the arrays each kind needs."""
    if "x" not in batch:
        raise ValueError("empty batch")
    if kind == "nll":
        return nll_loss_grad(params, spec, batch["x"], batch["labels"])
    if kind == "td":
        return td_loss_grad(params, spec, batch["x"], batch["actions"], batch["targets"])
    if kind == "value":
        return value_loss_grad(params, spec, batch["x"], batch["targets"])
    if kind == "pg":
        return pg_loss_grad(
            params,
            spec,
            batch["x"],
            batch["actions"],
            batch["advantages"],
            kl_weight=batch.get("kl_weight", 0.0),
            prior_probs=batch.get("prior_probs"),
            entropy_coef=batch.get("entropy_coef", 0.0),
        )
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _check_batch(spec: NetSpec, x: np.ndarray, second: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.size == 0:
        raise ValueError("empty batch")
    if x.shape[1] != spec.in_dim:
        raise ValueError(f"input width {x.shape[1]} does not match spec in_dim {spec.in_dim}")
    return x, np.asarray(second)


@dataclass
class OptState:
    """Adaptive-moment optimizer state for one parameter set."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None

    @classmethod
    def for_params(cls, params: NetParams, lr: float = 1e-3) -> "OptState":
        return cls(
            lr=lr,
            m=[np.zeros_like(a) for a in params.arrays()],
            v=[np.zeros_like(a) for a in params.arrays()],
        )


def optimizer_step(params: NetParams, grads: NetParams, opt: OptState) -> NetParams:
    """One bias-corrected adaptive-moment update, in place. Rejects
    non-finite gradients rather than corrupting the parameters."""
    garrays = grads.arrays()
    if any(not np.all(np.isfinite(g)) for g in garrays):
        raise ValueError("non-finite gradient; update aborted")
    assert opt.m is not None and opt.v is not None
    opt.step += 1
    correct1 = 1.0 - opt.beta1**opt.step
    correct2 = 1.0 - opt.beta2**opt.step
    for a, g, m, v in zip(params.arrays(), garrays, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g**2
        a -= opt.lr * (m / correct1) / (np.sqrt(v / correct2) + opt.eps)
    return params


# --- checkpoints -------------------------------------------------------------

CHECKPOINT_FORMAT = "markettrace-net-v1"


def save_params(params: NetParams, spec: NetSpec, fh: IO[str]) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "spec": {
            "in_dim": spec.in_dim,
            "hidden": list(spec.hidden),
            "out_dim": spec.out_dim,
            "head": spec.head,
        },
        "layers": [
            {"w": w.tolist(), "b": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    json.dump(doc, fh)


def load_params(fh: IO[str]) -> tuple[NetSpec, NetParams]:
    doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {doc.get('format')!r}")
    spec = NetSpec(
        in_dim=doc["spec"]["in_dim"],
        hidden=tuple(doc["spec"]["hidden"]),
        out_dim=doc["spec"]["out_dim"],
        head=doc["spec"]["head"],
    )
    params = NetParams(
        [np.array(layer["w"], dtype=float) for layer in doc["layers"]],
        [np.array(layer["b"], dtype=float) for layer in doc["layers"]],
    )
    return spec, params
