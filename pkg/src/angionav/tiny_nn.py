"""Minimal dense network kernel: forward, exact backprop, Adam.

Shared by the per-pixel segmentation policy and the navigation policy.
Everything is float64 numpy so finite-difference gradient checks can be
tight, and everything is deterministic per seed. Inputs may be a single
vector ``(d,)`` or a batch ``(n, d)``; gradients returned by ``backward``
are summed over the batch (loss heads scale their upstream gradient
accordingly).

Checkpoints are versioned JSON with base64-packed float64 weights, so a
round trip is bit exact and loading rejects mismatched shape chains.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .seeding import substream


class NumericsError(RuntimeError):
    """Non-finite value where training must abort loudly."""


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # per layer, shape (fan_out, fan_in)
    biases: list[np.ndarray]  # per layer, shape (fan_out,)
    init_seed: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)


def init_mlp(layer_sizes, seed: int = 0) -> MlpParams:
    """He-uniform weights (matched to the ReLU hiddens), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError("layer_sizes needs at least two positive entries")
    rng = substream(seed, "mlp-init")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(layer_sizes=sizes, weights=weights, biases=biases, init_seed=seed)


def clone_params(params: MlpParams) -> MlpParams:
    return MlpParams(
        layer_sizes=params.layer_sizes,
        weights=[w.copy() for w in params.weights],
        biases=[b.copy() for b in params.biases],
        init_seed=params.init_seed,
    )


def forward(params: MlpParams, x: np.ndarray):
    """Affine+ReLU hidden layers, affine output. Returns (logits, cache)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"input width {x.shape[1]} != first layer size {params.layer_sizes[0]}"
        )
    inputs = []
    pre = []
    a = x
    last = params.n_layers - 1
    for li, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = z if li == last else np.maximum(z, 0.0)
    logits = a[0] if squeeze else a
    return logits, {"inputs": inputs, "pre": pre, "squeeze": squeeze}


def backward(params: MlpParams, cache, dlogits: np.ndarray):
    """Exact reverse-mode gradients, summed over the batch."""
    d = np.asarray(dlogits, dtype=np.float64)
    if cache["squeeze"]:
        d = d[None, :]
    if d.shape != cache["pre"][-1].shape:
        raise ValueError("dlogits shape does not match the forward pass")
    grads_w = [None] * params.n_layers
    grads_b = [None] * params.n_layers
    for li in range(params.n_layers - 1, -1, -1):
        if li != params.n_layers - 1:
            d = d * (cache["pre"][li] > 0.0)
        grads_w[li] = d.T @ cache["inputs"][li]
        grads_b[li] = d.sum(axis=0)
        if li > 0:
            d = d @ params.weights[li]
    return grads_w, grads_b


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list = field(default_factory=list)
    v_w: list = field(default_factory=list)
    m_b: list = field(default_factory=list)
    v_b: list = field(default_factory=list)


def init_adam(params: MlpParams, lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
        m_w=[np.zeros_like(w) for w in params.weights],
        v_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(params: MlpParams, grads, state: AdamState) -> None:
    """Bias-corrected Adam update, in place. Weight decay is fixed at 0."""
    grads_w, grads_b = grads
    for g in list(grads_w) + list(grads_b):
        if not np.all(np.isfinite(g)):
            raise NumericsError("non-finite gradient; training aborted")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for i in range(params.n_layers):
        for value, grad, m, v in (
            (params.weights[i], grads_w[i], state.m_w[i], state.v_w[i]),
            (params.biases[i], grads_b[i], state.m_b[i], state.v_b[i]),
        ):
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- distribution heads --------------------------------------------------------

def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -softplus(-np.asarray(x, dtype=np.float64))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def categorical_sample(logits: np.ndarray, rng: np.random.Generator) -> int:
    probs = softmax(logits)
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right").clip(0, len(probs) - 1))


def categorical_entropy(logits: np.ndarray) -> float:
    logp = log_softmax(logits)
    return float(-(np.exp(logp) * logp).sum())


# --- checkpoints ----------------------------------------------------------------

_CKPT_FORMAT = "mlp-checkpoint"
_CKPT_VERSION = 1


def _pack(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()


def _unpack(text: str, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape).copy()


def save_checkpoint(params: MlpParams, path, meta: dict | None = None) -> None:
    payload = {
        "format": _CKPT_FORMAT,
        "version": _CKPT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "init_seed": params.init_seed,
        "weights": [_pack(w) for w in params.weights],
        "biases": [_pack(b) for b in params.biases],
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, expect_layer_sizes=None):
    """Load (params, meta); rejects wrong formats and shape chains."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != _CKPT_FORMAT or payload.get("version") != _CKPT_VERSION:
        raise ValueError(f"not a {_CKPT_FORMAT} v{_CKPT_VERSION} file: {path}")
    sizes = tuple(int(s) for s in payload["layer_sizes"])
    if expect_layer_sizes is not None and sizes != tuple(expect_layer_sizes):
        raise ValueError(
            f"checkpoint layer sizes {sizes} != expected {tuple(expect_layer_sizes)}"
        )
    weights = [
        _unpack(text, (fan_out, fan_in))
        for text, fan_in, fan_out in zip(payload["weights"], sizes[:-1], sizes[1:])
    ]
    biases = [
        _unpack(text, (fan_out,))
        for text, fan_out in zip(payload["biases"], sizes[1:])
    ]
    params = MlpParams(
        layer_sizes=sizes,
        weights=weights,
        biases=biases,
        init_seed=int(payload.get("init_seed", 0)),
    )
    return params, payload.get("meta", {})
