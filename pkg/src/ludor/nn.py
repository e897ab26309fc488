"""Dense MLPs with hand-written backprop, Adam, parameter EMA and seeded RNG.

Parameters of a network live in one contiguous float64 vector; the per-layer
weight and bias arrays are views into it. Every optimiser, blending and
serialisation routine therefore works on plain flat vectors.

Flat layout, layer by layer: the weight matrix ``W`` (shape ``out x in``,
row-major) followed by the bias ``b`` (length ``out``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InternalError, TrainingError

ACTIVATIONS = ("relu", "tanh", "identity")

CHECKPOINT_MAGIC = b"LDCKPT01"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, stream)``.

    Different ``stream`` values give statistically independent sequences for
    the same seed, so consumers that must not perturb each other (batch
    sampling, target-policy noise, evaluation) each get their own stream.
    """
    if seed < 0:
        raise ConfigurationError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
    return np.random.Generator(np.random.Philox(ss))


def _layer_offsets(sizes):
    offsets = []
    pos = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w_end = pos + n_in * n_out
        offsets.append((pos, w_end, w_end + n_out))
        pos = w_end + n_out
    return offsets, pos


@dataclass(frozen=True, eq=False)
class MlpParams:
    """An MLP: layer sizes, one activation per layer and the flat parameters.

    When ``out_scale`` is set the network output is ``out_scale * tanh(z)``
    applied after the last layer's activation (which should be identity).
    """

    sizes: tuple
    activations: tuple
    flat: np.ndarray
    out_scale: float | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        acts = tuple(self.activations)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        if len(acts) != len(sizes) - 1:
            raise ConfigurationError(
                f"{len(sizes) - 1} layers need {len(sizes) - 1} activations, got {len(acts)}"
            )
        for a in acts:
            if a not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {a!r}")
        flat = np.asarray(self.flat, dtype=np.float64)
        _, n = _layer_offsets(sizes)
        if flat.shape != (n,):
            raise ConfigurationError(f"flat vector has shape {flat.shape}, expected ({n},)")
        object.__setattr__(self, "flat", flat)

    @property
    def n_params(self) -> int:
        return self.flat.shape[0]

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def layers(self):
        """List of ``(W, b)`` views into ``flat``."""
        offsets, _ = _layer_offsets(self.sizes)
        out = []
        for (start, w_end, b_end), n_in, n_out in zip(offsets, self.sizes[:-1], self.sizes[1:]):
            out.append((self.flat[start:w_end].reshape(n_out, n_in), self.flat[w_end:b_end]))
        return out

    def with_flat(self, flat) -> "MlpParams":
        return MlpParams(self.sizes, self.activations, flat, self.out_scale)

    def copy(self) -> "MlpParams":
        return self.with_flat(self.flat.copy())

    def same_shape(self, other: "MlpParams") -> bool:
        return (
            self.sizes == other.sizes
            and self.activations == other.activations
            and self.out_scale == other.out_scale
        )

    def descriptor(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "out_scale": self.out_scale,
        }

    @classmethod
    def from_layers(cls, layers, activations, out_scale=None) -> "MlpParams":
        sizes = [np.shape(layers[0][0])[1]] + [np.shape(w)[0] for w, _ in layers]
        for (w, b), n_in, n_out in zip(layers, sizes[:-1], sizes[1:]):
            if np.shape(w) != (n_out, n_in) or np.shape(b) != (n_out,):
                raise ConfigurationError("layer dimensions do not chain")
        flat = np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in layers])
        return cls(tuple(sizes), tuple(activations), flat.astype(np.float64), out_scale)


def init_mlp(sizes, activations, rng: np.random.Generator, out_scale=None) -> MlpParams:
    """Uniform init in ``±1/sqrt(fan_in)`` for weights and biases."""
    sizes = tuple(sizes)
    offsets, n = _layer_offsets(sizes)
    flat = np.empty(n)
    for (start, _, end), n_in in zip(offsets, sizes[:-1]):
        bound = 1.0 / np.sqrt(n_in)
        flat[start:end] = rng.uniform(-bound, bound, size=end - start)
    return MlpParams(sizes, tuple(activations), flat, out_scale)


def build_mlp(in_dim, out_dim, hidden=(256, 256), rng=None, out_scale=None) -> MlpParams:
    """ReLU hidden layers, identity output, optional tanh squash."""
    if rng is None:
        rng = make_rng(0)
    sizes = (in_dim, *hidden, out_dim)
    acts = ("relu",) * len(hidden) + ("identity",)
    return init_mlp(sizes, acts, rng, out_scale)


@dataclass
class MlpCache:
    flat: np.ndarray
    acts: list
    squashed: np.ndarray | None
    vector_input: bool


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(h, kind):
    # derivatives expressed through the layer output h
    if kind == "relu":
        return (h > 0.0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - h * h
    return None


def mlp_forward(params: MlpParams, x):
    """Evaluate the network on a vector or a ``(batch, in_dim)`` array.

    Returns ``(output, cache)``; the cache feeds :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    vector_input = x.ndim == 1
    h = x[None, :] if vector_input else x
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise ConfigurationError(
            f"input has shape {x.shape}, network expects last dim {params.in_dim}"
        )
    acts = [h]
    for (w, b), kind in zip(params.layers, params.activations):
        h = _activate(h @ w.T + b, kind)
        acts.append(h)
    squashed = None
    if params.out_scale is not None:
        squashed = np.tanh(h)
        h = params.out_scale * squashed
    out = h[0] if vector_input else h
    return out, MlpCache(params.flat, acts, squashed, vector_input)


def mlp_apply(params: MlpParams, x):
    """Forward pass without keeping the cache."""
    return mlp_forward(params, x)[0]


def mlp_backward(params: MlpParams, cache: MlpCache, output_grad, input_grad=False):
    """Gradient of ``sum(output * output_grad)`` with respect to the parameters.

    Returns the flat parameter gradient, or ``(param_grad, input_grad)`` when
    ``input_grad`` is true.
    """
    if cache.flat is not params.flat:
        raise InternalError("cache was produced by a different parameter vector")
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.vector_input:
        g = g[None, :]
    batch = cache.acts[0].shape[0]
    if g.shape != (batch, params.out_dim):
        raise InternalError(f"output_grad shape {g.shape} does not match cache ({batch}, {params.out_dim})")
    if cache.squashed is not None:
        g = g * (params.out_scale * (1.0 - cache.squashed * cache.squashed))

    grad = np.empty(params.n_params)
    offsets, _ = _layer_offsets(params.sizes)
    layers = params.layers
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        d = _activation_grad(cache.acts[i + 1], params.activations[i])
        if d is not None:
            g = g * d
        start, w_end, b_end = offsets[i]
        grad[start:w_end] = (g.T @ cache.acts[i]).ravel()
        grad[w_end:b_end] = g.sum(axis=0)
        if i > 0 or input_grad:
            g = g @ w
    if input_grad:
        return grad, (g[0] if cache.vector_input else g)
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise ConfigurationError("Adam moment vectors differ in length")
        if self.t < 0 or not self.lr > 0:
            raise ConfigurationError("Adam needs t >= 0 and lr > 0")

    @classmethod
    def fresh(cls, n, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: MlpParams, grad, state: AdamState):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ConfigurationError(
            f"gradient {grad.shape}, moments {state.m.shape} and parameters {params.flat.shape} differ"
        )
    t = state.t + 1
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient", step=t)
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    flat = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, b1, b2, state.eps)
    return params.with_flat(flat), new_state


def ema_blend(student: MlpParams, teacher: MlpParams, alpha: float) -> MlpParams:
    """Coordinate-wise ``alpha * student + (1 - alpha) * teacher``."""
    if not student.same_shape(teacher):
        raise ConfigurationError("EMA needs identical architectures")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"EMA alpha must lie in [0, 1], got {alpha}")
    return student.with_flat(alpha * student.flat + (1.0 - alpha) * teacher.flat)


def soft_update(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    """Polyak step of a target network toward its source."""
    if not target.same_shape(source):
        raise ConfigurationError("target and source architectures differ")
    return target.with_flat(tau * source.flat + (1.0 - tau) * target.flat)


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, nets: dict, seed: int, step: int, extra: dict | None = None):
    """Write ``nets`` (name -> MlpParams) as header + little-endian float64 body.

    Layout: 8-byte magic ``LDCKPT01``, uint64 LE header length, UTF-8 JSON
    header, then every network's flat vector concatenated in header order.
    """
    entries = []
    offset = 0
    for name, p in nets.items():
        entries.append({"name": name, **p.descriptor(), "offset": offset, "length": p.n_params})
        offset += p.n_params
    header = {"seed": int(seed), "step": int(step), "nets": entries, "total": offset}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    body = np.concatenate([p.flat for p in nets.values()]) if nets else np.empty(0)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(body.astype("<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`. Returns ``(nets, header)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + n].decode())
    body = np.frombuffer(raw[16 + n :], dtype="<f8").astype(np.float64)
    if body.shape[0] != header["total"]:
        raise ConfigurationError("checkpoint body length does not match header")
    nets = {}
    for e in header["nets"]:
        flat = body[e["offset"] : e["offset"] + e["length"]].copy()
        nets[e["name"]] = MlpParams(tuple(e["sizes"]), tuple(e["activations"]), flat, e["out_scale"])
    return nets, header
