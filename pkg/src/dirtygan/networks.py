"""The six fully-connected networks and their composition operators.

Every network is a 4-affine stack: input -> d -> ceil(d/2) -> d -> output,
relu on hidden layers, with the output activation varying per role
(encoder/conditional generator: relu, imputer/hidden critic: sigmoid,
element critic: linear, classifier: softmax). ``forward_numpy`` is the
fast path for frozen networks; ``wrap``/``forward_nodes`` build the
differentiable graph for whichever network is being updated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import engine
from .errors import ContractError, DataError

_ACTIVATION_TAGS = ("relu", "sigmoid", "linear", "softmax")

_CHECKPOINT_MAGIC = b"DGC1"
_CHECKPOINT_VERSION = 1

_NETWORK_ORDER = ("encoder", "imputer", "element_critic",
                  "cond_generator", "hidden_critic", "classifier")


@dataclass
class Layer:
    w: np.ndarray
    b: np.ndarray
    activation: str


@dataclass
class Mlp:
    layers: list

    @property
    def in_width(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_width(self) -> int:
        return self.layers[-1].w.shape[1]

    def params(self) -> list:
        flat = []
        for layer in self.layers:
            flat += [layer.w, layer.b]
        return flat

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.w.copy(), l.b.copy(), l.activation) for l in self.layers])


@dataclass
class NetParams:
    """Parameter sets of all six networks plus the shared dimensions."""

    encoder: Mlp
    imputer: Mlp
    element_critic: Mlp
    cond_generator: Mlp
    hidden_critic: Mlp
    classifier: Mlp
    d: int
    n_c: int
    d_z: int

    def named(self):
        return {name: getattr(self, name) for name in _NETWORK_ORDER}

    def copy(self) -> "NetParams":
        nets = {name: getattr(self, name).copy() for name in _NETWORK_ORDER}
        return NetParams(d=self.d, n_c=self.n_c, d_z=self.d_z, **nets)


def hidden_widths(d: int) -> list:
    """Hidden layer widths d, ceil(d/2), d (ceiling keeps d=1 usable)."""
    return [d, (d + 1) // 2, d]


def init_mlp(in_width, d, out_width, out_activation, rng, scheme="he") -> Mlp:
    widths = [in_width] + hidden_widths(d) + [out_width]
    activations = ["relu"] * 3 + [out_activation]
    layers = []
    for w_in, w_out, act in zip(widths, widths[1:], activations):
        if scheme == "he":
            std = np.sqrt(2.0 / w_in)
        elif scheme == "xavier":
            std = np.sqrt(2.0 / (w_in + w_out))
        else:
            raise ContractError(f"unknown init scheme '{scheme}'")
        layers.append(Layer(std * rng.standard_normal((w_in, w_out)),
                            np.zeros((1, w_out)), act))
    return Mlp(layers)


def init_params(d: int, n_c: int, seed: int, d_z: int | None = None, scheme="he") -> NetParams:
    """Fan-in-scaled weights, zero biases, deterministic given the seed."""
    if d < 1 or n_c < 2:
        raise ContractError(f"need d >= 1 and n_c >= 2, got d={d}, n_c={n_c}")
    d_z = d if d_z is None else int(d_z)
    rng = np.random.default_rng(seed)
    return NetParams(
        encoder=init_mlp(2 * d, d, d, "relu", rng, scheme),
        imputer=init_mlp(d, d, d, "sigmoid", rng, scheme),
        element_critic=init_mlp(d + n_c, d, d + 1, "linear", rng, scheme),
        cond_generator=init_mlp(d_z + n_c, d, d, "relu", rng, scheme),
        hidden_critic=init_mlp(d + n_c, d, 1, "sigmoid", rng, scheme),
        classifier=init_mlp(d, d, n_c, "softmax", rng, scheme),
        d=d, n_c=n_c, d_z=d_z,
    )


# ------------------------------------------------------------------ forward

_NUMPY_ACTS = {
    "relu": lambda z: np.maximum(z, 0.0),
    "sigmoid": engine._sigmoid_values,
    "linear": lambda z: z,
    "softmax": engine._softmax_values,
}

_NODE_ACTS = {
    "relu": engine.relu,
    "sigmoid": engine.sigmoid,
    "linear": lambda n: n,
    "softmax": engine.softmax_rows,
}


def forward_numpy(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Frozen-network forward pass on plain arrays."""
    _check_width(mlp, x, "forward")
    a = np.asarray(x, dtype=np.float64)
    for layer in mlp.layers:
        a = _NUMPY_ACTS[layer.activation](a @ layer.w + layer.b)
    return a


def wrap(mlp: Mlp, trainable: bool = True) -> list:
    """Lift a network into graph layers: [(w_node, b_node, activation), ...]."""
    lifter = engine.leaf if trainable else engine.const
    return [(lifter(l.w), lifter(l.b), l.activation) for l in mlp.layers]


def forward_nodes(layers, x_node: engine.Node) -> engine.Node:
    a = x_node
    for w, b, act in layers:
        a = engine.dense_layer(a, w, b, act)
    return a


def forward_nodes_collect(layers, x_node: engine.Node):
    """Forward pass that also returns every layer's output value,
    so penalty builders can reuse the activations."""
    a = x_node
    outputs = []
    for w, b, act in layers:
        a = engine.dense_layer(a, w, b, act)
        outputs.append(a.value)
    return a, outputs


def layer_grads(layers) -> list:
    """Gradients of wrapped layers in the same order as ``Mlp.params``."""
    flat = []
    for w, b, _ in layers:
        flat += [w.grad_or_zero(), b.grad_or_zero()]
    return flat


def _check_width(mlp: Mlp, x, what: str):
    if np.asarray(x).ndim != 2 or x.shape[1] != mlp.in_width:
        raise ContractError(
            f"{what}: input width {np.asarray(x).shape} does not match network input {mlp.in_width}")


# ------------------------------------------------ composition operators

def fill_noise(x: np.ndarray, m: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Replace missing elements with noise: m*x + (1-m)*z."""
    x, m, z = (np.asarray(a, dtype=np.float64) for a in (x, m, z))
    if not (x.shape == m.shape == z.shape):
        raise ContractError(f"fill_noise: shapes differ {x.shape} {m.shape} {z.shape}")
    if not np.isin(m, (0.0, 1.0)).all():
        raise ContractError("fill_noise: mask must be boolean 0/1")
    return m * x + (1.0 - m) * z


def compose_imputed(x: np.ndarray, m: np.ndarray, x_bar: np.ndarray) -> np.ndarray:
    """Keep observed coordinates exactly, take generated values elsewhere."""
    x, m, x_bar = (np.asarray(a, dtype=np.float64) for a in (x, m, x_bar))
    if not (x.shape == m.shape == x_bar.shape):
        raise ContractError(f"compose_imputed: shapes differ {x.shape} {m.shape} {x_bar.shape}")
    return np.where(m > 0, x, x_bar)


def compose_imputed_node(x: np.ndarray, m: np.ndarray, x_bar: engine.Node) -> engine.Node:
    """Graph version: x_hat = m*x + (1-m)*x_bar with x, m constant."""
    keep = engine.const(np.asarray(m) * np.asarray(x))
    return engine.add(keep, engine.hadamard(engine.const(1.0 - np.asarray(m)), x_bar))


def encode(encoder: Mlp, x_tilde: np.ndarray, m: np.ndarray) -> np.ndarray:
    inp = np.concatenate([x_tilde, m], axis=1)
    _check_width(encoder, inp, "encode")
    return forward_numpy(encoder, inp)


def generate_imputation(imputer: Mlp, h: np.ndarray) -> np.ndarray:
    _check_width(imputer, h, "generate_imputation")
    return forward_numpy(imputer, h)


def discriminate_elements(critic: Mlp, x_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    inp = np.concatenate([x_hat, y], axis=1)
    _check_width(critic, inp, "discriminate_elements")
    return forward_numpy(critic, inp)


def generate_hidden_conditional(gen: Mlp, z: np.ndarray, y_c: np.ndarray) -> np.ndarray:
    inp = np.concatenate([z, y_c], axis=1)
    _check_width(gen, inp, "generate_hidden_conditional")
    return forward_numpy(gen, inp)


def discriminate_hidden(critic: Mlp, h: np.ndarray, y: np.ndarray) -> np.ndarray:
    inp = np.concatenate([h, y], axis=1)
    _check_width(critic, inp, "discriminate_hidden")
    return forward_numpy(critic, inp)


def classify(classifier: Mlp, x_hat: np.ndarray) -> np.ndarray:
    _check_width(classifier, x_hat, "classify")
    return forward_numpy(classifier, x_hat)


def sample_pseudo_label(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical one-hot draw per row of a probability matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
        raise ContractError("sample_pseudo_label: rows must sum to 1")
    cum = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1))
    idx = (u > cum).sum(axis=1)
    idx = np.minimum(idx, probs.shape[1] - 1)
    out = np.zeros_like(probs)
    out[np.arange(probs.shape[0]), idx] = 1.0
    return out


# ------------------------------------------------------------ checkpoints

def save_checkpoint(path, params: NetParams) -> None:
    """Versioned flat binary serialization; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", _CHECKPOINT_VERSION, params.d, params.n_c, params.d_z))
        for name in _NETWORK_ORDER:
            mlp = getattr(params, name)
            fh.write(struct.pack("<I", len(mlp.layers)))
            for layer in mlp.layers:
                rows, cols = layer.w.shape
                fh.write(struct.pack("<IIB", rows, cols,
                                     _ACTIVATION_TAGS.index(layer.activation)))
                fh.write(np.ascontiguousarray(layer.w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())


def load_checkpoint(path) -> NetParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version, d, n_c, d_z = struct.unpack_from("<IIII", raw, 4)
    if version != _CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + 16
    nets = {}
    for name in _NETWORK_ORDER:
        (n_layers,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        layers = []
        for _ in range(n_layers):
            rows, cols, act_id = struct.unpack_from("<IIB", raw, offset)
            offset += 9
            w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols).copy()
            offset += rows * cols * 8
            b = np.frombuffer(raw, dtype="<f8", count=cols, offset=offset).reshape(1, cols).copy()
            offset += cols * 8
            layers.append(Layer(w, b, _ACTIVATION_TAGS[act_id]))
        nets[name] = Mlp(layers)
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes")
    return NetParams(d=d, n_c=n_c, d_z=d_z, **nets)
