"""Small feed-forward network engine with explicit backpropagation.

Columns are processed independently (one frame per column).  Gradients are
exact sums over columns: for a linear layer, dW = delta @ input.T.  The
``gate-alpha`` output activation, tanh(v) + 0.5, is the head used by gating
networks; it overshoots [0, 1] symmetrically by 0.5 on each side and has a
strictly positive derivative that vanishes at +-infinity.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from cdctw.seqcore import BINARY_MAGIC, LoadError

HIDDEN_ACTIVATIONS = ("tanh", "leaky-relu")
OUTPUT_ACTIVATIONS = ("linear", "gate-alpha")

LEAKY_SLOPE = 0.01
CHECKPOINT_MAGIC = b"MLPC"


def gate_alpha(v):
    """Gating head activation tanh(v) + 0.5, range (-0.5, 1.5)."""
    return np.tanh(v) + 0.5


def gate_alpha_prime(v):
    """Derivative of gate_alpha: 1 - tanh(v)^2, strictly positive."""
    t = np.tanh(v)
    return 1.0 - t * t


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "leaky-relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "linear":
        return z
    if name == "gate-alpha":
        return gate_alpha(z)
    raise ValueError(f"unknown activation {name!r}")


def _activate_prime(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if name == "leaky-relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "linear":
        return np.ones_like(z)
    if name == "gate-alpha":
        return gate_alpha_prime(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "leaky-relu"
    output_activation: str = "linear"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError("need at least 2 layer widths, all >= 1")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        object.__setattr__(self, "layer_widths", widths)


@dataclass
class Mlp:
    """Weights/biases per layer.  Mutable during training; confine one
    instance to a single training loop at a time."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    spec: MlpSpec

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def _activation_at(self, layer: int) -> str:
        if layer == self.n_layers - 1:
            return self.spec.output_activation
        return self.spec.hidden_activation


def init_mlp(spec: MlpSpec, rng: np.random.Generator | None = None) -> Mlp:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.

    A gate-alpha head gets its final bias at +0.5 so gates start mostly
    open (alpha(0.5) ~ 0.96); gates collapsing shut at step 0 never recover
    because the regularizer only pushes down.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    widths = spec.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if spec.output_activation == "gate-alpha":
        biases[-1] = biases[-1] + 0.5
    return Mlp(weights=weights, biases=biases, spec=spec)


@dataclass
class ForwardTape:
    """Per-layer inputs and pre/post-activations cached for backward."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    output: np.ndarray


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != net.spec.layer_widths[0]:
        raise ValueError(
            f"input must be {net.spec.layer_widths[0]} x N, got shape {x.shape}"
        )
    inputs, preacts = [], []
    a = x
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = w @ a + b[:, None]
        preacts.append(z)
        a = _activate(net._activation_at(layer), z)
    return a, ForwardTape(inputs=inputs, preacts=preacts, output=a)


def backward(net: Mlp, tape: ForwardTape, grad_output: np.ndarray
             ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Exact chain-rule gradients: list of (dW, db) per layer plus the
    gradient with respect to the network input."""
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if len(tape.preacts) != net.n_layers:
        raise ValueError("tape does not match network depth")
    if grad_output.shape != tape.preacts[-1].shape:
        raise ValueError(
            f"grad_output shape {grad_output.shape} does not match output "
            f"{tape.preacts[-1].shape}"
        )
    for layer, w in enumerate(net.weights):
        if tape.inputs[layer].shape[0] != w.shape[1]:
            raise ValueError("tape does not match network shapes")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * net.n_layers  # type: ignore[list-item]
    delta = grad_output
    for layer in range(net.n_layers - 1, -1, -1):
        delta = delta * _activate_prime(net._activation_at(layer), tape.preacts[layer])
        grads[layer] = (delta @ tape.inputs[layer].T, delta.sum(axis=1))
        delta = net.weights[layer].T @ delta
    return grads, delta


@dataclass
class OptimizerState:
    """Adaptive-moment estimation state, one moment pair per parameter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)


def init_optimizer(net: Mlp, learning_rate: float = 1e-3) -> OptimizerState:
    state = OptimizerState(learning_rate=learning_rate)
    for w, b in zip(net.weights, net.biases):
        state.m_weights.append(np.zeros_like(w))
        state.v_weights.append(np.zeros_like(w))
        state.m_biases.append(np.zeros_like(b))
        state.v_biases.append(np.zeros_like(b))
    return state


def optimizer_step(net: Mlp, grads: list[tuple[np.ndarray, np.ndarray]],
                   state: OptimizerState) -> None:
    """One bias-corrected adaptive-moment update, in place."""
    if len(grads) != net.n_layers:
        raise ValueError("gradient list does not match network depth")
    for dw, db in grads:
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise FloatingPointError("non-finite gradient: training diverged")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    scale = state.learning_rate * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for layer, (dw, db) in enumerate(grads):
        for param, grad, m, v in (
            (net.weights[layer], dw, state.m_weights[layer], state.v_weights[layer]),
            (net.biases[layer], db, state.m_biases[layer], state.v_biases[layer]),
        ):
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            param -= scale * m / (np.sqrt(v) + state.epsilon)


# ---------------------------------------------------------------------------
# checkpointing: MLPC magic, JSON manifest, then one MVTW block per tensor
# ---------------------------------------------------------------------------

def save_mlp(net: Mlp, path) -> None:
    tensors = []
    for w, b in zip(net.weights, net.biases):
        tensors.append(w)
        tensors.append(b.reshape(1, -1))
    manifest = {
        "layer_widths": list(net.spec.layer_widths),
        "hidden_activation": net.spec.hidden_activation,
        "output_activation": net.spec.output_activation,
        "seed": net.spec.seed,
        "shapes": [list(t.shape) for t in tensors],
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(blob)), blob]
    for t in tensors:
        rows, cols = t.shape
        parts.append(BINARY_MAGIC + struct.pack("<II", rows, cols))
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise LoadError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    (manifest_len,) = struct.unpack("<I", blob[4:8])
    manifest = json.loads(blob[8 : 8 + manifest_len].decode())
    spec = MlpSpec(
        layer_widths=tuple(manifest["layer_widths"]),
        hidden_activation=manifest["hidden_activation"],
        output_activation=manifest["output_activation"],
        seed=manifest["seed"],
    )
    offset = 8 + manifest_len
    tensors = []
    for shape in manifest["shapes"]:
        if blob[offset : offset + 4] != BINARY_MAGIC:
            raise LoadError(f"{path}: bad tensor block at byte {offset}")
        rows, cols = struct.unpack("<II", blob[offset + 4 : offset + 12])
        if [rows, cols] != shape:
            raise LoadError(f"{path}: tensor shape mismatch {[rows, cols]} vs {shape}")
        n = rows * cols
        tensors.append(
            np.frombuffer(blob, dtype="<f8", count=n, offset=offset + 12)
            .reshape(rows, cols)
            .astype(np.float64)
        )
        offset += 12 + 8 * n
    weights = tensors[0::2]
    biases = [t.ravel() for t in tensors[1::2]]
    return Mlp(weights=weights, biases=biases, spec=spec)
