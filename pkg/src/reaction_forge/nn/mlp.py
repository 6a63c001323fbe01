"""Plain fully connected networks over the autodiff tape.

Parameters live in numpy arrays inside :class:`MlpParams`; training wraps them
in tape tensors per step, inference uses the numpy fast path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reaction_forge.errors import ContractError, InputShapeError
from reaction_forge.nn.tensor import Tensor, as_tensor, parameter

_HIDDEN_ACTS = ("tanh", "relu")
_OUTPUT_ACTS = ("identity", "tanh")


@dataclass
class MlpParams:
    """Weights of a fully connected net.

    layer_sizes is [in, h1, ..., out]; activations has one entry per hidden
    layer; output_activation applies to the last affine layer.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    activations: list[str]
    output_activation: str = "identity"

    def __post_init__(self):
        n_layers = len(self.layer_sizes) - 1
        if n_layers < 1:
            raise ContractError("an MLP needs at least one affine layer")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ContractError("weights/biases do not match layer_sizes")
        if len(self.activations) != max(n_layers - 1, 0):
            raise ContractError("need one activation per hidden layer")
        for act in self.activations:
            if act not in _HIDDEN_ACTS:
                raise ContractError(f"unknown hidden activation {act!r}")
        if self.output_activation not in _OUTPUT_ACTS:
            raise ContractError(f"unknown output activation {self.output_activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != want or b.shape != (want[1],):
                raise InputShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}, want {want}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.output_activation,
        )

    def tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


def mlp_init(
    layer_sizes: list[int],
    rng: np.random.Generator,
    activation: str = "tanh",
    output_activation: str = "identity",
    final_scale: float = 1.0,
) -> MlpParams:
    """Xavier-uniform init. ``final_scale`` shrinks the last layer (0 is valid)."""
    weights, biases = [], []
    n_layers = len(layer_sizes) - 1
    for i in range(n_layers):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        if i == n_layers - 1:
            w *= final_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    acts = [activation] * (n_layers - 1)
    return MlpParams(list(layer_sizes), weights, biases, acts, output_activation)


def _apply_act(x: np.ndarray, act: str) -> np.ndarray:
    return np.tanh(x) if act == "tanh" else np.maximum(x, 0.0)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Numpy inference path. Accepts (in,) or (N, in); mirrors the input rank."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != params.in_dim:
        raise InputShapeError(f"mlp_forward: input {x.shape}, expected (*, {params.in_dim})")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = _apply_act(h, params.activations[i])
    if params.output_activation == "tanh":
        h = np.tanh(h)
    return h[0] if single else h


class MlpTape:
    """Tape-mode view of an MLP: parameter tensors plus a forward builder.

    ``trainable=False`` wraps the weights as constants, which is how frozen
    encoders participate in a loss without collecting gradients.
    """

    def __init__(self, params: MlpParams, trainable: bool = True):
        self.params = params
        wrap = parameter if trainable else lambda a: as_tensor(a)
        self.w = [wrap(w) for w in params.weights]
        self.b = [wrap(b) for b in params.biases]
        self.trainable = trainable

    def __call__(self, x: Tensor) -> Tensor:
        h = as_tensor(x)
        if h.data.ndim != 2 or h.data.shape[1] != self.params.in_dim:
            raise InputShapeError(
                f"mlp tape: input {h.data.shape}, expected (*, {self.params.in_dim})"
            )
        last = len(self.w) - 1
        for i, (w, b) in enumerate(zip(self.w, self.b)):
            h = h @ w + b
            if i < last:
                h = h.tanh() if self.params.activations[i] == "tanh" else h.relu()
        if self.params.output_activation == "tanh":
            h = h.tanh()
        return h

    def grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Collected gradients after a backward pass, keyed like tensors()."""
        out: dict[str, np.ndarray] = {}
        for i, (w, b) in enumerate(zip(self.w, self.b)):
            out[f"{prefix}w{i}"] = w.grad if w.grad is not None else np.zeros_like(w.data)
            out[f"{prefix}b{i}"] = b.grad if b.grad is not None else np.zeros_like(b.data)
        return out
