"""
Dense network core.

Layers keep weights as [in, out] and bias as [out]; every array is float64.
A batch gradient is the mean over the examples of the batch, so the learning
rate does not depend on the batch size.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from scipy.special import softmax as _softmax

from selshare.core.exceptions import ConfigurationError, InputError, NumericError, UsageError
from selshare.models.enums import Activation, LossKind, OptimizerKind

LOG_CLIP = 1e-12


def as_tensor(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def check_finite(tensor: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(tensor)):
        raise NumericError(f"non-finite values in {what}")
    return tensor


# ============================================
# LAYERS
# ============================================

@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.RELU

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ConfigurationError(
                f"dense layer needs weights [in, out] and bias [out], got {self.weights.shape} / {self.bias.shape}"
            )

    @classmethod
    def initialize(cls, in_dim: int, out_dim: int, activation: Activation,
                   rng: np.random.Generator) -> "DenseLayer":
        """Uniform in ±sqrt(6 / (in + out)), zero bias"""
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        weights = rng.uniform(-limit, limit, size=(in_dim, out_dim))
        return cls(weights, np.zeros(out_dim), activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size

    def clone(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class LayerCache:
    inputs: np.ndarray  # a_i feeding the layer
    pre: np.ndarray     # z = a W + b
    out: np.ndarray     # g(z)


def activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    if activation == Activation.SIGMOID:
        return expit(z)
    if activation == Activation.SOFTMAX:
        # scipy subtracts the row max before exponentiating
        return _softmax(z, axis=1)
    return z


def activation_backward(grad_out: np.ndarray, cache: LayerCache, activation: Activation) -> np.ndarray:
    """dL/dz from dL/da"""
    if activation == Activation.RELU:
        return grad_out * (cache.pre > 0.0)
    if activation == Activation.SIGMOID:
        return grad_out * cache.out * (1.0 - cache.out)
    if activation == Activation.SOFTMAX:
        s = cache.out
        return s * (grad_out - np.sum(grad_out * s, axis=1, keepdims=True))
    return grad_out


def forward(layers: Sequence[DenseLayer], inputs) -> Tuple[np.ndarray, List[LayerCache]]:
    a = as_tensor(inputs)
    if a.ndim != 2:
        raise ConfigurationError(f"input must be [batch, features], got shape {a.shape}")
    caches: List[LayerCache] = []
    for index, layer in enumerate(layers):
        if a.shape[1] != layer.in_dim:
            raise ConfigurationError(
                f"layer {index} expects {layer.in_dim} inputs, got {a.shape[1]}"
            )
        z = a @ layer.weights + layer.bias
        out = activate(z, layer.activation)
        caches.append(LayerCache(a, z, out))
        a = out
    check_finite(a, "network output")
    return a, caches


# ============================================
# LOSSES
# ============================================

def _as_batch(values) -> np.ndarray:
    t = as_tensor(values)
    if t.ndim == 0:
        return t.reshape(1, 1)
    if t.ndim == 1:
        return t.reshape(1, -1)
    return t


def _check_pair(prediction: np.ndarray, target: np.ndarray, kind: LossKind):
    if prediction.shape != target.shape:
        raise ConfigurationError(
            f"{kind.value}: prediction {prediction.shape} and target {target.shape} differ"
        )


def _check_categorical(target: np.ndarray):
    if np.any(target < 0) or not np.allclose(target.sum(axis=1), 1.0, atol=1e-9):
        raise InputError("categorical target rows must be one-hot or row-stochastic")


def ranking_pairs(target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pairs (2i, 2i+1) of a batch, ordered so that the first index holds the
    larger attribute. Tied pairs carry no ordering and are skipped.
    """
    values = target[:, 0]
    n_pairs = len(values) // 2
    left = np.arange(n_pairs) * 2
    right = left + 1
    diff = values[left] - values[right]
    keep = diff != 0
    hi = np.where(diff > 0, left, right)[keep]
    lo = np.where(diff > 0, right, left)[keep]
    return hi, lo


def ranking_pair_loss(score_i: float, score_j: float) -> float:
    """max(0, 1 - (f(x_i) - f(x_j)))^2 for x_i ranked above x_j"""
    return float(max(0.0, 1.0 - (score_i - score_j)) ** 2)


def loss_eval(kind: LossKind, prediction, target) -> float:
    kind = LossKind(kind)
    p, y = _as_batch(prediction), _as_batch(target)
    _check_pair(p, y, kind)
    batch = p.shape[0]
    if kind == LossKind.MSE:
        return float(0.5 * np.sum((p - y) ** 2) / batch)
    if kind == LossKind.BINARY_CROSS_ENTROPY:
        pc = np.clip(p, LOG_CLIP, 1.0 - LOG_CLIP)
        return float(-np.sum(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)) / batch)
    if kind == LossKind.CATEGORICAL_CROSS_ENTROPY:
        _check_categorical(y)
        return float(-np.sum(y * np.log(np.clip(p, LOG_CLIP, 1.0))) / batch)
    hi, lo = ranking_pairs(y)
    if len(hi) == 0:
        return 0.0
    margins = np.maximum(0.0, 1.0 - (p[hi, 0] - p[lo, 0]))
    return float(np.mean(margins ** 2))


def loss_grad(kind: LossKind, prediction, target) -> np.ndarray:
    """dL/dprediction for the batch-mean loss"""
    kind = LossKind(kind)
    p, y = _as_batch(prediction), _as_batch(target)
    _check_pair(p, y, kind)
    batch = p.shape[0]
    if kind == LossKind.MSE:
        return (p - y) / batch
    if kind == LossKind.BINARY_CROSS_ENTROPY:
        pc = np.clip(p, LOG_CLIP, 1.0 - LOG_CLIP)
        return (pc - y) / (pc * (1.0 - pc)) / batch
    if kind == LossKind.CATEGORICAL_CROSS_ENTROPY:
        _check_categorical(y)
        return -y / np.clip(p, LOG_CLIP, 1.0) / batch
    grad = np.zeros_like(p)
    hi, lo = ranking_pairs(y)
    if len(hi):
        margins = np.maximum(0.0, 1.0 - (p[hi, 0] - p[lo, 0]))
        np.add.at(grad[:, 0], hi, -2.0 * margins / len(hi))
        np.add.at(grad[:, 0], lo, 2.0 * margins / len(hi))
    return grad


def output_delta(kind: LossKind, cache: LayerCache, activation: Activation, target) -> np.ndarray:
    """dL/dz of an output layer; sigmoid+BCE and softmax+CCE use the fused form"""
    kind = LossKind(kind)
    y = _as_batch(target)
    p = cache.out
    _check_pair(p, y, kind)
    if (activation == Activation.SIGMOID and kind == LossKind.BINARY_CROSS_ENTROPY) or (
        activation == Activation.SOFTMAX and kind == LossKind.CATEGORICAL_CROSS_ENTROPY
    ):
        if kind == LossKind.CATEGORICAL_CROSS_ENTROPY:
            _check_categorical(y)
        return (p - y) / p.shape[0]
    return activation_backward(loss_grad(kind, p, y), cache, activation)


# ============================================
# BACKPROPAGATION
# ============================================

@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    # dL/dz per layer (the delta_j of each layer)
    deltas: List[np.ndarray]
    # dL/d(input of the first layer)
    input_grad: np.ndarray


def backprop(layers: Sequence[DenseLayer], caches: Sequence[LayerCache], delta: np.ndarray) -> Gradients:
    """Propagate dL/dz of the last layer down to the first layer's input"""
    if caches is None or len(caches) != len(layers):
        raise UsageError("backward needs the caches of a forward pass over the same layers")
    n = len(layers)
    if n == 0:
        raise UsageError("nothing to backpropagate through")
    weights: List[Optional[np.ndarray]] = [None] * n
    biases: List[Optional[np.ndarray]] = [None] * n
    deltas: List[Optional[np.ndarray]] = [None] * n
    for index in range(n - 1, -1, -1):
        cache = caches[index]
        deltas[index] = delta
        weights[index] = cache.inputs.T @ delta
        biases[index] = delta.sum(axis=0)
        grad_in = delta @ layers[index].weights.T
        if index > 0:
            delta = activation_backward(grad_in, caches[index - 1], layers[index - 1].activation)
    return Gradients(weights, biases, deltas, grad_in)


def backward_from_output(layers: Sequence[DenseLayer], caches: Sequence[LayerCache],
                         grad_output: np.ndarray) -> Gradients:
    """Backprop when the upstream signal is dL/d(output activation)"""
    if not caches:
        raise UsageError("backward needs the caches of a forward pass")
    delta = activation_backward(grad_output, caches[-1], layers[-1].activation)
    return backprop(layers, caches, delta)


def backward(layers: Sequence[DenseLayer], caches: Sequence[LayerCache], kind: LossKind, target) -> Gradients:
    if not caches or len(caches) != len(layers):
        raise UsageError("backward called without a matching forward pass")
    delta = output_delta(kind, caches[-1], layers[-1].activation, target)
    return backprop(layers, caches, delta)


# ============================================
# OPTIMIZERS
# ============================================

class OptimizerState:
    """
    SGD with momentum (v <- mu v + g; p <- p - lr v) or bias-corrected Adam.
    Buffers are keyed by parameter name and zero-initialized on first use.
    """

    def __init__(self, kind: OptimizerKind = OptimizerKind.SGD_MOMENTUM, learning_rate: float = 0.02,
                 momentum: float = 0.5, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.kind = OptimizerKind(kind)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.first: Dict[str, np.ndarray] = {}
        self.second: Dict[str, np.ndarray] = {}
        self.steps: Dict[str, int] = {}

    @classmethod
    def from_config(cls, config) -> "OptimizerState":
        return cls(config.kind, config.learning_rate, config.momentum,
                   config.beta1, config.beta2, config.epsilon)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        """Update every parameter in place"""
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            if grad.shape != param.shape:
                raise ConfigurationError(f"gradient for {name} has shape {grad.shape}, parameter {param.shape}")
            if self.kind == OptimizerKind.SGD_MOMENTUM:
                velocity = self.first.setdefault(name, np.zeros_like(param))
                velocity *= self.momentum
                velocity += grad
                param -= self.learning_rate * velocity
            else:
                m = self.first.setdefault(name, np.zeros_like(param))
                v = self.second.setdefault(name, np.zeros_like(param))
                t = self.steps.get(name, 0) + 1
                self.steps[name] = t
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                m_hat = m / (1.0 - self.beta1 ** t)
                v_hat = v / (1.0 - self.beta2 ** t)
                param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def drop(self, prefix: str) -> int:
        """Forget the buffers of every parameter under `prefix`"""
        names = [n for n in set(self.first) | set(self.second) | set(self.steps) if n.startswith(prefix)]
        for name in names:
            self.first.pop(name, None)
            self.second.pop(name, None)
            self.steps.pop(name, None)
        return len(names)


def optimizer_step(state: OptimizerState, params: Dict[str, np.ndarray],
                   grads: Dict[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    state.step(params, grads)
    return params, state
