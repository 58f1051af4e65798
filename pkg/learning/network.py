"""
Numpy multilayer perceptron behind every value head.

Parameters are plain lists of arrays so they copy, pickle and checkpoint
cheaply. Updates never mutate their inputs; they return new parameter sets
and callers swap references.
"""

import logging
from dataclasses import dataclass

import numpy as np

from learning.exceptions import ShapeMismatch

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = 128
HIDDEN_LAYERS = 5
DEFAULT_GRAD_CLIP = 10.0


def layer_sizes(n_inputs: int, hidden: int = DEFAULT_HIDDEN, n_outputs: int = 1) -> list[int]:
    """Six affine layers: n_inputs -> hidden x 5 -> n_outputs."""
    return [n_inputs] + [hidden] * HIDDEN_LAYERS + [n_outputs]


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ShapeMismatch(
                f"{len(self.weights)} weight matrices but {len(self.biases)} bias vectors"
            )
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"Layer {i}: weight {w.shape} and bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(
                    f"Layer {i} expects {w.shape[0]} inputs, "
                    f"layer {i - 1} gives {self.weights[i - 1].shape[1]}"
                )

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved, layer by layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        arrays = list(arrays)
        return cls(weights=arrays[0::2], biases=arrays[1::2])

    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays()]

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays(a.copy() for a in self.arrays())

    @classmethod
    def zeros(cls, sizes) -> "MlpParams":
        return cls(
            weights=[np.zeros((m, n)) for m, n in zip(sizes[:-1], sizes[1:])],
            biases=[np.zeros(n) for n in sizes[1:]],
        )


def init_mlp(sizes, rng) -> MlpParams:
    """Uniform fan-in initialization: every layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights=weights, biases=biases)


def _check_same_shapes(a: MlpParams, b: MlpParams, what: str):
    if a.shapes() != b.shapes():
        raise ShapeMismatch(f"{what}: {a.shapes()} vs {b.shapes()}")


def _forward_cache(params: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    # acts[0] is the input, acts[i] the output of layer i (ReLU except the last)
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(params: MlpParams, x) -> np.ndarray:
    """
    Evaluate the network.

    Args:
        x: one input vector (d,) or a batch (M, d)

    Returns:
        (n_outputs,) for a single vector, (M, n_outputs) for a batch
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.sizes[0]:
        raise ShapeMismatch(f"Input width {x.shape[-1]}, network expects {params.sizes[0]}")
    out = _forward_cache(params, np.atleast_2d(x))[-1]
    return out[0] if x.ndim == 1 else out


def q_values(params: MlpParams, features) -> np.ndarray:
    """Scalar output per row of a (M, d) feature matrix."""
    return forward(params, np.atleast_2d(features))[:, 0]


def _backprop(params: MlpParams, acts: list[np.ndarray], dout: np.ndarray) -> MlpParams:
    n_layers = len(params.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    delta = dout
    for i in reversed(range(n_layers)):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return MlpParams(weights=grad_w, biases=grad_b)


def backward(params: MlpParams, batch) -> tuple[MlpParams, float]:
    """
    Gradient of the mean squared error between summed outputs and targets.

    Each sample is a set of feature rows (one per PM) sharing the same
    parameters; its prediction is the sum of the rows' scalar outputs.

    Args:
        batch: list of (features, target) with features of shape (n_i, d)

    Returns:
        (gradients, loss)
    """
    if not batch:
        raise ValueError("Empty batch")
    if params.sizes[-1] != 1:
        raise ShapeMismatch(f"Summed loss needs a scalar head, got {params.sizes[-1]} outputs")
    features = [np.atleast_2d(np.asarray(f, dtype=float)) for f, _ in batch]
    counts = [len(f) for f in features]
    if min(counts) == 0:
        raise ValueError("Every sample needs at least one feature row")

    x = np.concatenate(features)
    segments = np.repeat(np.arange(len(batch)), counts)
    targets = np.array([float(target) for _, target in batch])

    acts = _forward_cache(params, x)
    predictions = np.bincount(segments, weights=acts[-1][:, 0], minlength=len(batch))
    errors = predictions - targets
    loss = float(np.mean(errors**2))
    dout = (2.0 * errors / len(batch))[segments][:, None]
    return _backprop(params, acts, dout), loss


def backward_selected(params: MlpParams, inputs, outputs, targets) -> tuple[MlpParams, float]:
    """
    Gradient of the mean squared error on one selected output per sample.

    Used by the flat network, whose head has one output per action.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    outputs = np.asarray(outputs, dtype=int)
    targets = np.asarray(targets, dtype=float)
    if not len(inputs):
        raise ValueError("Empty batch")
    rows = np.arange(len(inputs))

    acts = _forward_cache(params, inputs)
    errors = acts[-1][rows, outputs] - targets
    loss = float(np.mean(errors**2))
    dout = np.zeros_like(acts[-1])
    dout[rows, outputs] = 2.0 * errors / len(inputs)
    return _backprop(params, acts, dout), loss


def global_norm(grads: MlpParams) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.arrays())))


def clip_by_global_norm(grads: MlpParams, max_norm: float | None) -> MlpParams:
    """Rescale gradients so their global L2 norm is at most max_norm."""
    if not max_norm or max_norm <= 0:
        return grads
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    logger.debug(f"Clipping gradient norm {norm:.3f} to {max_norm}")
    scale = max_norm / norm
    return MlpParams.from_arrays(g * scale for g in grads.arrays())


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: MlpParams, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            m=MlpParams.zeros(params.sizes),
            v=MlpParams.zeros(params.sizes),
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params: MlpParams, grads: MlpParams, opt: AdamState) -> tuple[MlpParams, AdamState]:
    """
    One Adam update with bias correction.

    Raises:
        ShapeMismatch: gradients or moments do not match the parameters
    """
    _check_same_shapes(params, grads, "gradients")
    _check_same_shapes(params, opt.m, "first moments")
    _check_same_shapes(params, opt.v, "second moments")

    step = opt.step + 1
    m_correction = 1.0 - opt.beta1**step
    v_correction = 1.0 - opt.beta2**step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), opt.m.arrays(), opt.v.arrays()):
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        m_hat = m / m_correction
        v_hat = v / v_correction
        new_params.append(p - opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps))
        new_m.append(m)
        new_v.append(v)

    new_opt = AdamState(
        m=MlpParams.from_arrays(new_m),
        v=MlpParams.from_arrays(new_v),
        step=step,
        lr=opt.lr,
        beta1=opt.beta1,
        beta2=opt.beta2,
        eps=opt.eps,
    )
    return MlpParams.from_arrays(new_params), new_opt


def soft_update(online: MlpParams, target: MlpParams, tau: float) -> MlpParams:
    """New target parameters tau * online + (1 - tau) * target."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    _check_same_shapes(online, target, "soft update")
    return MlpParams.from_arrays(
        tau * o + (1.0 - tau) * t for o, t in zip(online.arrays(), target.arrays())
    )


@dataclass
class Learner:
    """Online network, target network and optimizer state of one trainer."""

    online: MlpParams
    target: MlpParams
    opt: AdamState

    @classmethod
    def create(cls, params: MlpParams, lr: float = 5e-4) -> "Learner":
        return cls(online=params, target=params.copy(), opt=AdamState.create(params, lr=lr))

    @property
    def sizes(self) -> list[int]:
        return self.online.sizes
