"""Feed-forward classifiers with hand-written backprop and SGD."""

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError, SchemaError, TrainingDivergenceError

ACTIVATIONS = ("tanh", "relu")
CHECKPOINT_MAGIC = b"NKDM"
CHECKPOINT_VERSION = 1


@dataclass
class MlpModel:
    layer_dims: list
    weights: list  # per layer, shape (out_dim, in_dim)
    biases: list
    activation: str = "tanh"

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def num_classes(self):
        return self.layer_dims[-1]

    def copy(self):
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class OptimizerState:
    learning_rate: float = 0.1
    step_count: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be positive")


def init_model(layer_dims, seed, activation="tanh"):
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims) or list(layer_dims) != dims:
        raise InvalidConfigError(f"layer_dims needs >= 2 positive integers, got {layer_dims}")
    if activation not in ACTIVATIONS:
        raise InvalidConfigError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases, activation)


def teacher_dims(input_dim, num_classes, hidden=64):
    return [input_dim, hidden, hidden, num_classes]


def student_dims(input_dim, num_classes, hidden=64):
    return [input_dim, max(1, hidden // 2), num_classes]


def _act(name, a):
    return np.tanh(a) if name == "tanh" else np.maximum(a, 0.0)


def _act_grad(name, h):
    # expressed through the activation output h
    return 1.0 - h * h if name == "tanh" else (h > 0).astype(np.float64)


def _check_input(m, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != m.input_dim:
        raise InvalidInputError(f"expected input dim {m.input_dim}, got shape {x.shape}")
    return x


def _forward_cache(m, x):
    acts = [x]
    h = x
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        a = h @ w.T + b
        h = a if i == last else _act(m.activation, a)
        acts.append(h)
    return acts


def forward(m, x):
    """Pre-softmax logits for one input vector or a batch of rows."""
    x = _check_input(m, x)
    single = x.ndim == 1
    out = _forward_cache(m, np.atleast_2d(x))[-1]
    return out[0] if single else out


def gradients(m, x, grad_logits):
    """Mean parameter gradients given per-row loss gradients at the logits.

    Returns a list aligned with ``m.parameters()``.
    """
    x = np.atleast_2d(_check_input(m, x))
    g = np.atleast_2d(np.asarray(grad_logits, dtype=np.float64))
    if g.shape != (x.shape[0], m.num_classes):
        raise InvalidInputError(f"gradient shape {g.shape} does not match batch")
    if not np.all(np.isfinite(g)):
        raise TrainingDivergenceError(
            f"non-finite loss gradient at logits ({int(np.sum(~np.isfinite(g)))} entries)"
        )
    acts = _forward_cache(m, x)
    n = x.shape[0]
    delta = g / n
    grads = [None] * (2 * len(m.weights))
    for i in range(len(m.weights) - 1, -1, -1):
        grads[2 * i] = delta.T @ acts[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ m.weights[i]) * _act_grad(m.activation, acts[i])
    return grads


def backward_and_step(m, x, grad_logits, opt):
    """One SGD step on the mean gradient; updates ``m`` in place and returns it."""
    grads = gradients(m, x, grad_logits)
    with np.errstate(over="ignore", invalid="ignore"):
        for p, g in zip(m.parameters(), grads):
            p -= opt.learning_rate * g
    for p in m.parameters():
        if not np.all(np.isfinite(p)):
            raise TrainingDivergenceError(
                f"parameters became non-finite after step {opt.step_count + 1} "
                f"(lr={opt.learning_rate})"
            )
    opt.step_count += 1
    return m


def param_hash(m):
    h = hashlib.sha256()
    h.update(np.asarray(m.layer_dims, dtype="<i8").tobytes())
    for p in m.parameters():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()


def predict(m, x):
    return np.argmax(forward(m, x), axis=-1)


# -- checkpoint format --------------------------------------------------------
# magic(4) | version u32 | activation u8 | n_dims u32 | dims u32[n] | params f8[...]
# parameters are written layer by layer, weight (row-major) then bias, little-endian.

def dumps_model(m):
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IBI", CHECKPOINT_VERSION, ACTIVATIONS.index(m.activation), len(m.layer_dims)),
        struct.pack(f"<{len(m.layer_dims)}I", *m.layer_dims),
    ]
    for p in m.parameters():
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_model(blob):
    if blob[:4] != CHECKPOINT_MAGIC:
        raise SchemaError("not a model checkpoint (bad magic)")
    version, act, n_dims = struct.unpack_from("<IBI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<IBI")
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, offset))
    offset += 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        size = fan_in * fan_out
        w = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(fan_out, fan_in)
        offset += 8 * size
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(blob):
        raise SchemaError(f"checkpoint has {len(blob) - offset} trailing bytes")
    return MlpModel(dims, weights, biases, ACTIVATIONS[act])


def save_model(m, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(m))


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())
