"""NumPy implementation of the layer language: forward, backward, SGD.

Activations are NHWC float64 arrays. Conv kernels use the (3, 3, C_in, C_out)
layout so parameter counts line up with the architecture table.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.image import ImageBuffer
from ..core.rng import RngState, derive_stream, uniform_array
from .layers import LayerSpec, ModelConfig, ShapeMismatch, validate_config

MAGIC = b"SBLD1"
PROB_FLOOR = 1e-12
# fixed input standardization: approximate per-channel mean and 1/std of rendered
# skin-lesion images; inputs without 3 channels use the mean centre
INPUT_CENTER = (0.84, 0.68, 0.59)
INPUT_SCALE = 10.0


@dataclass
class Model:
    config: ModelConfig
    weights: list
    biases: list
    velocity_w: list = field(default_factory=list)
    velocity_b: list = field(default_factory=list)

    def __post_init__(self):
        if not self.velocity_w:
            self.velocity_w = [None if w is None else np.zeros_like(w) for w in self.weights]
            self.velocity_b = [None if b is None else np.zeros_like(b) for b in self.biases]

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases) if w is not None)

    def parametric_layers(self) -> list[int]:
        return [i for i, w in enumerate(self.weights) if w is not None]


def _param_shapes(config: ModelConfig) -> list:
    rows = validate_config(config)
    shapes = []
    prev = None
    for layer, (out, _) in zip(config.layers, rows):
        if layer.kind == "Conv2D":
            shapes.append(((3, 3, prev[2], layer.units), (layer.units,)))
        elif layer.kind == "Dense":
            shapes.append(((prev[0], layer.units), (layer.units,)))
        else:
            shapes.append(None)
        prev = out
    return shapes


def init_model(config: ModelConfig, seed: int) -> Model:
    """He-uniform weights, zero biases; layer ``i`` draws from stream ``(seed, "i", 0, "init")``."""
    weights, biases = [], []
    for i, shapes in enumerate(_param_shapes(config)):
        if shapes is None:
            weights.append(None)
            biases.append(None)
            continue
        wshape, bshape = shapes
        fan_in = int(np.prod(wshape[:-1]))
        limit = math.sqrt(6.0 / fan_in)
        draws, _ = uniform_array(derive_stream(seed, str(i), 0, "init"), int(np.prod(wshape)), -limit, limit)
        weights.append(draws.reshape(wshape))
        biases.append(np.zeros(bshape))
    return Model(config, weights, biases)


def zero_model(config: ModelConfig) -> Model:
    model = init_model(config, 0)
    model.weights = [None if w is None else np.zeros_like(w) for w in model.weights]
    return model


# -- layer kernels -------------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    # (n, h, w, c, 3, 3) view -> rows ordered (ky, kx, c) to match the kernel layout
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, 9 * c)


def _conv_forward(x, w, b):
    n, h, wd, _ = x.shape
    cols = _im2col(x)
    out = cols @ w.reshape(-1, w.shape[-1]) + b
    return out.reshape(n, h, wd, -1), cols


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    n, h, wd, c = x_shape
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + wd, :] += (d2 @ w[i, j].T).reshape(n, h, wd, c)
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _pool_forward(x):
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, :2 * h2, :2 * w2, :].reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(dout, arg, x_shape):
    n, h, w, c = x_shape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((n, h2, w2, c, 4))
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape)
    dx[:, :2 * h2, :2 * w2, :] = dwin.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
    return dx


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def as_batch(images) -> np.ndarray:
    """Stack ImageBuffers (or pass through an NHWC array) as float64."""
    if isinstance(images, np.ndarray):
        return images.astype(np.float64, copy=False)
    return np.stack([img.data if isinstance(img, ImageBuffer) else np.asarray(img) for img in images])


# -- forward / backward ----------------------------------------------------------

def forward(model: Model, images, mode: str = "eval", rng: RngState | None = None):
    """Class probabilities for a batch, plus the cache needed by :func:`backward`.

    In ``train`` mode dropout masks are drawn from ``rng`` (inverted dropout).
    Inputs are mapped affinely from [0, 1] to [-2, 2].
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_batch(images)
    expected = tuple(model.config.input_shape)
    if x.shape[1:] != expected:
        raise ShapeMismatch(0, f"batch images have shape {x.shape[1:]}, model expects {expected}")
    center = np.asarray(INPUT_CENTER) if x.shape[-1] == len(INPUT_CENTER) else float(np.mean(INPUT_CENTER))
    a = (x - center) * INPUT_SCALE
    cache = []
    for i, layer in enumerate(model.config.layers):
        kind = layer.kind
        if kind == "Input":
            cache.append(None)
        elif kind == "Conv2D":
            z, cols = _conv_forward(a, model.weights[i], model.biases[i])
            cache.append((cols, a.shape, z > 0))
            a = np.maximum(z, 0.0)
        elif kind == "MaxPool2D":
            out, arg = _pool_forward(a)
            cache.append((arg, a.shape))
            a = out
        elif kind == "Flatten":
            cache.append(a.shape)
            a = a.reshape(a.shape[0], -1)
        elif kind == "Dense":
            z = a @ model.weights[i] + model.biases[i]
            if layer.activation == "softmax":
                cache.append((a, None))
                a = softmax(z)
            else:
                cache.append((a, z > 0))
                a = np.maximum(z, 0.0)
        elif kind == "Dropout":
            if mode == "train" and layer.rate > 0:
                if rng is None:
                    raise ValueError("train-mode dropout needs an rng stream")
                u, rng = uniform_array(rng, a.size)
                keep = 1.0 - layer.rate
                mask = (u.reshape(a.shape) < keep) / keep
                a = a * mask
                cache.append(mask)
            else:
                cache.append(None)
    return a, cache


def cross_entropy(probs: np.ndarray, labels) -> float:
    labels = np.asarray(labels, dtype=np.intp)
    p = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def backward(model: Model, probs: np.ndarray, cache: list, labels) -> list:
    """Gradients of mean cross-entropy; a list of (dW, db) or None per layer."""
    labels = np.asarray(labels, dtype=np.intp)
    n = len(labels)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    grads = [None] * len(model.config.layers)
    first = model.parametric_layers()[0] if model.parametric_layers() else -1
    for i in range(len(model.config.layers) - 1, -1, -1):
        layer = model.config.layers[i]
        kind = layer.kind
        entry = cache[i]
        if kind == "Dense":
            a_in, active = entry
            if active is not None:
                grad = grad * active
            grads[i] = (a_in.T @ grad, grad.sum(axis=0))
            grad = grad @ model.weights[i].T
        elif kind == "Dropout":
            if entry is not None:
                grad = grad * entry
        elif kind == "Flatten":
            grad = grad.reshape(entry)
        elif kind == "MaxPool2D":
            arg, shape = entry
            grad = _pool_backward(grad, arg, shape)
        elif kind == "Conv2D":
            cols, shape, active = entry
            grad = grad * active
            # nothing below the first parametric layer needs a gradient
            grad, dw, db = _conv_backward(grad, cols, model.weights[i], shape, need_dx=i > first)
            grads[i] = (dw, db)
    return grads


def sgd_step(model: Model, grads: list, lr: float, momentum: float) -> None:
    """In-place momentum SGD: ``v = momentum*v - lr*g; w = w + v``."""
    for i, g in enumerate(grads):
        if g is None:
            continue
        dw, db = g
        model.velocity_w[i] = momentum * model.velocity_w[i] - lr * dw
        model.velocity_b[i] = momentum * model.velocity_b[i] - lr * db
        model.weights[i] = model.weights[i] + model.velocity_w[i]
        model.biases[i] = model.biases[i] + model.velocity_b[i]


def predict(model: Model, images, batch_size: int = 64) -> np.ndarray:
    """Eval-mode argmax class indices; exact 0.5/0.5 ties go to index 0 (Benign)."""
    x = as_batch(images)
    out = []
    for start in range(0, len(x), batch_size):
        probs, _ = forward(model, x[start:start + batch_size], "eval")
        out.append(np.argmax(probs, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)


# -- gradient check ------------------------------------------------------------------

def _activation_pattern(cache: list) -> list:
    pattern = []
    for entry in cache:
        if isinstance(entry, tuple) and len(entry) == 3:
            pattern.append(entry[2])
        elif isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[0], np.ndarray) and entry[0].dtype.kind == "i":
            pattern.append(entry[0])
        elif isinstance(entry, tuple) and len(entry) == 2 and entry[1] is not None:
            pattern.append(entry[1])
    return pattern


def _same_pattern(p, q) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(p, q))


def grad_check(model: Model, images, labels, n_params: int = 200, eps: float = 1e-5,
               seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Runs with dropout off. Parameters are sampled evenly across parametric
    layers (weights and biases). A probe whose +-eps perturbation flips a
    ReLU gate or max-pool winner sits on a kink where the finite difference is
    not a derivative; such probes are replaced by a fresh draw.
    """
    x = as_batch(images)
    labels = np.asarray(labels, dtype=np.intp)
    probs, cache = forward(model, x, "eval")
    grads = backward(model, probs, cache, labels)
    base = _activation_pattern(cache)

    layers = model.parametric_layers()
    per_layer = math.ceil(n_params / len(layers))
    worst = 0.0
    for li in layers:
        rng = derive_stream(seed, f"gradcheck-{li}", 0, "init")
        checked = 0
        attempts = 0
        while checked < per_layer:
            attempts += 1
            if attempts > 50 * per_layer:
                raise RuntimeError(f"layer {li}: too many probes landed on kinks")
            u, rng = uniform_array(rng, 2)
            tensors = (model.weights[li], model.biases[li])
            # one probe in five goes to a bias
            which = 1 if u[0] < 0.2 else 0
            tensor = tensors[which]
            flat = tensor.reshape(-1)
            k = min(int(u[1] * flat.size), flat.size - 1)
            orig = flat[k]
            flat[k] = orig + eps
            p_plus, c_plus = forward(model, x, "eval")
            flat[k] = orig - eps
            p_minus, c_minus = forward(model, x, "eval")
            flat[k] = orig
            if not (_same_pattern(base, _activation_pattern(c_plus))
                    and _same_pattern(base, _activation_pattern(c_minus))):
                continue
            numeric = (cross_entropy(p_plus, labels) - cross_entropy(p_minus, labels)) / (2 * eps)
            analytic = grads[li][which].reshape(-1)[k]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
            checked += 1
    return worst


# -- serialization -----------------------------------------------------------------

def save_model(model: Model, path: str | os.PathLike) -> None:
    """Flat binary: magic, tensor count, then per tensor (layer, ndim, dims, float64 LE data)."""
    chunks = [MAGIC]
    tensors = []
    for i in model.parametric_layers():
        tensors.append((i, model.weights[i]))
        tensors.append((i, model.biases[i]))
    chunks.append(struct.pack("<I", len(tensors)))
    for i, t in tensors:
        chunks.append(struct.pack("<II", i, t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model(path: str | os.PathLike, config: ModelConfig) -> Model:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a model file (bad magic)")
    model = zero_model(config)
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    seen = {}
    for _ in range(count):
        layer, ndim = struct.unpack_from("<II", blob, pos)
        pos += 8
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape))
        data = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * size
        slot = seen.get(layer, 0)
        seen[layer] = slot + 1
        target = model.weights if slot == 0 else model.biases
        if layer >= len(target) or target[layer] is None or target[layer].shape != data.shape:
            raise ShapeMismatch(layer, f"stored tensor shape {shape} does not fit the config")
        target[layer] = data
    return model
