"""Declarative layer specs, shape propagation and parameter accounting."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

KINDS = ("Input", "Conv2D", "MaxPool2D", "Flatten", "Dense", "Dropout")


class ShapeMismatch(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"layer {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0            # Conv2D out channels or Dense units
    activation: str = "relu"  # Dense only: relu | softmax
    rate: float = 0.0         # Dropout only
    shape: tuple = ()         # Input only: (H, W, C)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in ("Conv2D", "Dense") and self.units < 1:
            raise ValueError(f"{self.kind} needs units >= 1")
        if self.kind == "Dense" and self.activation not in ("relu", "softmax"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "Dropout" and not 0 <= self.rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        if self.kind == "Input" and (len(self.shape) != 3 or min(self.shape) < 1):
            raise ValueError("Input needs a positive (H, W, C) shape")

    @property
    def has_params(self) -> bool:
        return self.kind in ("Conv2D", "Dense")

    def to_dict(self) -> dict:
        if self.kind == "Input":
            return {"kind": "Input", "shape": list(self.shape)}
        if self.kind == "Conv2D":
            return {"kind": "Conv2D", "units": self.units}
        if self.kind == "Dense":
            return {"kind": "Dense", "units": self.units, "activation": self.activation}
        if self.kind == "Dropout":
            return {"kind": "Dropout", "rate": self.rate}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, doc: dict) -> "LayerSpec":
        doc = dict(doc)
        if "shape" in doc:
            doc["shape"] = tuple(doc["shape"])
        return cls(**doc)


def Input(h: int, w: int, c: int = 3) -> LayerSpec:
    return LayerSpec("Input", shape=(h, w, c))


def Conv2D(out_channels: int) -> LayerSpec:
    return LayerSpec("Conv2D", units=out_channels)


def MaxPool2D() -> LayerSpec:
    return LayerSpec("MaxPool2D")


def Flatten() -> LayerSpec:
    return LayerSpec("Flatten")


def Dense(units: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec("Dense", units=units, activation=activation)


def Dropout(rate: float) -> LayerSpec:
    return LayerSpec("Dropout", rate=rate)


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def to_dict(self) -> dict:
        return {"layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls([LayerSpec.from_dict(d) for d in doc["layers"]])

    @property
    def input_shape(self) -> tuple:
        return self.layers[0].shape


def output_shape(layer: LayerSpec, input_shape: tuple | None, index: int = 0) -> tuple:
    kind = layer.kind
    if kind == "Input":
        if input_shape is not None:
            raise ShapeMismatch(index, "Input must be the first layer")
        return tuple(layer.shape)
    if input_shape is None:
        raise ShapeMismatch(index, "first layer must be Input")
    if kind == "Conv2D":
        if len(input_shape) != 3:
            raise ShapeMismatch(index, f"Conv2D needs an (H, W, C) input, got {input_shape}")
        return (input_shape[0], input_shape[1], layer.units)
    if kind == "MaxPool2D":
        if len(input_shape) != 3 or input_shape[0] < 2 or input_shape[1] < 2:
            raise ShapeMismatch(index, f"MaxPool2D needs an (H>=2, W>=2, C) input, got {input_shape}")
        return (input_shape[0] // 2, input_shape[1] // 2, input_shape[2])
    if kind == "Flatten":
        if len(input_shape) != 3:
            raise ShapeMismatch(index, f"Flatten needs an (H, W, C) input, got {input_shape}")
        return (input_shape[0] * input_shape[1] * input_shape[2],)
    if kind == "Dense":
        if len(input_shape) != 1:
            raise ShapeMismatch(index, f"Dense needs a flat input (add Flatten first), got {input_shape}")
        return (layer.units,)
    return tuple(input_shape)  # Dropout


def param_count(layer: LayerSpec, input_shape: tuple | None, index: int = 0) -> int:
    output_shape(layer, input_shape, index)
    if layer.kind == "Conv2D":
        return 3 * 3 * input_shape[2] * layer.units + layer.units
    if layer.kind == "Dense":
        return input_shape[0] * layer.units + layer.units
    return 0


def validate_config(config: ModelConfig) -> list[tuple[tuple, int]]:
    """Propagate shapes through ``config``; one (output shape, parameter count) row per layer."""
    layers = config.layers
    if not layers:
        raise ShapeMismatch(0, "empty model")
    rows = []
    shape = None
    for i, layer in enumerate(layers):
        count = param_count(layer, shape, i)
        shape = output_shape(layer, shape, i)
        rows.append((shape, count))
    softmax = [i for i, l in enumerate(layers) if l.kind == "Dense" and l.activation == "softmax"]
    if softmax != [len(layers) - 1]:
        raise ShapeMismatch(softmax[0] if softmax else len(layers) - 1,
                            "exactly one softmax Dense is required and it must be the last layer")
    return rows


def total_params(config: ModelConfig) -> int:
    return sum(count for _, count in validate_config(config))


def _vgg_block(channels: int, convs: int) -> list:
    return [Conv2D(channels) for _ in range(convs)] + [MaxPool2D()]


VGG19_TABLE_III = ModelConfig(
    [Input(224, 224, 3)]
    + _vgg_block(64, 2) + _vgg_block(128, 2) + _vgg_block(256, 4) + _vgg_block(512, 4) + _vgg_block(512, 4)
    + [Flatten(), Dense(256), Dropout(0.5), Dense(128), Dropout(0.5), Dense(64), Dropout(0.5),
       Dense(2, "softmax")]
)

MICRO_DEFAULT = ModelConfig(
    [Input(64, 64, 3), Conv2D(8), Conv2D(8), MaxPool2D(), Conv2D(16), Conv2D(16), MaxPool2D(),
     Flatten(), Dense(64), Dropout(0.5), Dense(32), Dropout(0.5), Dense(2, "softmax")]
)

MODEL_PRESETS = {"vgg19": VGG19_TABLE_III, "micro": MICRO_DEFAULT}

# reference VGG19 rows: (layer name, output shape, parameters)
TABLE_III_ROWS = [
    ("Input", (224, 224, 3), 0),
    ("Conv2D", (224, 224, 64), 1792),
    ("Conv2D", (224, 224, 64), 36928),
    ("MaxPooling2D", (112, 112, 64), 0),
    ("Conv2D", (112, 112, 128), 73856),
    ("Conv2D", (112, 112, 128), 147584),
    ("MaxPooling2D", (56, 56, 128), 0),
    ("Conv2D", (56, 56, 256), 295168),
    ("Conv2D", (56, 56, 256), 590080),
    ("Conv2D", (56, 56, 256), 590080),
    ("Conv2D", (56, 56, 256), 590080),
    ("MaxPooling2D", (28, 28, 256), 0),
    ("Conv2D", (28, 28, 512), 1180160),
    ("Conv2D", (28, 28, 512), 2359808),
    ("Conv2D", (28, 28, 512), 2359808),
    ("Conv2D", (28, 28, 512), 2359808),
    ("MaxPooling2D", (14, 14, 512), 0),
    ("Conv2D", (14, 14, 512), 2359808),
    ("Conv2D", (14, 14, 512), 2359808),
    ("Conv2D", (14, 14, 512), 2359808),
    ("Conv2D", (14, 14, 512), 2359808),
    ("MaxPooling2D", (7, 7, 512), 0),
    ("Flatten", (25088,), 0),
    ("Dense (ReLU)", (256,), 6422784),
    ("Dropout", (256,), 0),
    ("Dense (ReLU)", (128,), 32896),
    ("Dropout", (128,), 0),
    ("Dense (ReLU)", (64,), 8256),
    ("Dropout", (64,), 0),
    ("Dense (SoftMax)", (2,), 130),
]


def load_model_config(spec: str | os.PathLike) -> ModelConfig:
    if str(spec) in MODEL_PRESETS:
        return MODEL_PRESETS[str(spec)]
    return ModelConfig.from_dict(json.loads(Path(spec).read_text()))
