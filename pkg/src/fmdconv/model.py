"""A tiny configurable CNN: the desk-scale stand-in for a deep backbone.

Three conv blocks (conv -> ReLU -> 2x2 average pool), global average
pooling, and a dense classifier.  Every convolution is the chosen dynamic
variant with shared kernel count, reduction rate and temperature; the
dynamic-convolution math is backbone-agnostic, so this small stack is
enough to exercise it end to end.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .catalogs import tiny_spec
from .counting import ModelSpec
from .layers import VARIANTS, build_layer
from .tensor import (
    ShapeError,
    Tensor,
    avg_pool2x2,
    batch_norm2d,
    dense,
    global_avg_pool,
    kaiming_uniform,
    philox_rng,
    relu,
)

__all__ = ["BatchNorm2d", "TinyCNN", "build_model"]

_WEIGHTS_MAGIC = b"FMDW"
_WEIGHTS_VERSION = 1


class BatchNorm2d:
    """Per-channel batch normalization with running statistics."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x: Tensor, *, training: bool = False) -> Tensor:
        return batch_norm2d(x, self.gamma, self.beta,
                            self.running_mean, self.running_var,
                            training=training, momentum=self.momentum, eps=self.eps)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(prefix + "gamma", self.gamma), (prefix + "beta", self.beta)]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        return [(prefix + "running_mean", self.running_mean),
                (prefix + "running_var", self.running_var)]


class TinyCNN:
    """Small image classifier whose conv blocks share one dynamic variant."""

    def __init__(self, variant: str = "fmdconv", class_count: int = 4, *,
                 in_channels: int = 1, channels: tuple[int, int, int] = (16, 32, 32),
                 kernels: int = 4, reduction: float = 0.1, dropout_rate: float = 0.1,
                 seed: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        if class_count < 2:
            raise ValueError(f"need at least 2 classes, got {class_count}")
        self.variant = variant
        self.class_count = class_count
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.kernels = kernels if variant != "static" else 1
        self.reduction = reduction
        self.dropout_rate = dropout_rate
        self.seed = seed
        self.temperature = 1.0

        rng = philox_rng(seed)
        self.blocks = []
        self.norms = []
        c_prev = in_channels
        for c_next in self.channels:
            cfg = {"variant": variant, "c_in": c_prev, "c_out": c_next,
                   "kernel_size": 3, "stride": 1, "padding": 1, "groups": 1,
                   "kernels": self.kernels, "reduction": reduction, "bias": True}
            self.blocks.append(build_layer(cfg, rng=rng, dropout_rate=dropout_rate))
            self.norms.append(BatchNorm2d(c_next))
            c_prev = c_next
        self.fc_w = Tensor(kaiming_uniform(rng, (class_count, c_prev), fan_in=c_prev),
                           requires_grad=True)
        self.fc_b = Tensor(np.zeros(class_count), requires_grad=True)

    def forward(self, x, *, training: bool = False, rng=None) -> Tensor:
        """Logits [N, class_count] for a [N, C, H, W] batch (H, W divisible by 8)."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.data.ndim != 4:
            raise ShapeError(f"model input must be [N, C, H, W], got ndim={x.data.ndim}")
        if x.data.shape[2] % 8 or x.data.shape[3] % 8:
            raise ShapeError(
                f"spatial dims must be divisible by 8 (three 2x2 pools), "
                f"got {x.data.shape[2]}x{x.data.shape[3]}"
            )
        h = x
        for layer, norm in zip(self.blocks, self.norms):
            h = layer.forward(h, self.temperature, training=training, rng=rng)
            h = avg_pool2x2(relu(norm.forward(h, training=training)))
        return dense(global_avg_pool(h), self.fc_w, self.fc_b)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, (layer, norm) in enumerate(zip(self.blocks, self.norms)):
            named += layer.named_parameters(f"block{i}.")
            named += norm.named_parameters(f"block{i}.bn.")
        named += [("fc_w", self.fc_w), ("fc_b", self.fc_b)]
        return named

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        named = []
        for i, norm in enumerate(self.norms):
            named += norm.named_buffers(f"block{i}.bn.")
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def spec(self, input_hw: tuple[int, int] = (16, 16)) -> ModelSpec:
        """Counting catalog matching this model's construction exactly."""
        return tiny_spec(variant=self.variant, kernels=self.kernels,
                         reduction=self.reduction, classes=self.class_count,
                         in_channels=self.in_channels, channels=self.channels,
                         input_hw=input_hw)

    def arch_config(self) -> dict:
        return {
            "variant": self.variant,
            "class_count": self.class_count,
            "in_channels": self.in_channels,
            "channels": list(self.channels),
            "kernels": self.kernels,
            "reduction": self.reduction,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }

    def save(self, path) -> None:
        """Dump architecture plus weights: magic, version, JSON header, raw float64."""
        manifest = {
            "arch": self.arch_config(),
            "params": [{"name": n, "shape": list(t.data.shape)}
                       for n, t in self.named_parameters()],
        }
        blob = json.dumps(manifest).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_WEIGHTS_MAGIC)
            fh.write(struct.pack("<II", _WEIGHTS_VERSION, len(blob)))
            fh.write(blob)
            for _, t in self.named_parameters():
                fh.write(t.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "TinyCNN":
        with open(path, "rb") as fh:
            if fh.read(4) != _WEIGHTS_MAGIC:
                raise ValueError(f"{path}: not a model weights file")
            version, blob_len = struct.unpack("<II", fh.read(8))
            if version != _WEIGHTS_VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            manifest = json.loads(fh.read(blob_len).decode("utf-8"))
            arch = manifest["arch"]
            model = cls(arch["variant"], arch["class_count"],
                        in_channels=arch["in_channels"],
                        channels=tuple(arch["channels"]), kernels=arch["kernels"],
                        reduction=arch["reduction"],
                        dropout_rate=arch["dropout_rate"], seed=arch["seed"])
            named = model.named_parameters()
            if [p["name"] for p in manifest["params"]] != [n for n, _ in named]:
                raise ValueError(f"{path}: parameter manifest does not match architecture")
            for entry, (_, t) in zip(manifest["params"], named):
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = np.frombuffer(fh.read(count * 8), dtype="<f8")
                if raw.size != count:
                    raise ValueError(f"{path}: truncated weights for {entry['name']}")
                t.data = raw.reshape(shape).astype(np.float64).copy()
        return model


def build_model(variant: str, kernels: int = 4, reduction: float = 0.1,
                class_count: int = 4, **kwargs) -> TinyCNN:
    """Convenience constructor used by the harness and the CLI."""
    return TinyCNN(variant, class_count, kernels=kernels, reduction=reduction, **kwargs)
