"""Exact parameter and FLOP accounting for convolution stacks.

Counting conventions (also stated in the README):

* one multiply-accumulate = 2 FLOPs; bias adds and activation evaluations
  are not counted;
* FLOPs are per input sample;
* a dynamic layer adds, on top of the base convolution, its attention heads
  (one global average pool per layer, shared, plus the FC stacks), the
  per-sample kernel aggregation 2*K*C_out*(C_in/g)*k^2, and for the variants
  that gate the feature maps the elementwise attention multiplies;
* the four-attention variant additionally pays its spatial branch and the
  per-element scaling of every bank kernel by its three factor fields
  (3*K*C_out*C_in*k^2 multiplies).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .attention import hidden_width

__all__ = [
    "SpecError",
    "LayerSpec",
    "ModelSpec",
    "count_params",
    "count_flops",
    "layer_params",
    "layer_flops",
    "dynamic_overhead_flops",
    "per_kernel_params",
]

_VARIANTS = ("static", "condconv", "dynamicconv", "odconv", "fmdconv")


class SpecError(ValueError):
    """A layer or model description is internally inconsistent."""


@dataclass(frozen=True)
class LayerSpec:
    """Shape description of one convolution layer, enough to count it."""

    variant: str
    c_in: int
    c_out: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    kernels: int = 1
    reduction: float = 0.0625
    bias: bool = True
    input_hw: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}")
        if min(self.c_in, self.c_out, self.kernel_size, self.kernels,
               self.stride, self.groups) < 1 or self.padding < 0:
            raise SpecError(f"non-positive dimension in {self}")
        if self.c_in % self.groups or self.c_out % self.groups:
            raise SpecError(
                f"groups={self.groups} must divide c_in={self.c_in} and c_out={self.c_out}"
            )
        h, w = self.input_hw
        if self.kernel_size > h + 2 * self.padding or self.kernel_size > w + 2 * self.padding:
            raise SpecError(
                f"kernel {self.kernel_size} exceeds padded input {self.input_hw} "
                f"(+2*{self.padding})"
            )

    @property
    def out_hw(self) -> tuple[int, int]:
        h, w = self.input_hw
        k, s, p = self.kernel_size, self.stride, self.padding
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer catalog plus a dense classifier head.

    The list is a counting catalog, not a connectivity graph: residual
    topology does not change parameter or FLOP totals.
    """

    name: str
    layers: tuple[LayerSpec, ...]
    classifier_in: int
    classes: int
    input_hw: tuple[int, int] = (32, 32)

    def __post_init__(self):
        if self.classifier_in < 1 or self.classes < 1:
            raise SpecError(
                f"classifier dims must be positive, got {self.classifier_in} -> {self.classes}"
            )
        object.__setattr__(self, "layers", tuple(self.layers))


def _head_params(c_in: int, out_dim: int, reduction: float) -> int:
    # own fc1/fc2 pair per head, biases included
    h = hidden_width(c_in, reduction)
    return (h * c_in + h) + (out_dim * h + out_dim)


def _fc_flops(d_in: int, d_out: int) -> int:
    return 2 * d_in * d_out


def layer_params(spec: LayerSpec) -> int:
    """Exact trainable-parameter count of one layer."""
    w = spec.c_out * (spec.c_in // spec.groups) * spec.kernel_size ** 2
    bank = spec.kernels * w + (spec.kernels * spec.c_out if spec.bias else 0)
    if spec.variant == "static":
        return w + (spec.c_out if spec.bias else 0)
    if spec.variant in ("condconv", "dynamicconv"):
        return bank + _head_params(spec.c_in, spec.kernels, spec.reduction)
    if spec.variant == "fmdconv":
        heads = (_head_params(spec.c_in, spec.c_in, spec.reduction)
                 + _head_params(spec.c_in, spec.kernels, spec.reduction)
                 + _head_params(spec.c_in, spec.c_out, spec.reduction))
        return bank + heads
    # odconv: shared trunk, four branches
    h = hidden_width(spec.c_in, spec.reduction)
    trunk = h * spec.c_in + h
    branches = sum(out * h + out for out in
                   (spec.c_in, spec.c_out, spec.kernel_size ** 2, spec.kernels))
    return bank + trunk + branches


def layer_flops(spec: LayerSpec) -> int:
    """Per-sample FLOPs of one layer under the stated conventions."""
    h, w = spec.input_hw
    ho, wo = spec.out_hw
    w_elems = spec.c_out * (spec.c_in // spec.groups) * spec.kernel_size ** 2
    base = 2 * w_elems * ho * wo
    if spec.variant == "static":
        return base
    hid = hidden_width(spec.c_in, spec.reduction)
    gap = spec.c_in * h * w
    aggregation = 2 * spec.kernels * w_elems
    if spec.variant in ("condconv", "dynamicconv"):
        head = _fc_flops(spec.c_in, hid) + _fc_flops(hid, spec.kernels)
        return base + gap + head + aggregation
    if spec.variant == "fmdconv":
        heads = (3 * _fc_flops(spec.c_in, hid)
                 + _fc_flops(hid, spec.c_in)
                 + _fc_flops(hid, spec.kernels)
                 + _fc_flops(hid, spec.c_out))
        gates = spec.c_in * h * w + spec.c_out * ho * wo
        return base + gap + heads + aggregation + gates
    # odconv
    heads = (_fc_flops(spec.c_in, hid)
             + _fc_flops(hid, spec.c_in)
             + _fc_flops(hid, spec.c_out)
             + _fc_flops(hid, spec.kernel_size ** 2)
             + _fc_flops(hid, spec.kernels))
    hadamard = 3 * spec.kernels * w_elems
    return base + gap + heads + hadamard + aggregation


def dynamic_overhead_flops(spec: LayerSpec) -> int:
    """FLOPs a dynamic layer spends beyond the static convolution of the same shape."""
    if spec.variant == "static":
        return 0
    static = LayerSpec(variant="static", c_in=spec.c_in, c_out=spec.c_out,
                       kernel_size=spec.kernel_size, stride=spec.stride,
                       padding=spec.padding, groups=spec.groups, bias=spec.bias,
                       input_hw=spec.input_hw)
    return layer_flops(spec) - layer_flops(static)


def count_params(model: ModelSpec) -> int:
    """Exact parameter count of a model catalog, classifier included."""
    total = sum(layer_params(layer) for layer in model.layers)
    total += model.classifier_in * model.classes + model.classes
    return total


def count_flops(model: ModelSpec, input_hw: tuple[int, int] | None = None) -> int:
    """Per-sample FLOPs of a model catalog, classifier included.

    Layer specs carry their own input sizes; when ``input_hw`` is given it
    must match the size the catalog was built for.
    """
    if input_hw is not None and tuple(input_hw) != tuple(model.input_hw):
        raise SpecError(
            f"catalog {model.name!r} was built for input {model.input_hw}, "
            f"asked to count at {tuple(input_hw)}; rebuild the catalog instead"
        )
    total = sum(layer_flops(layer) for layer in model.layers)
    total += _fc_flops(model.classifier_in, model.classes)
    return total


def per_kernel_params(model: ModelSpec) -> int:
    """Exact parameter increment of adding one kernel to every dynamic layer.

    Covers the bank weights and biases plus the widening of each
    kernel-attention output row (hidden + 1 parameters per layer), so that
    count_params at K minus count_params at 1 equals (K-1) times this value
    exactly.
    """
    increment = 0
    for layer in model.layers:
        if layer.variant == "static":
            continue
        w = layer.c_out * (layer.c_in // layer.groups) * layer.kernel_size ** 2
        increment += w + (layer.c_out if layer.bias else 0)
        increment += hidden_width(layer.c_in, layer.reduction) + 1
    return increment
