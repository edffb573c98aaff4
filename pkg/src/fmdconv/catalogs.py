"""Embedded architecture catalogs for counting: tiny CNN, ResNet-18, ResNet-50.

The ResNet catalogs are ordered layer-shape tables used only for parameter
and FLOP accounting, never instantiated as trainable models.  The dynamic
replacement applies to the stem convolution and all in-block convolutions;
the 1x1 projection shortcuts stay static.  BatchNorm parameters are outside
the catalog (they change totals by well under 0.1%).
"""

from __future__ import annotations

from .counting import LayerSpec, ModelSpec, SpecError

__all__ = ["tiny_spec", "resnet18_spec", "resnet50_spec", "catalog"]


def _conv_out(h: int, k: int, s: int, p: int) -> int:
    return (h + 2 * p - k) // s + 1


def tiny_spec(variant: str = "fmdconv", kernels: int = 4, reduction: float = 0.1,
              classes: int = 4, in_channels: int = 1,
              channels: tuple[int, int, int] = (16, 32, 32),
              input_hw: tuple[int, int] = (16, 16)) -> ModelSpec:
    """Three conv blocks (conv -> ReLU -> 2x2 average pool) + GAP + classifier."""
    h, w = input_hw
    if h % 8 or w % 8:
        raise SpecError(f"tiny input must be divisible by 8, got {input_hw}")
    layers = []
    c_prev = in_channels
    for c_next in channels:
        layers.append(LayerSpec(variant=variant, c_in=c_prev, c_out=c_next,
                                kernel_size=3, stride=1, padding=1,
                                kernels=kernels if variant != "static" else 1,
                                reduction=reduction, input_hw=(h, w)))
        h, w = h // 2, w // 2
        c_prev = c_next
    return ModelSpec(name=f"tiny-{variant}", layers=tuple(layers),
                     classifier_in=channels[-1], classes=classes, input_hw=input_hw)


def _dyn(variant: str, kernels: int) -> tuple[str, int]:
    return (variant, kernels) if variant != "static" else ("static", 1)


def resnet18_spec(variant: str = "fmdconv", kernels: int = 4, reduction: float = 0.1,
                  classes: int = 1000,
                  input_hw: tuple[int, int] = (32, 32)) -> ModelSpec:
    """Standard 18-layer residual catalog: 7x7 stem, four stages of two
    basic blocks, 1x1 projections at the stage transitions."""
    dyn_variant, dyn_k = _dyn(variant, kernels)
    h, w = input_hw

    def conv(c_in, c_out, k, stride, padding, hw, dynamic=True):
        v, kk = (dyn_variant, dyn_k) if dynamic else ("static", 1)
        return LayerSpec(variant=v, c_in=c_in, c_out=c_out, kernel_size=k,
                         stride=stride, padding=padding, kernels=kk,
                         reduction=reduction, input_hw=hw)

    layers = [conv(3, 64, 7, 2, 3, (h, w))]
    h, w = _conv_out(h, 7, 2, 3), _conv_out(w, 7, 2, 3)
    h, w = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)  # 3x3/2 max pool

    c_prev = 64
    for c_out, stage_stride in ((64, 1), (128, 2), (256, 2), (512, 2)):
        for block in range(2):
            stride = stage_stride if block == 0 else 1
            c_in = c_prev if block == 0 else c_out
            ho, wo = _conv_out(h, 3, stride, 1), _conv_out(w, 3, stride, 1)
            layers.append(conv(c_in, c_out, 3, stride, 1, (h, w)))
            layers.append(conv(c_out, c_out, 3, 1, 1, (ho, wo)))
            if block == 0 and (stride != 1 or c_in != c_out):
                layers.append(conv(c_in, c_out, 1, stride, 0, (h, w), dynamic=False))
            h, w = ho, wo
        c_prev = c_out
    return ModelSpec(name=f"resnet18-{variant}", layers=tuple(layers),
                     classifier_in=512, classes=classes, input_hw=input_hw)


def resnet50_spec(variant: str = "fmdconv", kernels: int = 4, reduction: float = 0.1,
                  classes: int = 1000,
                  input_hw: tuple[int, int] = (32, 32)) -> ModelSpec:
    """Standard 50-layer bottleneck catalog (stages of 3/4/6/3 blocks)."""
    dyn_variant, dyn_k = _dyn(variant, kernels)
    h, w = input_hw

    def conv(c_in, c_out, k, stride, padding, hw, dynamic=True):
        v, kk = (dyn_variant, dyn_k) if dynamic else ("static", 1)
        return LayerSpec(variant=v, c_in=c_in, c_out=c_out, kernel_size=k,
                         stride=stride, padding=padding, kernels=kk,
                         reduction=reduction, input_hw=hw)

    layers = [conv(3, 64, 7, 2, 3, (h, w))]
    h, w = _conv_out(h, 7, 2, 3), _conv_out(w, 7, 2, 3)
    h, w = _conv_out(h, 3, 2, 1), _conv_out(w, 3, 2, 1)  # 3x3/2 max pool

    c_prev = 64
    for width, blocks, stage_stride in ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)):
        expanded = width * 4
        for block in range(blocks):
            stride = stage_stride if block == 0 else 1
            c_in = c_prev if block == 0 else expanded
            ho, wo = _conv_out(h, 3, stride, 1), _conv_out(w, 3, stride, 1)
            layers.append(conv(c_in, width, 1, 1, 0, (h, w)))
            layers.append(conv(width, width, 3, stride, 1, (h, w)))
            layers.append(conv(width, expanded, 1, 1, 0, (ho, wo)))
            if block == 0:
                layers.append(conv(c_in, expanded, 1, stride, 0, (h, w), dynamic=False))
            h, w = ho, wo
        c_prev = expanded
    return ModelSpec(name=f"resnet50-{variant}", layers=tuple(layers),
                     classifier_in=2048, classes=classes, input_hw=input_hw)


_CATALOGS = {"tiny": tiny_spec, "resnet18": resnet18_spec, "resnet50": resnet50_spec}


def catalog(arch: str, **kwargs) -> ModelSpec:
    """Look up an embedded architecture catalog by name."""
    if arch not in _CATALOGS:
        raise SpecError(f"unknown architecture {arch!r}; expected one of {sorted(_CATALOGS)}")
    return _CATALOGS[arch](**kwargs)
