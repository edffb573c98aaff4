"""Squeeze-style attention heads: GAP -> FC -> ReLU -> FC -> activation.

One head produces one attention vector from a feature map.  The three heads
of the fast multi-attention block (input-channel, kernel, output-channel)
share a single pooled descriptor per forward but own separate FC stacks.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    dense,
    dropout,
    global_avg_pool,
    kaiming_uniform,
    philox_rng,
    relu,
    sigmoid,
    softmax_temperature,
)

__all__ = [
    "AttentionHead",
    "hidden_width",
    "input_attention",
    "output_attention",
    "kernel_attention",
]

ACTIVATIONS = ("sigmoid", "softmax")


def hidden_width(c_in: int, reduction: float) -> int:
    """Bottleneck width of a head: floor(reduction * C_in), clamped to >= 1."""
    if not 0.0 < reduction <= 1.0:
        raise ValueError(f"reduction rate must be in (0, 1], got {reduction}")
    return max(1, int(math.floor(reduction * c_in)))


class AttentionHead:
    """Two-layer excitation head over a pooled [N, C_in] descriptor.

    ``activation_kind`` selects the output nonlinearity: ``sigmoid`` gates in
    (0, 1) for channel attentions, ``softmax`` (temperature-scaled) rows
    summing to 1 for kernel attention.  Dropout, when enabled, acts on the
    hidden ReLU activation and only in training mode.
    """

    def __init__(self, c_in: int, out_dim: int, *, reduction: float = 0.0625,
                 activation: str = "sigmoid", dropout_rate: float = 0.0,
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        if c_in < 1 or out_dim < 1:
            raise ShapeError(f"head dims must be positive, got c_in={c_in}, out_dim={out_dim}")
        if rng is None:
            rng = philox_rng(0)
        self.c_in = c_in
        self.out_dim = out_dim
        self.reduction = reduction
        self.hidden_dim = hidden_width(c_in, reduction)
        self.activation_kind = activation
        self.dropout_rate = dropout_rate
        self.fc1_w = Tensor(kaiming_uniform(rng, (self.hidden_dim, c_in), fan_in=c_in),
                            requires_grad=True)
        self.fc1_b = Tensor(np.zeros(self.hidden_dim), requires_grad=True)
        self.fc2_w = Tensor(kaiming_uniform(rng, (out_dim, self.hidden_dim),
                                            fan_in=self.hidden_dim),
                            requires_grad=True)
        self.fc2_b = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return [(prefix + name, t) for name, t in
                (("fc1_w", self.fc1_w), ("fc1_b", self.fc1_b),
                 ("fc2_w", self.fc2_w), ("fc2_b", self.fc2_b))]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, pooled: Tensor, *, temperature: float = 1.0,
                training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Map a pooled [N, C_in] descriptor to [N, out_dim] attention rows."""
        if pooled.data.ndim != 2 or pooled.data.shape[1] != self.c_in:
            raise ShapeError(
                f"pooled descriptor must be [N, {self.c_in}], got {pooled.data.shape}"
            )
        hidden = relu(dense(pooled, self.fc1_w, self.fc1_b))
        hidden = dropout(hidden, self.dropout_rate, rng, training=training)
        logits = dense(hidden, self.fc2_w, self.fc2_b)
        if self.activation_kind == "sigmoid":
            return sigmoid(logits)
        return softmax_temperature(logits, temperature)


def _check_feature_map(x: Tensor, c_in: int) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"attention input must be [N, C, H, W], got ndim={x.data.ndim}")
    if x.data.shape[1] != c_in:
        raise ShapeError(f"input has {x.data.shape[1]} channels, head expects {c_in}")


def input_attention(head: AttentionHead, x: Tensor, *, training: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Per-sample gates over the input channels: sigmoid head with out_dim = C_in."""
    _check_feature_map(x, head.c_in)
    if head.out_dim != head.c_in:
        raise ShapeError(
            f"input attention head must emit C_in={head.c_in} values, emits {head.out_dim}"
        )
    if head.activation_kind != "sigmoid":
        raise ValueError("input attention uses a sigmoid head")
    return head.forward(global_avg_pool(x), training=training, rng=rng)


def output_attention(head: AttentionHead, x: Tensor, *, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Per-sample gates over the output channels, computed from the layer input."""
    _check_feature_map(x, head.c_in)
    if head.activation_kind != "sigmoid":
        raise ValueError("output attention uses a sigmoid head")
    return head.forward(global_avg_pool(x), training=training, rng=rng)


def kernel_attention(head: AttentionHead, x: Tensor, temperature: float, *,
                     training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Temperature-scaled softmax weights over the kernel bank; rows sum to 1."""
    _check_feature_map(x, head.c_in)
    if head.activation_kind != "softmax":
        raise ValueError("kernel attention uses a temperature-softmax head")
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return head.forward(global_avg_pool(x), temperature=temperature,
                        training=training, rng=rng)
