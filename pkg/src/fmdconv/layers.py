"""Dynamic convolution layers behind one interface, plus their loop oracle.

Five variants share the same contract (``forward(x, temperature, training)``):

* ``StaticConv2d``      - one fixed kernel, the reference point.
* ``CondConv2d``        - per-sample kernel mixing with unnormalized sigmoid routing.
* ``DynamicConv2d``     - kernel mixing weighted by a temperature softmax.
* ``ODConv2d``          - four-attention variant: kernel, input-channel,
                          output-channel (filter) and spatial factors scale the
                          kernels before mixing.
* ``FMDConv2d``         - fast multi-attention block: input-channel gate on the
                          feature map, temperature-degraded kernel attention on
                          the bank, output-channel gate on the result.

Per-sample kernels are realized through a single grouped convolution over the
batch-folded tensor: the batch is reshaped to [1, N*C_in, H, W], the
per-sample kernels to [N*C_out, C_in/g, k, k], and one conv2d call with
N*g groups applies N distinct kernels.  ``naive_forward_oracle`` reproduces
the same math with an explicit loop over samples and exists only as a check.
"""

from __future__ import annotations

import math

import numpy as np

from .attention import AttentionHead
from .tensor import (
    ShapeError,
    Tensor,
    aggregate,
    conv2d,
    dense,
    dropout,
    elementwise_mul,
    global_avg_pool,
    hadamard_aggregate,
    kaiming_uniform,
    philox_rng,
    relu,
    reshape,
    sigmoid,
    softmax_temperature,
)

__all__ = [
    "KernelBank",
    "StaticConv2d",
    "CondConv2d",
    "DynamicConv2d",
    "ODConv2d",
    "FMDConv2d",
    "VARIANTS",
    "build_layer",
    "naive_forward_oracle",
]


class KernelBank:
    """K parallel convolution kernels [K, C_out, C_in/g, k, k] plus optional biases.

    All kernels share the same spatial size and channel dimensions; each is
    Kaiming-initialized independently.
    """

    def __init__(self, c_in: int, c_out: int, kernel_size: int, *, kernels: int = 1,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 bias: bool = True, rng: np.random.Generator | None = None):
        if kernels < 1:
            raise ShapeError(f"kernel count must be >= 1, got {kernels}")
        if c_in % groups or c_out % groups:
            raise ShapeError(
                f"groups={groups} must divide C_in={c_in} and C_out={c_out}"
            )
        if rng is None:
            rng = philox_rng(0)
        self.c_in = c_in
        self.c_out = c_out
        self.kernel_size = kernel_size
        self.kernels = kernels
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (c_in // groups) * kernel_size * kernel_size
        self.weight = Tensor(
            kaiming_uniform(rng, (kernels, c_out, c_in // groups, kernel_size, kernel_size),
                            fan_in=fan_in),
            requires_grad=True)
        self.bias = Tensor(np.zeros((kernels, c_out)), requires_grad=True) if bias else None

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = [(prefix + "weight", self.weight)]
        if self.bias is not None:
            named.append((prefix + "bias", self.bias))
        return named


class _ConvLayerBase:
    """Shared plumbing: bank access, shape bookkeeping, config serialization."""

    variant = "base"

    def __init__(self, bank: KernelBank, reduction: float, dropout_rate: float):
        self.bank = bank
        self.reduction = reduction
        self.dropout_rate = dropout_rate

    @property
    def c_in(self) -> int:
        return self.bank.c_in

    @property
    def c_out(self) -> int:
        return self.bank.c_out

    def _check_input(self, x: Tensor) -> tuple[int, int, int, int]:
        if x.data.ndim != 4:
            raise ShapeError(f"layer input must be [N, C, H, W], got ndim={x.data.ndim}")
        n, c, h, w = x.data.shape
        if c != self.bank.c_in:
            raise ShapeError(f"input has {c} channels, layer expects {self.bank.c_in}")
        return n, c, h, w

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return self.bank.named_parameters(prefix + "bank.")

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def to_config(self) -> dict:
        """Flat key-value description consumed by the harness and the FLOP counter."""
        return {
            "variant": self.variant,
            "c_in": self.bank.c_in,
            "c_out": self.bank.c_out,
            "kernel_size": self.bank.kernel_size,
            "kernels": self.bank.kernels,
            "stride": self.bank.stride,
            "padding": self.bank.padding,
            "groups": self.bank.groups,
            "reduction": self.reduction,
            "bias": self.bank.bias is not None,
        }

    def _folded_conv(self, x_gated: Tensor, w_per_sample: Tensor,
                     b_per_sample: Tensor | None, n: int, h: int, w: int) -> Tensor:
        """One grouped convolution realizing N distinct per-sample kernels."""
        bank = self.bank
        k = bank.kernel_size
        folded_x = reshape(x_gated, (1, n * bank.c_in, h, w))
        folded_w = reshape(w_per_sample, (n * bank.c_out, bank.c_in // bank.groups, k, k))
        folded_b = None if b_per_sample is None else reshape(b_per_sample, (n * bank.c_out,))
        y = conv2d(folded_x, folded_w, folded_b, stride=bank.stride,
                   padding=bank.padding, groups=n * bank.groups)
        ho, wo = y.data.shape[2], y.data.shape[3]
        return reshape(y, (n, bank.c_out, ho, wo))


class StaticConv2d(_ConvLayerBase):
    """Plain convolution; ignores temperature.  The K=1 reference for all variants."""

    variant = "static"

    def __init__(self, c_in: int, c_out: int, kernel_size: int, *, stride: int = 1,
                 padding: int = 0, groups: int = 1, bias: bool = True,
                 rng: np.random.Generator | None = None, **_ignored):
        bank = KernelBank(c_in, c_out, kernel_size, kernels=1, stride=stride,
                          padding=padding, groups=groups, bias=bias, rng=rng)
        super().__init__(bank, reduction=0.0, dropout_rate=0.0)

    def forward(self, x: Tensor, temperature: float = 1.0, *, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        self._check_input(x)
        bank = self.bank
        w = reshape(bank.weight, bank.weight.data.shape[1:])
        b = None if bank.bias is None else reshape(bank.bias, (bank.c_out,))
        return conv2d(x, w, b, stride=bank.stride, padding=bank.padding,
                      groups=bank.groups)


class CondConv2d(_ConvLayerBase):
    """Per-sample kernel mixing with sigmoid routing weights (not normalized)."""

    variant = "condconv"

    def __init__(self, c_in: int, c_out: int, kernel_size: int, *, kernels: int = 4,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 reduction: float = 0.0625, bias: bool = True,
                 dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
                 bypass_routing: bool = False):
        if rng is None:
            rng = philox_rng(0)
        bank = KernelBank(c_in, c_out, kernel_size, kernels=kernels, stride=stride,
                          padding=padding, groups=groups, bias=bias, rng=rng)
        super().__init__(bank, reduction, dropout_rate)
        self.routing_head = AttentionHead(c_in, kernels, reduction=reduction,
                                          activation="sigmoid",
                                          dropout_rate=dropout_rate, rng=rng)
        self.bypass_routing = bypass_routing

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return (self.bank.named_parameters(prefix + "bank.")
                + self.routing_head.named_parameters(prefix + "routing."))

    def forward(self, x: Tensor, temperature: float = 1.0, *, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        n, _, h, w = self._check_input(x)
        bank = self.bank
        if self.bypass_routing:
            routing = Tensor(np.ones((n, bank.kernels)))
        else:
            routing = self.routing_head.forward(global_avg_pool(x),
                                                training=training, rng=rng)
        w_agg = aggregate(routing, bank.weight)
        b_agg = None if bank.bias is None else aggregate(routing, bank.bias)
        return self._folded_conv(x, w_agg, b_agg, n, h, w)


class DynamicConv2d(_ConvLayerBase):
    """Kernel mixing weighted by a temperature-scaled softmax over the bank."""

    variant = "dynamicconv"

    def __init__(self, c_in: int, c_out: int, kernel_size: int, *, kernels: int = 4,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 reduction: float = 0.0625, bias: bool = True,
                 dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
                 bypass_kernel: bool = False):
        if rng is None:
            rng = philox_rng(0)
        bank = KernelBank(c_in, c_out, kernel_size, kernels=kernels, stride=stride,
                          padding=padding, groups=groups, bias=bias, rng=rng)
        super().__init__(bank, reduction, dropout_rate)
        self.kernel_head = AttentionHead(c_in, kernels, reduction=reduction,
                                         activation="softmax",
                                         dropout_rate=dropout_rate, rng=rng)
        self.bypass_kernel = bypass_kernel

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return (self.bank.named_parameters(prefix + "bank.")
                + self.kernel_head.named_parameters(prefix + "kernel."))

    def forward(self, x: Tensor, temperature: float = 1.0, *, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        n, _, h, w = self._check_input(x)
        bank = self.bank
        if self.bypass_kernel:
            coeff = Tensor(np.ones((n, bank.kernels)))
        else:
            coeff = self.kernel_head.forward(global_avg_pool(x),
                                             temperature=temperature,
                                             training=training, rng=rng)
        w_agg = aggregate(coeff, bank.weight)
        b_agg = None if bank.bias is None else aggregate(coeff, bank.bias)
        return self._folded_conv(x, w_agg, b_agg, n, h, w)


class ODConv2d(_ConvLayerBase):
    """Four-attention dynamic convolution with a shared squeeze trunk.

    Channel, filter and spatial attentions scale each bank kernel elementwise
    (broadcast over [1, C_in, 1, 1], [C_out, 1, 1, 1] and [1, 1, k, k]
    respectively); the kernel attention then mixes the scaled kernels.  Only
    groups=1 is supported: the per-factor broadcast is defined against
    ungrouped kernels [C_out, C_in, k, k].
    """

    variant = "odconv"

    def __init__(self, c_in: int, c_out: int, kernel_size: int, *, kernels: int = 4,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 reduction: float = 0.0625, bias: bool = True,
                 dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
                 bypass_kernel: bool = False, bypass_channel: bool = False,
                 bypass_filter: bool = False, bypass_spatial: bool = False):
        if groups != 1:
            raise ShapeError("ODConv2d supports groups=1 only")
        if rng is None:
            rng = philox_rng(0)
        bank = KernelBank(c_in, c_out, kernel_size, kernels=kernels, stride=stride,
                          padding=padding, groups=1, bias=bias, rng=rng)
        super().__init__(bank, reduction, dropout_rate)
        hidden = max(1, int(math.floor(reduction * c_in)))
        self.hidden_dim = hidden
        self.trunk_w = Tensor(kaiming_uniform(rng, (hidden, c_in), fan_in=c_in),
                              requires_grad=True)
        self.trunk_b = Tensor(np.zeros(hidden), requires_grad=True)
        self.branches = {}
        for name, out_dim in (("channel", c_in), ("filter", c_out),
                              ("spatial", kernel_size * kernel_size),
                              ("kernel", kernels)):
            w_t = Tensor(kaiming_uniform(rng, (out_dim, hidden), fan_in=hidden),
                         requires_grad=True)
            b_t = Tensor(np.zeros(out_dim), requires_grad=True)
            self.branches[name] = (w_t, b_t)
        self.bypass_kernel = bypass_kernel
        self.bypass_channel = bypass_channel
        self.bypass_filter = bypass_filter
        self.bypass_spatial = bypass_spatial

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        named = self.bank.named_parameters(prefix + "bank.")
        named += [(prefix + "trunk_w", self.trunk_w), (prefix + "trunk_b", self.trunk_b)]
        for name, (w_t, b_t) in self.branches.items():
            named += [(prefix + name + "_w", w_t), (prefix + name + "_b", b_t)]
        return named

    def _attentions(self, x: Tensor, n: int, temperature: float,
                    training: bool, rng) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        bank = self.bank
        k2 = bank.kernel_size * bank.kernel_size
        need_trunk = not (self.bypass_kernel and self.bypass_channel
                          and self.bypass_filter and self.bypass_spatial)
        hidden = None
        if need_trunk:
            hidden = relu(dense(global_avg_pool(x), self.trunk_w, self.trunk_b))
            hidden = dropout(hidden, self.dropout_rate, rng, training=training)

        def branch(name: str, bypassed: bool, dim: int, softmax: bool = False) -> Tensor:
            if bypassed:
                return Tensor(np.ones((n, dim)))
            w_t, b_t = self.branches[name]
            logits = dense(hidden, w_t, b_t)
            if softmax:
                return softmax_temperature(logits, temperature)
            return sigmoid(logits)

        coeff = branch("kernel", self.bypass_kernel, bank.kernels, softmax=True)
        channel = branch("channel", self.bypass_channel, bank.c_in)
        filt = branch("filter", self.bypass_filter, bank.c_out)
        spatial = branch("spatial", self.bypass_spatial, k2)
        return coeff, channel, filt, spatial

    def forward(self, x: Tensor, temperature: float = 1.0, *, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        n, _, h, w = self._check_input(x)
        bank = self.bank
        coeff, channel, filt, spatial = self._attentions(x, n, temperature, training, rng)
        w_eff = hadamard_aggregate(coeff, channel, filt, spatial, bank.weight)
        b_eff = None if bank.bias is None else aggregate(coeff, bank.bias)
        return self._folded_conv(x, w_eff, b_eff, n, h, w)


class FMDConv2d(_ConvLayerBase):
    """Fast multi-attention dynamic convolution.

    Forward pass: (1) gate the input feature map with per-sample input-channel
    attention, (2) mix the kernel bank with temperature-degraded kernel
    attention, (3) run one batch-folded grouped convolution, (4) gate the
    result with output-channel attention.  All three heads read one shared
    globally pooled descriptor of the layer input.

    ``bypass_*`` flags force the corresponding attention to the multiplicative
    identity; with K=1 and every flag set, the layer is bit-identical to
    ``StaticConv2d`` forward and backward.
    """

    variant = "fmdconv"

    def __init__(self, c_in: int, c_out: int, kernel_size: int, *, kernels: int = 4,
                 stride: int = 1, padding: int = 0, groups: int = 1,
                 reduction: float = 0.0625, bias: bool = True,
                 dropout_rate: float = 0.0, rng: np.random.Generator | None = None,
                 bypass_input: bool = False, bypass_kernel: bool = False,
                 bypass_output: bool = False):
        if rng is None:
            rng = philox_rng(0)
        bank = KernelBank(c_in, c_out, kernel_size, kernels=kernels, stride=stride,
                          padding=padding, groups=groups, bias=bias, rng=rng)
        super().__init__(bank, reduction, dropout_rate)
        self.input_head = AttentionHead(c_in, c_in, reduction=reduction,
                                        activation="sigmoid",
                                        dropout_rate=dropout_rate, rng=rng)
        self.kernel_head = AttentionHead(c_in, kernels, reduction=reduction,
                                         activation="softmax",
                                         dropout_rate=dropout_rate, rng=rng)
        self.output_head = AttentionHead(c_in, c_out, reduction=reduction,
                                         activation="sigmoid",
                                         dropout_rate=dropout_rate, rng=rng)
        self.bypass_input = bypass_input
        self.bypass_kernel = bypass_kernel
        self.bypass_output = bypass_output

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        return (self.bank.named_parameters(prefix + "bank.")
                + self.input_head.named_parameters(prefix + "input.")
                + self.kernel_head.named_parameters(prefix + "kernel.")
                + self.output_head.named_parameters(prefix + "output."))

    def forward(self, x: Tensor, temperature: float = 1.0, *, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        n, c, h, w = self._check_input(x)
        bank = self.bank
        pooled = None
        if not (self.bypass_input and self.bypass_kernel and self.bypass_output):
            pooled = global_avg_pool(x)

        if self.bypass_input:
            x_gated = x
        else:
            a_in = self.input_head.forward(pooled, training=training, rng=rng)
            x_gated = elementwise_mul(x, reshape(a_in, (n, c, 1, 1)))

        if self.bypass_kernel:
            coeff = Tensor(np.ones((n, bank.kernels)))
        else:
            coeff = self.kernel_head.forward(pooled, temperature=temperature,
                                             training=training, rng=rng)
        w_agg = aggregate(coeff, bank.weight)
        b_agg = None if bank.bias is None else aggregate(coeff, bank.bias)
        y = self._folded_conv(x_gated, w_agg, b_agg, n, h, w)

        if not self.bypass_output:
            a_out = self.output_head.forward(pooled, training=training, rng=rng)
            y = elementwise_mul(y, reshape(a_out, (n, bank.c_out, 1, 1)))
        return y


VARIANTS = {
    "static": StaticConv2d,
    "condconv": CondConv2d,
    "dynamicconv": DynamicConv2d,
    "odconv": ODConv2d,
    "fmdconv": FMDConv2d,
}


def build_layer(config: dict, rng: np.random.Generator | None = None,
                dropout_rate: float = 0.0):
    """Construct a layer from its flat config dict (see ``to_config``)."""
    cfg = dict(config)
    variant = cfg.pop("variant")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    cls = VARIANTS[variant]
    kwargs = dict(
        stride=cfg.get("stride", 1),
        padding=cfg.get("padding", 0),
        groups=cfg.get("groups", 1),
        bias=cfg.get("bias", True),
        rng=rng,
    )
    if variant != "static":
        kwargs["kernels"] = cfg.get("kernels", 4)
        kwargs["reduction"] = cfg.get("reduction", 0.0625)
        kwargs["dropout_rate"] = dropout_rate
    return cls(cfg["c_in"], cfg["c_out"], cfg["kernel_size"], **kwargs)


# ---------------------------------------------------------------------------
# loop oracle
# ---------------------------------------------------------------------------

def _plain_conv(x_n: np.ndarray, w_n: np.ndarray, b_n: np.ndarray | None,
                bank: KernelBank) -> np.ndarray:
    y = conv2d(Tensor(x_n[None]), Tensor(w_n),
               None if b_n is None else Tensor(b_n),
               stride=bank.stride, padding=bank.padding, groups=bank.groups)
    return y.data[0]


def _mix_bank(coeff_row: np.ndarray, bank_values: np.ndarray) -> np.ndarray:
    # explicit ascending loop over the bank; mirrors the aggregation order
    mixed = coeff_row[0] * bank_values[0]
    for k in range(1, bank_values.shape[0]):
        mixed = mixed + coeff_row[k] * bank_values[k]
    return mixed


def naive_forward_oracle(layer, x: Tensor, temperature: float = 1.0) -> np.ndarray:
    """Per-sample loop reference for every dynamic variant.

    Computes the same attentions as the layer (evaluation mode), then
    materializes each sample's effective kernel with an explicit loop and
    calls plain ``conv2d`` on the single sample.  No batch folding.
    """
    if isinstance(layer, StaticConv2d):
        return layer.forward(x, temperature).data
    n = x.data.shape[0]
    bank = layer.bank
    wd, bd = bank.weight.data, None if bank.bias is None else bank.bias.data

    if isinstance(layer, FMDConv2d):
        pooled = global_avg_pool(x)
        ones = np.ones((n, bank.kernels))
        a_in = (np.ones((n, bank.c_in)) if layer.bypass_input
                else layer.input_head.forward(pooled).data)
        coeff = (ones if layer.bypass_kernel
                 else layer.kernel_head.forward(pooled, temperature=temperature).data)
        a_out = (np.ones((n, bank.c_out)) if layer.bypass_output
                 else layer.output_head.forward(pooled).data)
        rows = []
        for i in range(n):
            x_i = x.data[i] * a_in[i][:, None, None]
            w_i = _mix_bank(coeff[i], wd)
            b_i = None if bd is None else _mix_bank(coeff[i], bd)
            y_i = _plain_conv(x_i, w_i, b_i, bank)
            rows.append(y_i * a_out[i][:, None, None])
        return np.stack(rows)

    if isinstance(layer, ODConv2d):
        coeff, channel, filt, spatial = layer._attentions(x, n, temperature, False, None)
        coeff, channel, filt = coeff.data, channel.data, filt.data
        k = bank.kernel_size
        spatial = spatial.data.reshape(n, k, k)
        rows = []
        for i in range(n):
            scaled = (wd
                      * channel[i][None, None, :, None, None]
                      * filt[i][None, :, None, None, None]
                      * spatial[i][None, None, None, :, :])
            w_i = _mix_bank(coeff[i], scaled)
            b_i = None if bd is None else _mix_bank(coeff[i], bd)
            rows.append(_plain_conv(x.data[i], w_i, b_i, bank))
        return np.stack(rows)

    if isinstance(layer, (DynamicConv2d, CondConv2d)):
        head = layer.kernel_head if isinstance(layer, DynamicConv2d) else layer.routing_head
        bypassed = (layer.bypass_kernel if isinstance(layer, DynamicConv2d)
                    else layer.bypass_routing)
        if bypassed:
            coeff = np.ones((n, bank.kernels))
        elif isinstance(layer, DynamicConv2d):
            coeff = head.forward(global_avg_pool(x), temperature=temperature).data
        else:
            coeff = head.forward(global_avg_pool(x)).data
        rows = []
        for i in range(n):
            w_i = _mix_bank(coeff[i], wd)
            b_i = None if bd is None else _mix_bank(coeff[i], bd)
            rows.append(_plain_conv(x.data[i], w_i, b_i, bank))
        return np.stack(rows)

    raise TypeError(f"no oracle for layer type {type(layer).__name__}")
