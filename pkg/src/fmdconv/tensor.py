"""Dense float64 tensors with a replayable gradient tape.

The substrate is deliberately small: exactly the differentiable operations
that dynamic-convolution blocks and their baselines need, each with an
analytic backward pass that a finite-difference oracle can confirm.  All
arithmetic is 64-bit, reductions run in a fixed order (ascending sample and
group loops, plain einsum accumulation), so repeated runs are bit-identical
on the same machine.

Convolution is realized as direct cross-correlation through patch-matrix
lowering (im2col + GEMM), one GEMM per (sample, group) pair.  Because the
per-group GEMMs are issued in the same order whether a batch is processed
directly or folded into the grouped-convolution form used by the dynamic
layers, the two paths produce bit-identical results.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "TapeError",
    "Tensor",
    "GradientTape",
    "philox_rng",
    "parameter",
    "kaiming_uniform",
    "conv2d",
    "dense",
    "global_avg_pool",
    "relu",
    "sigmoid",
    "elementwise_mul",
    "softmax_temperature",
    "aggregate",
    "hadamard_aggregate",
    "avg_pool2x2",
    "reshape",
    "tensor_sum",
    "batch_norm2d",
    "dropout",
    "softmax_cross_entropy",
]


class ShapeError(ValueError):
    """An operand shape violates an operation's contract."""


class TapeError(RuntimeError):
    """Backward was requested without a matching recorded forward."""


def philox_rng(seed: int) -> np.random.Generator:
    """Seedable counter-based 64-bit generator (Philox4x64).

    The same seed produces the same stream on every platform, which is what
    makes training trajectories reproducible across machines.
    """
    return np.random.Generator(np.random.Philox(seed))


class Tensor:
    """A dense N-dimensional float64 array plus an optional gradient buffer.

    Tensors are immutable once produced by an operation; the training loop
    mutates parameter ``data`` in place only between forward/backward pairs.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """Wrap an array as a trainable tensor."""
    return Tensor(data, requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    """Kaiming-uniform draw for ReLU fan-in: U(-b, b) with b = sqrt(6 / fan_in)."""
    if fan_in <= 0:
        raise ShapeError(f"fan_in must be positive, got {fan_in}")
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))


class _Node:
    __slots__ = ("out", "backward")

    def __init__(self, out: Tensor, backward: Callable[[np.ndarray], None]):
        self.out = out
        self.backward = backward


class GradientTape:
    """Ordered record of executed operations for reverse-mode replay.

    Used as a context manager::

        with GradientTape() as tape:
            y = conv2d(x, w)
            loss = tensor_sum(y)
        tape.backward(loss)

    Replay visits operations in exact reverse execution order, so by the
    time a node runs its backward pass every consumer of its output has
    already deposited its gradient contribution.  The tape is single-writer:
    tapes do not nest and at most one is active per thread of execution.
    """

    _active: "GradientTape | None" = None

    def __init__(self):
        self._nodes: list[_Node] = []
        self._output_ids: set[int] = set()
        self._replayed = False

    def __enter__(self) -> "GradientTape":
        if GradientTape._active is not None:
            raise TapeError("gradient tapes do not nest")
        GradientTape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        GradientTape._active = None

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, out: Tensor, grad: np.ndarray | None = None) -> None:
        """Replay the tape in reverse from ``out``.

        ``grad`` seeds the output gradient; when omitted ``out`` must be a
        scalar and is seeded with 1.  Gradients accumulate into the ``grad``
        buffer of every tensor that requires them.
        """
        if not self._nodes:
            raise TapeError("backward called without a recorded forward")
        if id(out) not in self._output_ids:
            raise TapeError("tensor was not produced under this tape")
        if self._replayed:
            raise TapeError("tape has already been replayed")
        if grad is None:
            if out.data.size != 1:
                raise ShapeError("backward without an explicit gradient needs a scalar output")
            grad = np.ones_like(out.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != out.data.shape:
                raise ShapeError(
                    f"seed gradient shape {grad.shape} does not match output shape {out.data.shape}"
                )
        self._replayed = True
        out.grad = grad.copy()
        for node in reversed(self._nodes):
            if node.out.grad is not None:
                node.backward(node.out.grad)

    def gradient(self, out: Tensor, sources: Iterable[Tensor],
                 grad: np.ndarray | None = None) -> list[np.ndarray | None]:
        """Replay backward and return the gradients of ``sources``."""
        self.backward(out, grad)
        return [s.grad for s in sources]


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(np.float64, copy=True)
    else:
        t.grad += g


def _record(out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
    tape = GradientTape._active
    if tape is not None and out.requires_grad and not tape._replayed:
        tape._nodes.append(_Node(out, backward))
        tape._output_ids.add(id(out))


def _requires(*tensors: Tensor | None) -> bool:
    return any(t is not None and t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(xg: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # xg: [Cg, Hp, Wp] one sample, one group slice -> [Cg*kh*kw, ho*wo]
    cg = xg.shape[0]
    cols = np.empty((cg, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xg[:, i : i + (ho - 1) * stride + 1 : stride,
                               j : j + (wo - 1) * stride + 1 : stride]
    return cols.reshape(cg * kh * kw, ho * wo)


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, padding: int) -> tuple[int, int]:
    return ((h + 2 * padding - kh) // stride + 1,
            (w + 2 * padding - kw) // stride + 1)


def _validate_conv(x: Tensor, w: Tensor, b: Tensor | None,
                   stride: int, padding: int, groups: int) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be [N, C_in, H, W], got ndim={x.data.ndim}")
    if w.data.ndim != 4:
        raise ShapeError(f"conv2d weight must be [C_out, C_in/groups, kh, kw], got ndim={w.data.ndim}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ShapeError(f"invalid stride={stride} / padding={padding} / groups={groups}")
    n, c_in, h, wdim = x.data.shape
    c_out, c_g, kh, kw = w.data.shape
    if c_in % groups != 0:
        raise ShapeError(f"C_in={c_in} not divisible by groups={groups}")
    if c_out % groups != 0:
        raise ShapeError(f"C_out={c_out} not divisible by groups={groups}")
    if c_g != c_in // groups:
        raise ShapeError(
            f"weight channel dim {c_g} does not match C_in/groups = {c_in}//{groups}"
        )
    if kh > h + 2 * padding or kw > wdim + 2 * padding:
        raise ShapeError(
            f"kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{wdim + 2 * padding}"
        )
    if b is not None and b.data.shape != (c_out,):
        raise ShapeError(f"bias shape {b.data.shape} does not match C_out={c_out}")


def _conv2d_forward(xd: np.ndarray, wd: np.ndarray, bd: np.ndarray | None,
                    stride: int, padding: int, groups: int) -> np.ndarray:
    n, c_in, h, wdim = xd.shape
    c_out, c_g, kh, kw = wd.shape
    ho, wo = _conv_out_hw(h, wdim, kh, kw, stride, padding)
    cg_out = c_out // groups
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    wf = wd.reshape(groups, cg_out, c_g * kh * kw)
    out = np.empty((n, c_out, ho, wo), dtype=np.float64)
    for ni in range(n):
        for gi in range(groups):
            cols = _im2col(xp[ni, gi * c_g : (gi + 1) * c_g], kh, kw, stride, ho, wo)
            out[ni, gi * cg_out : (gi + 1) * cg_out] = (wf[gi] @ cols).reshape(cg_out, ho, wo)
    if bd is not None:
        out += bd[None, :, None, None]
    return out


def _conv2d_backward(xd: np.ndarray, wd: np.ndarray, g: np.ndarray,
                     stride: int, padding: int, groups: int,
                     need_gx: bool, need_gw: bool, need_gb: bool,
                     ) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray | None]:
    n, c_in, h, wdim = xd.shape
    c_out, c_g, kh, kw = wd.shape
    ho, wo = g.shape[2], g.shape[3]
    cg_out = c_out // groups
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    wf = wd.reshape(groups, cg_out, c_g * kh * kw)
    gw = np.zeros_like(wf) if need_gw else None
    gxp = np.zeros_like(xp) if need_gx else None
    gb = np.zeros(c_out, dtype=np.float64) if need_gb else None
    for ni in range(n):
        for gi in range(groups):
            gsl = slice(gi * c_g, (gi + 1) * c_g)
            go = g[ni, gi * cg_out : (gi + 1) * cg_out].reshape(cg_out, ho * wo)
            if need_gw or need_gx:
                cols = _im2col(xp[ni, gsl], kh, kw, stride, ho, wo)
            if need_gw:
                gw[gi] += go @ cols.T
            if need_gx:
                gcols = (wf[gi].T @ go).reshape(c_g, kh, kw, ho, wo)
                dst = gxp[ni, gsl]
                for i in range(kh):
                    for j in range(kw):
                        dst[:, i : i + (ho - 1) * stride + 1 : stride,
                            j : j + (wo - 1) * stride + 1 : stride] += gcols[:, i, j]
        if need_gb:
            gb += g[ni].sum(axis=(1, 2))
    gx = None
    if need_gx:
        gx = gxp[:, :, padding : padding + h, padding : padding + wdim] if padding else gxp
    return gx, (gw.reshape(wd.shape) if need_gw else None), gb


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, *,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation with zero padding.

    ``x`` is [N, C_in, H, W]; ``w`` is [C_out, C_in/groups, kh, kw]; the
    optional ``b`` is [C_out].  Output spatial size is
    floor((H + 2*padding - kh)/stride) + 1 (likewise for W).
    """
    _validate_conv(x, w, b, stride, padding, groups)
    out_data = _conv2d_forward(x.data, w.data, None if b is None else b.data,
                               stride, padding, groups)
    out = Tensor(out_data, requires_grad=_requires(x, w, b))
    xd, wd = x.data, w.data

    def backward(g: np.ndarray) -> None:
        gx, gw, gb = _conv2d_backward(
            xd, wd, g, stride, padding, groups,
            x.requires_grad, w.requires_grad, b is not None and b.requires_grad)
        if gx is not None:
            _accumulate(x, gx)
        if gw is not None:
            _accumulate(w, gw)
        if gb is not None:
            _accumulate(b, gb)

    _record(out, backward)
    return out


# ---------------------------------------------------------------------------
# pointwise / pooling / linear algebra
# ---------------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise affine map: out = x @ w.T + b with w of shape [D_out, D_in]."""
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"dense expects 2-D operands, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"dense inner dims disagree: input D_in={x.data.shape[1]}, weight D_in={w.data.shape[1]}"
        )
    if b is not None and b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"dense bias shape {b.data.shape} does not match D_out={w.data.shape[0]}")
    out_data = x.data @ w.data.T
    if b is not None:
        out_data = out_data + b.data[None, :]
    out = Tensor(out_data, requires_grad=_requires(x, w, b))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, g @ w.data)
        if w.requires_grad:
            _accumulate(w, g.T @ x.data)
        if b is not None and b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    _record(out, backward)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: [N, C, H, W] -> [N, C]."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N, C, H, W], got ndim={x.data.ndim}")
    n, c, h, w = x.data.shape
    if h < 1 or w < 1:
        raise ShapeError(f"spatial dims must be >= 1, got {h}x{w}")
    out = Tensor(x.data.mean(axis=(2, 3)), requires_grad=x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape))

    _record(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), requires_grad=x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * (x.data > 0.0))

    _record(out, backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so exp never overflows; output stays strictly inside (0, 1)
    # for finite inputs representable at float64.
    xd = x.data
    out_data = np.empty_like(xd)
    pos = xd >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out_data[~pos] = e / (1.0 + e)
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * out_data * (1.0 - out_data))

    _record(out, backward)
    return out


def _broadcast_axes(x_shape: tuple[int, ...], a_shape: tuple[int, ...]) -> tuple[int, ...]:
    # a must equal x, or match with trailing singleton spatial dims (e.g. [N,C,1,1]).
    if len(a_shape) != len(x_shape):
        raise ShapeError(f"multiplier rank {len(a_shape)} does not match input rank {len(x_shape)}")
    axes = []
    for d, (xs, as_) in enumerate(zip(x_shape, a_shape)):
        if as_ == xs:
            continue
        if as_ == 1 and d >= len(x_shape) - 2:
            axes.append(d)
        else:
            raise ShapeError(
                f"multiplier dim {d} is {as_}, expected {xs} or a trailing singleton"
            )
    return tuple(axes)


def elementwise_mul(x: Tensor, a: Tensor) -> Tensor:
    """Pointwise product; ``a`` either matches ``x`` or broadcasts over
    trailing singleton spatial dims ([N, C, 1, 1] against [N, C, H, W])."""
    axes = _broadcast_axes(x.data.shape, a.data.shape)
    out = Tensor(x.data * a.data, requires_grad=_requires(x, a))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accumulate(x, g * a.data)
        if a.requires_grad:
            ga = g * x.data
            if axes:
                ga = ga.sum(axis=axes, keepdims=True)
            _accumulate(a, ga)

    _record(out, backward)
    return out


def softmax_temperature(z: Tensor, temperature: float) -> Tensor:
    """Temperature-scaled softmax over the last axis.

    out_i = exp(z_i/T) / sum_j exp(z_j/T), computed with max subtraction for
    stability.  T = 1 reproduces the standard softmax bit-for-bit because
    z / 1.0 is exact.
    """
    if temperature <= 0.0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    if z.data.ndim < 1:
        raise ShapeError("softmax_temperature needs at least one axis")
    zt = z.data / temperature
    zt = zt - zt.max(axis=-1, keepdims=True)
    e = np.exp(zt)
    out_data = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(out_data, requires_grad=z.requires_grad)

    def backward(g: np.ndarray) -> None:
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(z, out_data * (g - inner) / temperature)

    _record(out, backward)
    return out


def aggregate(coeff: Tensor, bank: Tensor) -> Tensor:
    """Per-sample convex-style combination of a bank: out[n] = sum_k coeff[n,k] * bank[k].

    ``coeff`` is [N, K]; ``bank`` is [K, ...]; the result is [N, ...].  The
    sum over k runs in ascending order, matching an explicit loop.
    """
    if coeff.data.ndim != 2:
        raise ShapeError(f"aggregate coefficients must be [N, K], got {coeff.data.shape}")
    if bank.data.shape[0] != coeff.data.shape[1]:
        raise ShapeError(
            f"bank size {bank.data.shape[0]} does not match K={coeff.data.shape[1]}"
        )
    out = Tensor(np.einsum("nk,k...->n...", coeff.data, bank.data),
                 requires_grad=_requires(coeff, bank))

    def backward(g: np.ndarray) -> None:
        if coeff.requires_grad:
            n, k = coeff.data.shape
            _accumulate(coeff, g.reshape(n, -1) @ bank.data.reshape(k, -1).T)
        if bank.requires_grad:
            _accumulate(bank, np.einsum("nk,n...->k...", coeff.data, g))

    _record(out, backward)
    return out


def hadamard_aggregate(coeff: Tensor, channel: Tensor, filt: Tensor,
                       spatial: Tensor, bank: Tensor) -> Tensor:
    """Attention-scaled kernel combination for the four-attention baseline.

    out[n] = sum_k coeff[n,k] * (channel[n] x filt[n] x spatial[n] x bank[k])
    with channel broadcast over the input-channel axis [1, C_in, 1, 1], filt
    over the output-channel axis [C_out, 1, 1, 1], and spatial over the k x k
    window [1, 1, kh, kw] of each bank kernel [C_out, C_in, kh, kw].
    """
    k, c_out, c_in, kh, kw = bank.data.shape
    n = coeff.data.shape[0]
    if coeff.data.shape != (n, k):
        raise ShapeError(f"kernel coefficients must be [N, K], got {coeff.data.shape}")
    if channel.data.shape != (n, c_in):
        raise ShapeError(f"channel attention must be [N, {c_in}], got {channel.data.shape}")
    if filt.data.shape != (n, c_out):
        raise ShapeError(f"filter attention must be [N, {c_out}], got {filt.data.shape}")
    if spatial.data.shape != (n, kh * kw):
        raise ShapeError(f"spatial attention must be [N, {kh * kw}], got {spatial.data.shape}")
    sp = spatial.data.reshape(n, kh, kw)
    args = (coeff.data, channel.data, filt.data, sp, bank.data)
    out = Tensor(np.einsum("nk,ni,no,nyx,koiyx->noiyx", *args, optimize=True),
                 requires_grad=_requires(coeff, channel, filt, spatial, bank))

    def backward(g: np.ndarray) -> None:
        if coeff.requires_grad:
            _accumulate(coeff, np.einsum("noiyx,ni,no,nyx,koiyx->nk",
                                         g, channel.data, filt.data, sp, bank.data,
                                         optimize=True))
        if channel.requires_grad:
            _accumulate(channel, np.einsum("noiyx,nk,no,nyx,koiyx->ni",
                                           g, coeff.data, filt.data, sp, bank.data,
                                           optimize=True))
        if filt.requires_grad:
            _accumulate(filt, np.einsum("noiyx,nk,ni,nyx,koiyx->no",
                                        g, coeff.data, channel.data, sp, bank.data,
                                        optimize=True))
        if spatial.requires_grad:
            gs = np.einsum("noiyx,nk,ni,no,koiyx->nyx",
                           g, coeff.data, channel.data, filt.data, bank.data,
                           optimize=True)
            _accumulate(spatial, gs.reshape(n, kh * kw))
        if bank.requires_grad:
            _accumulate(bank, np.einsum("noiyx,nk,ni,no,nyx->koiyx",
                                        g, coeff.data, channel.data, filt.data, sp,
                                        optimize=True))

    _record(out, backward)
    return out


def avg_pool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 average pooling; spatial dims must be even."""
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool2x2 expects [N, C, H, W], got ndim={x.data.ndim}")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    out = Tensor(blocks.mean(axis=(3, 5)), requires_grad=x.requires_grad)

    def backward(g: np.ndarray) -> None:
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        _accumulate(x, gx)

    _record(out, backward)
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out_data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.data.shape} to {shape}") from exc
    out = Tensor(out_data, requires_grad=x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.data.shape))

    _record(out, backward)
    return out


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(x.data.sum(), requires_grad=x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    _record(out, backward)
    return out


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                 running_mean: np.ndarray, running_var: np.ndarray, *,
                 training: bool = False, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over [N, C, H, W].

    Training mode normalizes with the batch statistics and folds them into
    the running buffers in place (the one deliberate side effect on this
    API); evaluation mode normalizes with the running buffers, making the
    result per-sample independent.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm2d expects [N, C, H, W], got ndim={x.data.ndim}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"affine params must be [{c}], got {gamma.data.shape}/{beta.data.shape}")
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = Tensor(gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None],
                 requires_grad=_requires(x, gamma, beta))
    m = x.data.shape[0] * x.data.shape[2] * x.data.shape[3]

    def backward(g: np.ndarray) -> None:
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            _accumulate(gamma, (g * x_hat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            scale = (gamma.data * inv)[None, :, None, None]
            if training:
                g_mean = g.mean(axis=(0, 2, 3))[None, :, None, None]
                gx_mean = (g * x_hat).mean(axis=(0, 2, 3))[None, :, None, None]
                _accumulate(x, scale * (g - g_mean - x_hat * gx_mean))
            else:
                _accumulate(x, scale * g)

    _record(out, backward)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None, *,
            training: bool = False) -> Tensor:
    """Inverted dropout; the identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask, requires_grad=x.requires_grad)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    _record(out, backward)
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels against softmax(logits)."""
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be [N, C], got {logits.data.shape}")
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = (log_norm - z[np.arange(n), labels]).mean()
    out = Tensor(loss, requires_grad=logits.requires_grad)

    def backward(g: np.ndarray) -> None:
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), labels] -= 1.0
        _accumulate(logits, probs * (float(g) / n))

    _record(out, backward)
    return out
