"""Dense float64 tensors with reverse-mode autodiff over a closed primitive set.

Everything downstream (view transforms, fusion operators, losses) is built
from the primitives in this module.  Each primitive carries a hand-written
backward pass; correctness is checked against central finite differences via
:func:`finite_diff_check`.

Gradients are recorded on an explicit :class:`GradTape`.  A tape is
append-only during the forward pass and single-writer; tensors themselves are
safe to share read-only between threads (the active tape is thread-local).
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shapes passed to a primitive are inconsistent."""


class NumericError(ArithmeticError):
    """A numeric evaluation produced a non-finite result."""


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    @classmethod
    def zeros(cls, shape, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# Backward callback: receives the output gradient, returns one gradient (or
# None) per recorded input, in order.
BackwardFn = Callable[[np.ndarray], tuple]

_TLS = threading.local()


def _active_tape() -> "GradTape | None":
    return getattr(_TLS, "tape", None)


class GradTape:
    """Append-only record of primitive applications for reverse replay.

    Use as a context manager around the forward pass, then call
    :meth:`backward` on a scalar output.  Gradients accumulate into the
    ``grad`` buffer of every tensor that requested them (and of interior
    nodes, which are needed to propagate).
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []
        self._interior: set[int] = set()

    def __enter__(self) -> "GradTape":
        self._prev = _active_tape()
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TLS.tape = self._prev
        del self._prev

    def _tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._interior

    def backward(self, output: Tensor, seed: np.ndarray | None = None) -> None:
        """Replay the tape in reverse, seeding ``output`` with ``seed`` (default 1).

        ``output`` must be scalar unless an explicit seed of matching shape is
        given.
        """
        if seed is None:
            if output.size != 1:
                raise DimensionError(
                    f"backward needs a scalar output, got shape {output.shape}"
                )
            seed = np.ones(output.shape)
        output.grad = np.asarray(seed, dtype=np.float64).reshape(output.shape)
        for out, inputs, fn in reversed(self._entries):
            if out.grad is None:
                continue  # branch not on the path to the seeded output
            grads = fn(out.grad)
            for t, g in zip(inputs, grads):
                if g is None or not self._tracked(t):
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g


def record(out: Tensor, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Register a primitive application on the active tape, if any.

    Extension point for composite primitives defined outside this module
    (e.g. the loss functions): call with the forward result, the tensor
    inputs, and a backward callback.
    """
    tape = _active_tape()
    if tape is not None and any(tape._tracked(t) for t in inputs):
        tape._entries.append((out, tuple(inputs), backward))
        tape._interior.add(id(out))
    return out


def _needs(inputs: Sequence[Tensor]) -> tuple[bool, ...]:
    """Which inputs will receive gradients, evaluated at record time."""
    tape = _active_tape()
    if tape is None:
        return tuple(False for _ in inputs)
    return tuple(tape._tracked(t) for t in inputs)


# ---------------------------------------------------------------------------
# elementwise and reduction primitives
# ---------------------------------------------------------------------------


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> None:
    # Only exact shape match or a single-channel leading axis is supported;
    # general broadcasting is deliberately out of scope.
    if a.shape == b.shape:
        return
    if (
        len(a.shape) == len(b.shape)
        and a.shape[1:] == b.shape[1:]
        and (a.shape[0] == 1 or b.shape[0] == 1)
    ):
        return
    raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; one operand may have a single leading channel."""
    _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward(og):
        return _unbroadcast(og, a.shape), _unbroadcast(og, b.shape)

    return record(out, (a, b), backward)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may have a single leading channel."""
    _broadcast_check(a, b, "elementwise_mul")
    out = Tensor(a.data * b.data)

    def backward(og):
        return _unbroadcast(og * b.data, a.shape), _unbroadcast(og * a.data, b.shape)

    return record(out, (a, b), backward)


def affine(t: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """scale * t + shift with constant scalars."""
    out = Tensor(t.data * scale + shift)

    def backward(og):
        return (og * scale,)

    return record(out, (t,), backward)


def sum_all(t: Tensor) -> Tensor:
    """Reduce to a scalar by summation."""
    out = Tensor(t.data.sum())

    def backward(og):
        return (np.ones_like(t.data) * og.reshape(()),)

    return record(out, (t,), backward)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    # split by sign to avoid overflow in exp
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)

    def backward(og):
        return (og * s * (1.0 - s),)

    return record(out, (t,), backward)


def softmax_over_axis(t: Tensor, axis: int) -> Tensor:
    """Softmax along ``axis``; output sums to 1 along that axis."""
    nd = len(t.shape)
    if not -nd <= axis < nd:
        raise DimensionError(f"softmax axis {axis} out of range for shape {t.shape}")
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def backward(og):
        dot = (og * p).sum(axis=axis, keepdims=True)
        return (p * (og - dot),)

    return record(out, (t,), backward)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the leading (channel) axis, inputs preserved verbatim."""
    if not tensors:
        raise DimensionError("concat_channels: empty input list")
    tail = tensors[0].shape[1:]
    for t in tensors[1:]:
        if t.shape[1:] != tail:
            raise DimensionError(
                f"concat_channels: trailing dims differ: {t.shape[1:]} vs {tail}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0))
    sizes = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(og):
        return tuple(og[offsets[i] : offsets[i + 1]] for i in range(len(sizes)))

    return record(out, tuple(tensors), backward)


def slice_channels(t: Tensor, start: int, stop: int) -> Tensor:
    """View channels [start, stop) as a new tensor."""
    if not 0 <= start < stop <= t.shape[0]:
        raise DimensionError(
            f"slice_channels: [{start}, {stop}) invalid for {t.shape[0]} channels"
        )
    out = Tensor(t.data[start:stop].copy())

    def backward(og):
        g = np.zeros_like(t.data)
        g[start:stop] = og
        return (g,)

    return record(out, (t,), backward)


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != t.size:
        raise DimensionError(f"reshape: cannot view {t.shape} as {shape}")
    out = Tensor(t.data.reshape(shape))

    def backward(og):
        return (og.reshape(t.shape),)

    return record(out, (t,), backward)


def channel_mean(t: Tensor) -> Tensor:
    """Mean over the channel axis of a [C,H,W] tensor, keeping a 1-channel axis."""
    c = t.shape[0]
    out = Tensor(t.data.mean(axis=0, keepdims=True))

    def backward(og):
        return (np.broadcast_to(og / c, t.shape).copy(),)

    return record(out, (t,), backward)


def channel_max(t: Tensor) -> Tensor:
    """Max over the channel axis of a [C,H,W] tensor; backward routes to the argmax."""
    amax = t.data.argmax(axis=0)
    out = Tensor(t.data.max(axis=0, keepdims=True))

    def backward(og):
        g = np.zeros_like(t.data)
        hh, ww = np.meshgrid(
            np.arange(t.shape[1]), np.arange(t.shape[2]), indexing="ij"
        )
        g[amax, hh, ww] += og[0]
        return (g,)

    return record(out, (t,), backward)


# ---------------------------------------------------------------------------
# structured primitives
# ---------------------------------------------------------------------------


def conv2d(inp: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of a [C_in,H,W] input with a [C_out,C_in,kh,kw] kernel.

    Output spatial size is floor((H + 2*pad - kh)/stride) + 1.  Differentiable
    with respect to both the input and the kernel.
    """
    if len(inp.shape) != 3 or len(kernel.shape) != 4:
        raise DimensionError(
            f"conv2d: need [C,H,W] input and [O,C,kh,kw] kernel, got {inp.shape} and {kernel.shape}"
        )
    cin, h, w = inp.shape
    cout, kcin, kh, kw = kernel.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input channels {cin} != kernel channels {kcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel dims must be odd, got {kh}x{kw}")
    if pad < 0 or stride < 1:
        raise DimensionError(f"conv2d: invalid stride {stride} or pad {pad}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} too large for padded input {h + 2 * pad}x{w + 2 * pad}"
        )

    xp = np.zeros((cin, h + 2 * pad, w + 2 * pad))
    xp[:, pad : pad + h, pad : pad + w] = inp.data
    k = kernel.data
    out = np.zeros((cout, ho, wo))
    for u in range(kh):
        for v in range(kw):
            xs = xp[:, u : u + (ho - 1) * stride + 1 : stride, v : v + (wo - 1) * stride + 1 : stride]
            out += np.tensordot(k[:, :, u, v], xs, axes=(1, 0))
    res = Tensor(out)
    need_inp, need_ker = _needs((inp, kernel))

    def backward(og):
        gi = gk = None
        if need_inp:
            gp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    gp[:, u : u + (ho - 1) * stride + 1 : stride, v : v + (wo - 1) * stride + 1 : stride] += np.tensordot(
                        k[:, :, u, v], og, axes=(0, 0)
                    )
            gi = gp[:, pad : pad + h, pad : pad + w]
        if need_ker:
            gk = np.empty_like(k)
            for u in range(kh):
                for v in range(kw):
                    xs = xp[:, u : u + (ho - 1) * stride + 1 : stride, v : v + (wo - 1) * stride + 1 : stride]
                    gk[:, :, u, v] = np.tensordot(og, xs, axes=([1, 2], [1, 2]))
        return gi, gk

    return record(res, (inp, kernel), backward)


def bilinear_sample(image: Tensor, xy: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Sample a [C,H,W] image at continuous pixel coordinates.

    ``xy`` is an (N, 2) array of (x, y) positions where integer coordinates
    are pixel centers, x indexes columns and y indexes rows.  Returns a
    [C, N] tensor and a boolean validity array; samples outside the pixel
    center hull are 0 with valid=False and contribute no gradient.
    """
    xy = np.asarray(xy, dtype=np.float64)
    if xy.ndim != 2 or xy.shape[1] != 2:
        raise DimensionError(f"bilinear_sample: xy must be (N, 2), got {xy.shape}")
    c, h, w = image.shape
    x, y = xy[:, 0], xy[:, 1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)

    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    ix0 = np.clip(x0, 0, w - 1).astype(np.intp)
    iy0 = np.clip(y0, 0, h - 1).astype(np.intp)
    ix1 = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    iy1 = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy

    img = image.data
    vals = (
        w00 * img[:, iy0, ix0]
        + w01 * img[:, iy0, ix1]
        + w10 * img[:, iy1, ix0]
        + w11 * img[:, iy1, ix1]
    )
    vals[:, ~valid] = 0.0
    out = Tensor(vals)

    def backward(og):
        g = np.zeros_like(img)
        m = valid
        if m.any():
            gm = og[:, m]
            for wgt, iy, ix in (
                (w00, iy0, ix0),
                (w01, iy0, ix1),
                (w10, iy1, ix0),
                (w11, iy1, ix1),
            ):
                np.add.at(g, (slice(None), iy[m], ix[m]), gm * wgt[m])
        return (g,)

    return record(out, (image,), backward), valid


def _upsample_axis_weights(n: int):
    """Source indices and weights for 2x bilinear upsampling of an axis of length n."""
    dst = np.arange(2 * n, dtype=np.float64)
    src = np.clip((dst + 0.5) / 2.0 - 0.5, 0.0, n - 1)
    i0 = np.floor(src).astype(np.intp)
    i0 = np.minimum(i0, n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    return i0, i1, frac


def upsample2x_bilinear(t: Tensor) -> Tensor:
    """Bilinear 2x upsampling of a [C,H,W] tensor (half-pixel centers, edges clamped)."""
    if len(t.shape) != 3:
        raise DimensionError(f"upsample2x_bilinear: need [C,H,W], got {t.shape}")
    c, h, w = t.shape
    r0, r1, fy = _upsample_axis_weights(h)
    c0, c1, fx = _upsample_axis_weights(w)
    wy0, wy1 = (1 - fy)[:, None], fy[:, None]
    wx0, wx1 = (1 - fx)[None, :], fx[None, :]
    d = t.data
    out = (
        wy0 * (wx0 * d[:, r0][:, :, c0] + wx1 * d[:, r0][:, :, c1])
        + wy1 * (wx0 * d[:, r1][:, :, c0] + wx1 * d[:, r1][:, :, c1])
    )
    res = Tensor(out)

    def backward(og):
        g = np.zeros_like(d)
        rg0 = np.broadcast_to(r0[:, None], (2 * h, 2 * w))
        rg1 = np.broadcast_to(r1[:, None], (2 * h, 2 * w))
        cg0 = np.broadcast_to(c0[None, :], (2 * h, 2 * w))
        cg1 = np.broadcast_to(c1[None, :], (2 * h, 2 * w))
        np.add.at(g, (slice(None), rg0, cg0), og * (wy0 * wx0))
        np.add.at(g, (slice(None), rg0, cg1), og * (wy0 * wx1))
        np.add.at(g, (slice(None), rg1, cg0), og * (wy1 * wx0))
        np.add.at(g, (slice(None), rg1, cg1), og * (wy1 * wx1))
        return (g,)

    return record(res, (t,), backward)


def scatter_columns(values: Tensor, index: np.ndarray, num_cells: int) -> Tensor:
    """Sum columns of a [C, N] tensor into ``num_cells`` bins; index -1 drops a column.

    Linear in ``values``; the backward pass is the corresponding gather.
    """
    if len(values.shape) != 2:
        raise DimensionError(f"scatter_columns: need [C, N], got {values.shape}")
    index = np.asarray(index, dtype=np.intp)
    if index.shape != (values.shape[1],):
        raise DimensionError(
            f"scatter_columns: index shape {index.shape} != ({values.shape[1]},)"
        )
    if index.size and (index.max() >= num_cells or index.min() < -1):
        raise DimensionError("scatter_columns: index out of range")
    keep = index >= 0
    out = np.zeros((values.shape[0], num_cells))
    np.add.at(out, (slice(None), index[keep]), values.data[:, keep])
    res = Tensor(out)

    def backward(og):
        g = np.zeros_like(values.data)
        g[:, keep] = og[:, index[keep]]
        return (g,)

    return record(res, (values,), backward)


def pixelwise_outer(a: Tensor, b: Tensor) -> Tensor:
    """Per-pixel outer product of [A,H,W] and [B,H,W] giving [B,A,H,W]."""
    if len(a.shape) != 3 or len(b.shape) != 3 or a.shape[1:] != b.shape[1:]:
        raise DimensionError(
            f"pixelwise_outer: spatial dims must match, got {a.shape} and {b.shape}"
        )
    out = Tensor(b.data[:, None] * a.data[None, :])

    def backward(og):
        ga = (og * b.data[:, None]).sum(axis=0)
        gb = (og * a.data[None, :]).sum(axis=1)
        return ga, gb

    return record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def finite_diff_check(
    op: Callable[[Tensor], Tensor], inp: Tensor, eps: float = 1e-5
) -> float:
    """Max relative error between the taped gradient of ``op`` and central differences.

    ``op`` must map the input tensor to a scalar.  The error is
    |analytic - numeric| / max(1, |numeric|), maximized over elements.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"finite_diff_check: eps {eps} outside [1e-7, 1e-3]")
    x = Tensor(inp.data.copy(), requires_grad=True)
    with GradTape() as tape:
        y = op(x)
        if y.size != 1:
            raise DimensionError("finite_diff_check: op must be scalar-valued")
        tape.backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = op(Tensor(x.data)).item()
        flat[i] = orig - eps
        fm = op(Tensor(x.data)).item()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("finite_diff_check: non-finite perturbed evaluation")
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
