"""Differentiable fusion operators joining the satellite and street branches.

The central contract is dynamic decoupling: a predicted dynamic-region
attention map gates the satellite features so that, where the map
saturates at 1, the fused output carries no dependence on the satellite
branch at all. In float64 that suppression is exact: sigmoid(x) rounds
to 1.0 for x >= 37, and 1 - map is then identically zero.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    affine,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d,
    elementwise_mul,
    sigmoid,
    upsample2x_bilinear,
)


class WeightFormatError(ValueError):
    """Malformed weight checkpoint."""


@dataclass
class DynAttention:
    """Dynamic-region attention: ``map`` = sigmoid(``pre_activation``)."""

    pre_activation: Tensor  # [1, X, Y]
    map: Tensor  # [1, X, Y]

    def __post_init__(self):
        if self.pre_activation.shape != self.map.shape:
            raise DimensionError("pre_activation and map must share a shape")
        if len(self.map.shape) != 3 or self.map.shape[0] != 1:
            raise DimensionError(f"attention must be [1, X, Y], got {self.map.shape}")

    @classmethod
    def from_logits(cls, pre_activation: Tensor) -> "DynAttention":
        return cls(pre_activation, sigmoid(pre_activation))


_WEIGHT_FIELDS = (
    "gate_kernel",
    "gate_feat_kernel",
    "dyn_kernel",
    "ddf_kernel",
    "sa_kernel",
    "dual_kernel",
)


@dataclass
class FusionWeights:
    """Learnable kernels for the fusion operators, one shared channel width C.

    gate_kernel / gate_feat_kernel: [C, S, 3, 3] stride-2 pair over S-channel
    satellite input; dyn_kernel: [1, C, 3, 3]; ddf_kernel: [C, 2C, 3, 3];
    sa_kernel: [1, 2, 7, 7]; dual_kernel: [C, D+C, 1, 1].
    """

    gate_kernel: Tensor
    gate_feat_kernel: Tensor
    dyn_kernel: Tensor
    ddf_kernel: Tensor
    sa_kernel: Tensor
    dual_kernel: Tensor

    def __post_init__(self):
        for name in _WEIGHT_FIELDS:
            t = getattr(self, name)
            if len(t.shape) != 4:
                raise DimensionError(f"{name} must be rank 4, got {t.shape}")
            if not np.all(np.isfinite(t.data)):
                raise WeightFormatError(f"{name} holds non-finite values")
        c = self.channels
        if self.gate_kernel.shape != self.gate_feat_kernel.shape:
            raise DimensionError("gate and gate-feature kernels must match shapes")
        if self.gate_kernel.shape[0] != c:
            raise DimensionError(
                f"gate kernel outputs {self.gate_kernel.shape[0]} channels, plan says {c}"
            )
        if self.dyn_kernel.shape[:2] != (1, c):
            raise DimensionError(f"dyn kernel must be [1, {c}, 3, 3], got {self.dyn_kernel.shape}")
        if self.ddf_kernel.shape[1] != 2 * c:
            raise DimensionError(
                f"ddf kernel takes {self.ddf_kernel.shape[1]} channels, plan says {2 * c}"
            )
        if self.sa_kernel.shape != (1, 2, 7, 7):
            raise DimensionError(f"sa kernel must be [1, 2, 7, 7], got {self.sa_kernel.shape}")
        if self.dual_kernel.shape[0] != c or self.dual_kernel.shape[2:] != (1, 1):
            raise DimensionError(f"dual kernel must be [{c}, D+{c}, 1, 1], got {self.dual_kernel.shape}")
        if self.dual_kernel.shape[1] <= c:
            raise DimensionError("dual kernel input must include at least one depth channel")

    @property
    def channels(self) -> int:
        return self.ddf_kernel.shape[0]

    @property
    def lss_channels(self) -> int:
        return self.dual_kernel.shape[1] - self.channels

    @classmethod
    def random(cls, rng, channels: int = 8, sat_in: int = 3, lss_channels: int = 4,
               scale: float = 1.0) -> "FusionWeights":
        def k(*shape):
            fan_in = int(np.prod(shape[1:]))
            return Tensor(rng.normal(0.0, scale / np.sqrt(fan_in), size=shape), requires_grad=True)

        return cls(
            gate_kernel=k(channels, sat_in, 3, 3),
            gate_feat_kernel=k(channels, sat_in, 3, 3),
            dyn_kernel=k(1, channels, 3, 3),
            ddf_kernel=k(channels, 2 * channels, 3, 3),
            sa_kernel=k(1, 2, 7, 7),
            dual_kernel=k(channels, lss_channels + channels, 1, 1),
        )

    def tensors(self) -> list:
        return [getattr(self, name) for name in _WEIGHT_FIELDS]


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def soft_gate(s: Tensor, weights: FusionWeights) -> Tensor:
    """Stride-2 feature conv modulated by a stride-2 sigmoid gate."""
    if len(s.shape) != 3:
        raise DimensionError(f"soft_gate input must be [S, H, W], got {s.shape}")
    if s.shape[1] % 2 or s.shape[2] % 2:
        raise DimensionError(f"soft_gate needs even spatial dims, got {s.shape}")
    alpha = sigmoid(conv2d(s, weights.gate_kernel, stride=2, pad=1))
    f_half = conv2d(s, weights.gate_feat_kernel, stride=2, pad=1)
    return elementwise_mul(f_half, alpha)


def u_fuse(f_half: Tensor, f_quarter: Tensor, f_context: Tensor) -> Tensor:
    """Two upsample-and-concat steps from 1/8 context up to the 1/2 scale."""
    for name, lo, hi in (("quarter/context", f_context, f_quarter),
                         ("half/quarter", f_quarter, f_half)):
        if (2 * lo.shape[1], 2 * lo.shape[2]) != (hi.shape[1], hi.shape[2]):
            raise DimensionError(
                f"{name} scales off by  {lo.shape} -> {hi.shape}, expected exact doubling"
            )
    first = concat_channels([f_quarter, upsample2x_bilinear(f_context)])
    return concat_channels([f_half, upsample2x_bilinear(first)])


def dyn_head(street_bev: Tensor, weights: FusionWeights) -> DynAttention:
    """One-channel 3x3 conv head predicting the dynamic-region map."""
    pre = conv2d(street_bev, weights.dyn_kernel, stride=1, pad=1)
    return DynAttention.from_logits(pre)


def ddf_fuse(f_sat: Tensor, f_street: Tensor, dyn: DynAttention,
             weights: FusionWeights) -> Tensor:
    """conv([f_sat * (1 - map); f_street]); map -> 1 removes the satellite
    contribution entirely, map -> 0 passes it through unattenuated."""
    if f_sat.shape != f_street.shape:
        raise DimensionError(f"branch shapes differ: {f_sat.shape} vs {f_street.shape}")
    if f_sat.shape[1:] != dyn.map.shape[1:]:
        raise DimensionError(f"attention {dyn.map.shape} does not cover {f_sat.shape}")
    damped = elementwise_mul(f_sat, affine(dyn.map, -1.0, 1.0))
    return conv2d(concat_channels([damped, f_street]), weights.ddf_kernel, stride=1, pad=1)


def dsa_refine(f_fused: Tensor, dyn: DynAttention, weights: FusionWeights) -> Tensor:
    """Spatial attention with dynamic encoding: the one-channel 7x7 attention
    logit is shifted by the dynamic pre-activation before the sigmoid, so
    confidently dynamic regions stay near full weight regardless of content."""
    if f_fused.shape[1:] != dyn.map.shape[1:]:
        raise DimensionError(f"attention {dyn.map.shape} does not cover {f_fused.shape}")
    pooled = concat_channels([channel_mean(f_fused), channel_max(f_fused)])
    sa = conv2d(pooled, weights.sa_kernel, stride=1, pad=3)
    att = sigmoid(add(sa, dyn.pre_activation))
    return elementwise_mul(f_fused, att)


def dual_feature_fuse(f_lss: Tensor, f_unisa: Tensor, weights: FusionWeights) -> Tensor:
    """1x1 projection of the concatenated depth-splat and preset-point BEVs."""
    if f_lss.shape[1:] != f_unisa.shape[1:]:
        raise DimensionError(f"spatial dims differ: {f_lss.shape} vs {f_unisa.shape}")
    if f_lss.shape[0] + f_unisa.shape[0] != weights.dual_kernel.shape[1]:
        raise DimensionError(
            f"dual kernel expects {weights.dual_kernel.shape[1]} channels, "
            f"got {f_lss.shape[0]} + {f_unisa.shape[0]}"
        )
    return conv2d(concat_channels([f_lss, f_unisa]), weights.dual_kernel, stride=1, pad=0)


# ---------------------------------------------------------------------------
# checkpoint IO
# ---------------------------------------------------------------------------

WEIGHT_MAGIC = b"SAWT"


def weights_write(path, weights: FusionWeights) -> None:
    """Flat binary: magic, u32 tensor count, then per tensor u32 rank,
    u32 dims, little-endian float64 payload. Field order is fixed."""
    chunks = [WEIGHT_MAGIC, struct.pack("<I", len(_WEIGHT_FIELDS))]
    for t in weights.tensors():
        chunks.append(struct.pack("<I", len(t.shape)))
        chunks.append(struct.pack(f"<{len(t.shape)}I", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def weights_read(path) -> FusionWeights:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != WEIGHT_MAGIC:
        raise WeightFormatError(f"{path}: bad magic")
    (count,) = struct.unpack_from("<I", raw, 4)
    if count != len(_WEIGHT_FIELDS):
        raise WeightFormatError(
            f"{path}: checkpoint has {count} tensors, expected {len(_WEIGHT_FIELDS)}"
        )
    off = 8
    arrays = []
    for _ in range(count):
        try:
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(raw, dtype="<f8", count=n, offset=off)
            off += 8 * n
        except (struct.error, ValueError) as exc:
            raise WeightFormatError(f"{path}: truncated checkpoint: {exc}") from exc
        arrays.append(data.reshape(dims).copy())
    return FusionWeights(*[Tensor(a, requires_grad=True) for a in arrays])
