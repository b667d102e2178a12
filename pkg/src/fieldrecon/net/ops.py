"""Differentiable primitives on torch tensors.

Autograd supplies the backward pass; these wrappers pin the exact forward
definitions and the shape contracts the layers rely on.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
           stride: int = 1, padding: int = 1) -> torch.Tensor:
    """Cross-correlation of (B, Cin, H, W) with (Cout, Cin, k, k) kernels."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {tuple(x.shape)} and {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def downsample(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """3x3 stride-2 convolution halving the spatial size."""
    return conv2d(x, weight, bias, stride=2, padding=1)


def upsample_nearest(x: torch.Tensor) -> torch.Tensor:
    """Duplicate each cell into a 2x2 block."""
    return x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)


def film(h: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Feature-wise ``scale * h + shift``.

    ``scale``/``shift`` are either per-channel, shaped (C,) or (B, C) for h of
    shape (B, C, ...), or full-size maps matching h exactly.
    """
    if scale.shape != shift.shape:
        raise ValueError("scale and shift must have the same shape")
    if scale.shape == h.shape:
        return h * scale + shift
    if scale.shape[-1] != h.shape[1]:
        raise ValueError(f"FiLM vectors have length {scale.shape[-1]}, hidden has {h.shape[1]} channels")
    if scale.ndim == 1:
        scale, shift = scale[None], shift[None]
    tail = (1,) * (h.ndim - 2)
    return h * scale.reshape(*scale.shape, *tail) + shift.reshape(*shift.shape, *tail)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
              return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    w = torch.softmax(logits, dim=-1)
    out = w @ v
    return (out, w) if return_weights else out


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    b, h, n, d = x.shape
    return x.transpose(1, 2).reshape(b, n, h * d)


def sinusoidal_embedding(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """(B,) scalars -> (B, dim) cos/sin features."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=x.dtype, device=x.device) / half)
    args = x.reshape(-1, 1) * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=1)
