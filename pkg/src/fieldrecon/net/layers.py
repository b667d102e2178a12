from __future__ import annotations

import torch
from torch import nn

from . import ops


def _groups(channels: int, groups: int) -> int:
    g = min(groups, channels)
    while channels % g:
        g -= 1
    return g


class Conv3x3(nn.Conv2d):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__(cin, cout, 3, stride=stride, padding=1)

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride[0], padding=1)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return ops.downsample(x, self.conv.weight, self.conv.bias)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = Conv3x3(channels, channels)

    def forward(self, x):
        return self.conv(ops.upsample_nearest(x))


class FiLM(nn.Module):
    """Scale/shift from a conditioning vector; scale is ``1 + delta``."""

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(cond_dim, 2 * channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h, cond):
        delta, shift = self.proj(cond).chunk(2, dim=-1)
        return ops.film(h, 1.0 + delta, shift)


class NoiseEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, c_noise):
        return self.mlp(ops.sinusoidal_embedding(c_noise, self.dim))


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int | None = None, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin, groups), cin)
        self.conv1 = Conv3x3(cin, cout)
        self.norm2 = nn.GroupNorm(_groups(cout, groups), cout)
        self.film = FiLM(emb_dim, cout) if emb_dim else None
        self.conv2 = Conv3x3(cout, cout)
        self.act = nn.SiLU()
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb=None):
        h = self.conv1(self.act(self.norm1(x)))
        h = self.norm2(h)
        if self.film is not None:
            h = self.film(h, emb)
        h = self.conv2(self.act(h))
        return self.skip(x) + h


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int, heads: int = 1, groups: int = 8):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(_groups(channels, groups), channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x):
        b, c, hgt, wid = x.shape
        tokens = self.norm(x).flatten(2).transpose(1, 2)
        q, k, v = (ops.split_heads(t, self.heads) for t in self.qkv(tokens).chunk(3, dim=-1))
        h = ops.merge_heads(ops.attention(q, k, v))
        return x + self.out(h).transpose(1, 2).reshape(b, c, hgt, wid)


class CrossAttention2d(nn.Module):
    """Queries from hidden states, keys/values from condition tokens."""

    def __init__(self, channels: int, token_dim: int, heads: int = 1, groups: int = 8):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(_groups(channels, groups), channels)
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(token_dim, channels)
        self.v = nn.Linear(token_dim, channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x, tokens):
        b, c, hgt, wid = x.shape
        hidden = self.norm(x).flatten(2).transpose(1, 2)
        q = ops.split_heads(self.q(hidden), self.heads)
        k = ops.split_heads(self.k(tokens), self.heads)
        v = ops.split_heads(self.v(tokens), self.heads)
        h = ops.merge_heads(ops.attention(q, k, v))
        return x + self.out(h).transpose(1, 2).reshape(b, c, hgt, wid)


class TransformerLayer(nn.Module):
    def __init__(self, dim: int, heads: int = 4, mlp_ratio: int = 2):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.SiLU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x):
        q, k, v = (ops.split_heads(t, self.heads) for t in self.qkv(self.norm1(x)).chunk(3, dim=-1))
        x = x + self.proj(ops.merge_heads(ops.attention(q, k, v)))
        return x + self.mlp(self.norm2(x))


def num_heads(channels: int, head_dim: int = 32) -> int:
    h = max(1, channels // head_dim)
    while channels % h:
        h -= 1
    return h
