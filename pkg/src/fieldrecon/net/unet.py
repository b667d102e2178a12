"""U-Net skeleton shared by the diffusion denoiser and the VT-UNet baseline."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .encoder import ConditionEncoder
from .layers import (Conv3x3, CrossAttention2d, Downsample, FiLM, NoiseEmbedding, ResBlock,
                     SelfAttention2d, Upsample, _groups, num_heads)

MODES = ("unconditional", "cfg", "cross-attention", "vtunet")
BOTTLENECK = 8


def n_blocks_for(resolution: int) -> int:
    n = math.log2(resolution / BOTTLENECK)
    if n < 1 or n != int(n):
        raise ValueError(f"resolution {resolution} must be 8 * 2^k with k >= 1")
    return int(n)


@dataclass
class ModelConfig:
    mode: str = "cross-attention"
    channels: int = 2  # field channels
    resolution: int = 32
    first_width: int = 32
    width: int = 64
    emb_dim: int = 128
    groups: int = 8
    head_dim: int = 32
    # condition encoder
    patch: int = 4
    token_dim: int = 128
    encoder_layers: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        n_blocks_for(self.resolution)

    @property
    def n_blocks(self) -> int:
        return n_blocks_for(self.resolution)

    @property
    def widths(self) -> list[int]:
        return [self.first_width] + [self.width] * (self.n_blocks - 1)

    @property
    def conditional(self) -> bool:
        return self.mode in ("cfg", "cross-attention")

    def to_dict(self) -> dict:
        return asdict(self)


class UNet(nn.Module):
    """Down blocks to an 8x8 bottleneck with self-attention, then symmetric up blocks.

    ``emb_dim`` enables FiLM modulation of every residual block; ``token_dim``
    adds a cross-attention layer after each block's residual stage and in the
    middle block.
    """

    def __init__(self, in_channels: int, out_channels: int, widths: list[int],
                 emb_dim: int | None = None, token_dim: int | None = None,
                 groups: int = 8, head_dim: int = 32):
        super().__init__()
        self.conv_in = Conv3x3(in_channels, widths[0])
        self.down_res = nn.ModuleList()
        self.down_xattn = nn.ModuleList()
        self.downs = nn.ModuleList()
        cin = widths[0]
        for w in widths:
            self.down_res.append(ResBlock(cin, w, emb_dim, groups))
            self.down_xattn.append(
                CrossAttention2d(w, token_dim, num_heads(w, head_dim), groups) if token_dim else nn.Identity())
            self.downs.append(Downsample(w))
            cin = w
        mid = widths[-1]
        self.mid_res1 = ResBlock(mid, mid, emb_dim, groups)
        self.mid_attn = SelfAttention2d(mid, num_heads(mid, head_dim), groups)
        self.mid_xattn = CrossAttention2d(mid, token_dim, num_heads(mid, head_dim), groups) if token_dim else nn.Identity()
        self.mid_res2 = ResBlock(mid, mid, emb_dim, groups)
        self.ups = nn.ModuleList()
        self.up_res = nn.ModuleList()
        self.up_xattn = nn.ModuleList()
        cin = mid
        for w in reversed(widths):
            self.ups.append(Upsample(cin))
            self.up_res.append(ResBlock(cin + w, w, emb_dim, groups))
            self.up_xattn.append(
                CrossAttention2d(w, token_dim, num_heads(w, head_dim), groups) if token_dim else nn.Identity())
            cin = w
        self.norm_out = nn.GroupNorm(_groups(widths[0], groups), widths[0])
        self.conv_out = Conv3x3(widths[0], out_channels)
        self.act = nn.SiLU()
        self.has_xattn = token_dim is not None

    def _xattn(self, layer, h, tokens):
        return layer(h, tokens) if self.has_xattn else h

    def forward(self, x, emb=None, tokens=None):
        if self.has_xattn and tokens is None:
            raise ValueError("cross-attention network requires condition tokens")
        h = self.conv_in(x)
        skips = []
        for res, xattn, down in zip(self.down_res, self.down_xattn, self.downs):
            h = self._xattn(xattn, res(h, emb), tokens)
            skips.append(h)
            h = down(h)
        self.bottleneck_shape = tuple(h.shape[-2:])
        h = self.mid_res1(h, emb)
        h = self.mid_attn(h)
        h = self._xattn(self.mid_xattn, h, tokens)
        h = self.mid_res2(h, emb)
        for up, res, xattn in zip(self.ups, self.up_res, self.up_xattn):
            h = up(h)
            h = torch.cat([h, skips.pop()], dim=1)
            h = self._xattn(xattn, res(h, emb), tokens)
        return self.conv_out(self.act(self.norm_out(h)))


class DenoiserNet(nn.Module):
    """Raw network F_theta(c_in * x; c_noise, condition)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.mode == "vtunet":
            raise ValueError("use VtUnet for the deterministic baseline")
        self.cfg = cfg
        self.noise_embed = NoiseEmbedding(cfg.emb_dim)
        self.cfg_film = FiLM(cfg.token_dim, cfg.emb_dim) if cfg.mode == "cfg" else None
        self.unet = UNet(cfg.channels, cfg.channels, cfg.widths, emb_dim=cfg.emb_dim,
                         token_dim=cfg.token_dim if cfg.mode == "cross-attention" else None,
                         groups=cfg.groups, head_dim=cfg.head_dim)

    def forward(self, x_in, c_noise, condition=None):
        emb = self.noise_embed(c_noise)
        mode = self.cfg.mode
        if mode == "unconditional":
            if condition is not None:
                raise ValueError("unconditional network takes no condition")
            return self.unet(x_in, emb)
        if condition is None:
            raise ValueError(f"{mode} network requires a condition")
        if mode == "cfg":
            if condition.ndim != 2:
                raise ValueError("cfg mode expects a pooled (B, D) condition")
            return self.unet(x_in, self.cfg_film(emb, condition))
        if condition.ndim != 3:
            raise ValueError("cross-attention mode expects (B, T, D) condition tokens")
        return self.unet(x_in, emb, tokens=condition)


class VtUnet(nn.Module):
    """Deterministic baseline: tessellation + sensor indicator -> field."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.unet = UNet(cfg.channels + 1, cfg.channels, cfg.widths, groups=cfg.groups, head_dim=cfg.head_dim)

    def forward(self, voronoi, indicator):
        if voronoi.shape[-2:] != indicator.shape[-2:]:
            raise ValueError("tessellation and indicator grids differ")
        return self.unet(torch.cat([voronoi, indicator], dim=1))


class FieldModel(nn.Module):
    """Bundle of network + (optional) condition encoder for one training mode."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.mode == "vtunet":
            self.net = VtUnet(cfg)
            self.encoder = None
        else:
            self.net = DenoiserNet(cfg)
            self.encoder = (ConditionEncoder(cfg.channels, cfg.resolution, cfg.patch, cfg.token_dim,
                                             cfg.encoder_layers, num_heads(cfg.token_dim, cfg.head_dim))
                            if cfg.conditional else None)

    @property
    def mode(self) -> str:
        return self.cfg.mode

    def encode(self, voronoi, indicator, null=None):
        """Condition in the form the network consumes (tokens or pooled vector)."""
        tokens, pooled = self.encoder(voronoi, indicator, null)
        return pooled if self.mode == "cfg" else tokens

    def null_condition(self, batch: int):
        tokens, pooled = self.encoder.null(batch)
        return pooled if self.mode == "cfg" else tokens

    def forward(self, x_in, c_noise, condition=None):
        return self.net(x_in, c_noise, condition)


def build_model(cfg: ModelConfig, seed: int = 0) -> FieldModel:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = FieldModel(cfg)
    finally:
        torch.random.set_rng_state(gen_state)
    return model
