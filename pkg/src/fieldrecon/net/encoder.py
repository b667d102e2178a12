from __future__ import annotations

import torch
from torch import nn

from . import ops
from .layers import TransformerLayer, num_heads


class ConditionEncoder(nn.Module):
    """Encode Voronoi-tessellated fields and sensor positions into tokens.

    Both inputs are patch-embedded; the position embedding modulates the
    tessellation embedding through FiLM, followed by an MLP and a stack of
    self-attention layers. ``forward`` returns the token sequence (for
    cross-attention) and its mean-pooled vector (for CFG).
    """

    def __init__(self, in_channels: int, resolution: int, patch: int = 4, dim: int = 128,
                 n_layers: int = 2, heads: int | None = None):
        super().__init__()
        if resolution % patch:
            raise ValueError(f"resolution {resolution} is not divisible by patch size {patch}")
        self.patch = patch
        self.resolution = resolution
        self.dim = dim
        self.n_tokens = (resolution // patch) ** 2
        self.tess_embed = nn.Conv2d(in_channels, dim, patch, stride=patch)
        self.pos_embed = nn.Conv2d(1, dim, patch, stride=patch)
        self.film = nn.Conv2d(dim, 2 * dim, 1)
        nn.init.zeros_(self.film.weight)
        nn.init.zeros_(self.film.bias)
        self.grid_embed = nn.Parameter(torch.randn(1, self.n_tokens, dim) * 0.02)
        self.mlp = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, 2 * dim), nn.SiLU(), nn.Linear(2 * dim, dim))
        heads = heads or num_heads(dim)
        self.layers = nn.ModuleList(TransformerLayer(dim, heads) for _ in range(n_layers))
        self.norm = nn.LayerNorm(dim)
        self.null_tokens = nn.Parameter(torch.randn(1, self.n_tokens, dim) * 0.02)

    def null(self, batch: int) -> tuple[torch.Tensor, torch.Tensor]:
        tokens = self.null_tokens.expand(batch, -1, -1)
        return tokens, tokens.mean(dim=1)

    def forward(self, voronoi: torch.Tensor, indicator: torch.Tensor,
                null: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        if voronoi.shape[-2:] != indicator.shape[-2:]:
            raise ValueError("tessellation and indicator grids differ")
        if voronoi.shape[-1] % self.patch or voronoi.shape[-2] % self.patch:
            raise ValueError(f"grid {tuple(voronoi.shape[-2:])} not divisible by patch {self.patch}")
        t = self.tess_embed(voronoi)
        delta, shift = self.film(self.pos_embed(indicator)).chunk(2, dim=1)
        t = ops.film(t, 1.0 + delta, shift)
        tokens = t.flatten(2).transpose(1, 2) + self.grid_embed
        tokens = tokens + self.mlp(tokens)
        for layer in self.layers:
            tokens = layer(tokens)
        tokens = self.norm(tokens)
        if null is not None:
            keep = (~null.bool()).to(tokens.dtype).reshape(-1, 1, 1)
            tokens = keep * tokens + (1 - keep) * self.null_tokens.to(tokens.dtype)
        return tokens, tokens.mean(dim=1)
