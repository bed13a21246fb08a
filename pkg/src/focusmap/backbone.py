"""Patch embedding, fixed positional encoding and the transformer encoder."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, NumericError

LN_EPS = 1e-6


def fixed_pos_encoding(h: int, w: int, dim: int) -> np.ndarray:
    """2-D sin-cos table of shape (h*w, dim).

    The first ``dim/2`` channels encode the row index and the rest the column
    index, each as ``[sin(pos*f_k), cos(pos*f_k)]`` with ``f_k = 10000**(-k/(dim/4))``.
    """
    if dim % 4:
        raise ConfigError(f"positional encoding dim must be divisible by 4, got {dim}")
    quarter = dim // 4
    freqs = 1.0 / 10000.0 ** (np.arange(quarter) / quarter)

    def encode(pos: np.ndarray) -> np.ndarray:
        angles = pos[:, None] * freqs[None, :]
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    rows, cols = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    return np.concatenate([encode(rows.ravel()), encode(cols.ravel())], axis=1)


def init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def patchify(images: torch.Tensor, patch: int) -> torch.Tensor:
    """(B, H, W, C) -> (B, N, P*P*C), patches in row-major grid order."""
    b, hh, ww, c = images.shape
    if hh % patch or ww % patch:
        raise ConfigError(f"image size {hh}x{ww} is not divisible by patch size {patch}")
    h, w = hh // patch, ww // patch
    x = images.reshape(b, h, patch, w, patch, c).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h * w, patch * patch * c)


class PatchEmbed(nn.Module):
    def __init__(self, patch: int, dim: int, channels: int = 3):
        super().__init__()
        self.patch = patch
        self.proj = nn.Linear(patch * patch * channels, dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.proj(patchify(images, self.patch))


def patchify_embed(images: torch.Tensor, embed: PatchEmbed, pos_enc: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
    """Embed patches and add the positional table; returns tokens and grid shape."""
    tokens = embed(images) + pos_enc
    p = embed.patch
    return tokens, (images.shape[1] // p, images.shape[2] // p)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"heads ({heads}) must divide dim ({dim})")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, dim = x.shape
        hd = dim // self.heads
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-2, -1) / hd**0.5, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, dim)
        return self.proj(out)


class Block(nn.Module):
    """Pre-norm encoder block: ``z' = MHSA(LN(z)) + z; z = MLP(LN(z')) + z'``."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=LN_EPS)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=LN_EPS)
        self.fc1 = nn.Linear(dim, mlp_ratio * dim)
        self.fc2 = nn.Linear(mlp_ratio * dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class Encoder(nn.Module):
    def __init__(self, dim: int, depth: int, heads: int):
        super().__init__()
        self.blocks = nn.ModuleList(Block(dim, heads) for _ in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activation after encoder block {i}")
        return x


def encoder_forward(tokens: torch.Tensor, encoder: Encoder) -> torch.Tensor:
    return encoder(tokens)


class Branch(nn.Module):
    """One modality branch: patch embedding, positional table, encoder.

    ``pos_enc`` is passed in so both branches hold the same table. With
    ``use_class_token`` a learned token is prepended for the encoder and
    dropped from the output; only image tokens leave the branch.
    """

    def __init__(self, patch: int, dim: int, depth: int, heads: int, pos_enc: torch.Tensor,
                 use_class_token: bool = False):
        super().__init__()
        self.embed = PatchEmbed(patch, dim)
        self.register_buffer("pos_enc", pos_enc, persistent=False)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim)) if use_class_token else None
        self.encoder = Encoder(dim, depth, heads)

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        tokens, grid = patchify_embed(images, self.embed, self.pos_enc)
        if self.cls_token is None:
            return self.encoder(tokens), grid
        cls = self.cls_token.expand(tokens.shape[0], -1, -1)
        out = self.encoder(torch.cat([cls, tokens], dim=1))
        return out[:, 1:], grid
