"""Classification attentive regions proposal: class channel banks, scores and maps.

A bank tensor ``fp`` has shape (B, 2, d, h, w): class-major, then the d
channels assigned to that class, then the token grid.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ConfigError


class CarpHead(nn.Module):
    """1x1 convolution over the token grid producing ``2*d`` channels."""

    def __init__(self, dim: int, channels: int):
        super().__init__()
        if channels < 1:
            raise ConfigError(f"carp channels must be >= 1, got {channels}")
        self.channels = channels
        self.proj = nn.Linear(dim, 2 * channels)

    def forward(self, tokens: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        return grid_project(tokens, grid, self)


def grid_project(tokens: torch.Tensor, grid: tuple[int, int], head: CarpHead) -> torch.Tensor:
    b, n, dim = tokens.shape
    h, w = grid
    if n != h * w or dim != head.proj.in_features:
        raise ConfigError(f"tokens {tuple(tokens.shape)} do not match grid {grid} / head dim {head.proj.in_features}")
    f = head.proj(tokens)  # pointwise over positions == 1x1 conv
    return f.reshape(b, h, w, 2, head.channels).permute(0, 3, 4, 1, 2)


def spatial_max(fp: torch.Tensor) -> torch.Tensor:
    """Spatial max of every channel; gradient goes to the first maximal position only."""
    flat = fp.flatten(-2)
    idx = flat.argmax(dim=-1, keepdim=True)
    return flat.gather(-1, idx).squeeze(-1)


def pool_scores(fp: torch.Tensor) -> torch.Tensor:
    """Spatial max, then channel mean per class, then softmax -> (B, 2) probabilities."""
    s = spatial_max(fp).mean(dim=-1)
    return torch.softmax(s, dim=-1)


def car_map(fp: torch.Tensor, scores: torch.Tensor) -> torch.Tensor:
    """``sigmoid(sum_c y_c * channel_mean(fp_c))`` -> (B, h, w) in (0, 1)."""
    avg = fp.mean(dim=2)
    return torch.sigmoid((scores[:, :, None, None] * avg).sum(dim=1))


def fake_only_map(fp: torch.Tensor, scores: torch.Tensor) -> torch.Tensor:
    """Fake-class term only: ``sigmoid(y_1 * channel_mean(fp_1))``."""
    return torch.sigmoid(scores[:, 1, None, None] * fp[:, 1].mean(dim=1))
