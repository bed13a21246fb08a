"""Complementary learning: token scoring, hard Gumbel selection, substitution and fusion."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Block
from .errors import ConfigError, InputError

GUMBEL_EPS = 1e-12


class ScorePredictor(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, 1)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(tokens)))


def predict_scores(z_rgb: torch.Tensor, z_sobel: torch.Tensor,
                   mlp_rgb: ScorePredictor, mlp_sobel: ScorePredictor) -> torch.Tensor:
    """Per-token importance pair, row-softmaxed: (B, N, 2)."""
    if z_rgb.shape != z_sobel.shape:
        raise InputError(f"token streams differ in shape: {tuple(z_rgb.shape)} vs {tuple(z_sobel.shape)}")
    scores = torch.cat([mlp_rgb(z_rgb), mlp_sobel(z_sobel)], dim=-1)
    return torch.softmax(scores, dim=-1)


def sample_gumbel(shape: tuple[int, ...], generator: torch.Generator | None = None,
                  dtype: torch.dtype = torch.float64) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    u = GUMBEL_EPS + (1.0 - 2.0 * GUMBEL_EPS) * u
    return -torch.log(-torch.log(u))


def one_hot_argmax(x: torch.Tensor) -> torch.Tensor:
    """Two-way argmax as a one-hot; ties go to column 0 (RGB)."""
    first = (x[..., 0] >= x[..., 1]).to(x.dtype)
    return torch.stack([first, 1.0 - first], dim=-1)


class _StraightThrough(torch.autograd.Function):
    """Forward: exact hard one-hot of ``y_soft``. Backward: identity into ``y_soft``."""

    @staticmethod
    def forward(ctx, y_soft):
        return one_hot_argmax(y_soft)

    @staticmethod
    def backward(ctx, grad):
        return grad


def gumbel_soft(logits: torch.Tensor, tau: float = 1.0, noise: torch.Tensor | None = None,
                generator: torch.Generator | None = None) -> torch.Tensor:
    """``softmax((logits + g) / tau)`` with Gumbel(0, 1) noise ``g``."""
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if noise is None:
        noise = sample_gumbel(tuple(logits.shape), generator, logits.dtype)
    return torch.softmax((logits + noise) / tau, dim=-1)


def gumbel_hard_mask(logits: torch.Tensor, tau: float = 1.0, generator: torch.Generator | int | None = None,
                     training: bool = True, noise: torch.Tensor | None = None) -> torch.Tensor:
    """Complementary mask (..., 2): exact one-hot rows, column 0 selects RGB.

    In training the rows are hard Gumbel-softmax samples with a straight-through
    gradient (backward sees the soft sample). At inference there is no noise and
    the mask is the plain row argmax of ``logits``, with no gradient.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if not training:
        return one_hot_argmax(logits.detach())
    if isinstance(generator, int):
        generator = torch.Generator().manual_seed(generator)
    y_soft = gumbel_soft(logits, tau, noise, generator)
    return _StraightThrough.apply(y_soft)


def substitute(z_rgb: torch.Tensor, z_sobel: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return mask[..., 0:1] * z_rgb + mask[..., 1:2] * z_sobel


def fuse_maps(a_rgb: torch.Tensor, a_sobel: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """``M * a_rgb + (1 - M) * a_sobel`` with M the RGB column reshaped to the map grid."""
    m = mask[..., 0].reshape(a_rgb.shape)
    return m * a_rgb + (1.0 - m) * a_sobel


class FusionHead(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.block = Block(dim, heads)
        self.fc = nn.Linear(dim, 2)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return fusion_classify(tokens, self)


def fusion_classify(tokens: torch.Tensor, head: FusionHead) -> torch.Tensor:
    """One encoder block, mean over tokens, linear to two classes, softmax."""
    pooled = head.block(tokens).mean(dim=1)
    return torch.softmax(head.fc(pooled), dim=-1)
