"""The two-branch map generator: RGB and Sobel encoders, CARP heads, complementary fusion."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import Branch, fixed_pos_encoding, init_weights
from .carp import CarpHead, car_map, fake_only_map, pool_scores
from .fusion import (FusionHead, ScorePredictor, fuse_maps, fusion_classify, gumbel_hard_mask, gumbel_soft,
                     predict_scores, substitute)


@dataclass
class FocusOutput:
    y_loc_rgb: torch.Tensor
    y_loc_sobel: torch.Tensor
    y_fus: torch.Tensor
    logits: torch.Tensor
    mask: torch.Tensor
    a_rgb: torch.Tensor
    a_sobel: torch.Tensor
    a_fus: torch.Tensor
    fp_rgb: torch.Tensor
    fp_sobel: torch.Tensor

    def fake_only(self) -> torch.Tensor:
        """Fused map built from the fake-class banks alone."""
        a_rgb = fake_only_map(self.fp_rgb, self.y_loc_rgb)
        a_sobel = fake_only_map(self.fp_sobel, self.y_loc_sobel)
        return fuse_maps(a_rgb, a_sobel, self.mask)


class FocusNet(nn.Module):
    def __init__(self, image_size: int, patch_size: int, embed_dim: int, depth: int, heads: int,
                 carp_channels: int, tau: float = 1.0, use_class_token: bool = False):
        super().__init__()
        h = w = image_size // patch_size
        pos = torch.as_tensor(fixed_pos_encoding(h, w, embed_dim), dtype=torch.get_default_dtype())
        self.tau = tau
        self.rgb = Branch(patch_size, embed_dim, depth, heads, pos, use_class_token)
        self.sobel = Branch(patch_size, embed_dim, depth, heads, pos, use_class_token)
        self.carp_rgb = CarpHead(embed_dim, carp_channels)
        self.carp_sobel = CarpHead(embed_dim, carp_channels)
        self.score_rgb = ScorePredictor(embed_dim)
        self.score_sobel = ScorePredictor(embed_dim)
        self.fusion = FusionHead(embed_dim, heads)
        self.apply(init_weights)

    @classmethod
    def from_config(cls, config) -> "FocusNet":
        return cls(config.image_size, config.patch_size, config.embed_dim, config.depth, config.heads,
                   config.carp_channels, config.tau, config.use_class_token)

    def forward(self, images: torch.Tensor, sobel: torch.Tensor, training: bool = True,
                generator: torch.Generator | None = None, noise: torch.Tensor | None = None,
                soft: bool = False) -> FocusOutput:
        """Run both branches and the fusion stage on (B, H, W, 3) inputs.

        ``soft=True`` replaces the hard mask with the relaxed Gumbel sample
        (differentiable everywhere, used for gradient checks).
        """
        z_rgb, grid = self.rgb(images)
        z_sobel, _ = self.sobel(sobel)

        fp_rgb = self.carp_rgb(z_rgb, grid)
        fp_sobel = self.carp_sobel(z_sobel, grid)
        y_rgb = pool_scores(fp_rgb)
        y_sobel = pool_scores(fp_sobel)
        a_rgb = car_map(fp_rgb, y_rgb)
        a_sobel = car_map(fp_sobel, y_sobel)

        logits = predict_scores(z_rgb, z_sobel, self.score_rgb, self.score_sobel)
        if soft:
            mask = gumbel_soft(logits, self.tau, noise, generator)
        else:
            mask = gumbel_hard_mask(logits, self.tau, generator, training, noise)
        z_fus = substitute(z_rgb, z_sobel, mask)
        y_fus = fusion_classify(z_fus, self.fusion)
        a_fus = fuse_maps(a_rgb, a_sobel, mask)
        return FocusOutput(y_rgb, y_sobel, y_fus, logits, mask, a_rgb, a_sobel, a_fus, fp_rgb, fp_sobel)
