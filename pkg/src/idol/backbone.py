"""Encoder backbone: per-frame CNN encoders, attention-gated recurrent fusion
of the two frames with the correlation factors, and Gaussian sampling of the
initial identity token.

The frame encoder is a compact 4-block CNN (two convs per block, widths
16/32/64/64, stride-2 downsampling); each frame index has its own weights.
Fusion runs an LSTM-style recurrence over the token sequence, applying
single-head self-attention to the hidden state before gating and concatenating
an embedding of the correlation factors into every state update.  The initial
identity token is drawn by reparameterized sampling from the per-sample token
statistics of the fused embedding.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import torch
import torch.nn as nn

SIGMA_FLOOR = 1e-4

_BLOCK_WIDTHS = (16, 32, 64, 64)


class FrameEncoder(nn.Module):
    """Compact CNN mapping one (c, h, w) frame to a (tokens, n) feature map."""

    def __init__(self, in_channels: int = 2, n: int = 64):
        super().__init__()
        blocks = []
        c_in = in_channels
        for width in _BLOCK_WIDTHS:
            blocks += [
                nn.Conv2d(c_in, width, 3, stride=2, padding=1),
                nn.ReLU(),
                nn.Conv2d(width, width, 3, padding=1),
                nn.ReLU(),
            ]
            c_in = width
        self.blocks = nn.Sequential(*blocks)
        self.proj = nn.Linear(_BLOCK_WIDTHS[-1], n)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4:
            raise ValueError(f"expected (batch, c, h, w), got shape {tuple(x.shape)}")
        feat = self.blocks(x)  # (B, C, h/16, w/16)
        tokens = feat.flatten(2).transpose(1, 2)  # (B, tokens, C)
        return self.proj(tokens)


class TokenSelfAttention(nn.Module):
    """Single-head scaled dot-product attention over the token dimension."""

    def __init__(self, n: int):
        super().__init__()
        self.q = nn.Linear(n, n)
        self.k = nn.Linear(n, n)
        self.v = nn.Linear(n, n)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = self.q(x), self.k(x), self.v(x)
        logits = q @ k.transpose(1, 2) / math.sqrt(x.shape[-1])
        return torch.softmax(logits, dim=-1) @ v


class SpatioTemporalFusion(nn.Module):
    """Gated recurrence over frames with self-attention on the hidden state.

    Each step consumes one frame's token features concatenated with the
    correlation-factor embedding; the hidden state is passed through
    self-attention before the LSTM-style gate computation.
    """

    def __init__(self, n: int):
        super().__init__()
        self.n = n
        self.attn = TokenSelfAttention(n)
        self.gates = nn.Linear(3 * n, 4 * n)

    def step(
        self,
        x: torch.Tensor,
        cor_emb: torch.Tensor,
        h: torch.Tensor,
        c: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        h_att = self.attn(h)
        cor = cor_emb.unsqueeze(1).expand_as(x)
        z = self.gates(torch.cat([x, cor, h_att], dim=-1))
        i, f, o, g = z.chunk(4, dim=-1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        return h_new, c_new

    def forward(
        self, frame_features: Tuple[torch.Tensor, ...], cor_emb: torch.Tensor
    ) -> torch.Tensor:
        first = frame_features[0]
        if cor_emb.shape[-1] != self.n:
            raise ValueError(
                f"correlation embedding width {cor_emb.shape[-1]} != n={self.n}"
            )
        h = torch.zeros_like(first)
        c = torch.zeros_like(first)
        for x in frame_features:
            h, c = self.step(x, cor_emb, h, c)
        return h


def sample_identity(
    f_emb: torch.Tensor,
    mode: str = "train",
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Draw the initial identity token from the token statistics of F_emb.

    mu and sigma are the mean/std over the token dimension; train mode returns
    the reparameterized draw mu + sigma * eps, eval mode returns mu
    deterministically.  sigma = sqrt(var + SIGMA_FLOOR^2), which floors the
    zero-variance case at exactly SIGMA_FLOOR while keeping the backward pass
    bounded as the token variance approaches zero (a plain std backward
    divides by sigma and can overflow to inf mid-training).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    mu = f_emb.mean(dim=1)
    var = f_emb.var(dim=1, unbiased=False)
    sigma = torch.sqrt(var + SIGMA_FLOOR**2)
    if mode == "eval":
        return mu
    eps = torch.empty_like(mu).normal_(generator=generator)
    return mu + sigma * eps


class Backbone(nn.Module):
    """Full encoder: two frame encoders, fusion, identity sampling."""

    def __init__(self, n: int = 64, in_channels: int = 2, n_cor: int = 4):
        super().__init__()
        self.n = n
        self.enc_t0 = FrameEncoder(in_channels, n)
        self.enc_t1 = FrameEncoder(in_channels, n)
        self.cor_embed = nn.Linear(n_cor, n)
        self.fusion = SpatioTemporalFusion(n)

    def encode_frames(self, ir: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if ir.dim() != 5 or ir.shape[1] != 2:
            raise ValueError(
                f"expected (batch, t=2, c, h, w), got shape {tuple(ir.shape)}"
            )
        return self.enc_t0(ir[:, 0]), self.enc_t1(ir[:, 1])

    def forward(
        self,
        ir: torch.Tensor,
        cor: torch.Tensor,
        mode: str = "train",
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        f0, f1 = self.encode_frames(ir)
        cor_emb = self.cor_embed(cor)
        f_emb = self.fusion((f0, f1), cor_emb)
        id_initial = sample_identity(f_emb, mode=mode, generator=generator)
        return f_emb, id_initial
