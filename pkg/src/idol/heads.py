"""Identity-oriented estimation heads and the composite loss.

Each head attends over the token sequence [task-specific identity,
shared identity, embedding tokens] with one multi-head self-attention block
carrying a learned additive bias on the attention logits (shared across
heads), then pools and regresses through three linear layers with ReLU.

The identity-oriented constraint compares batch Gram matrices of row-
normalized identity tokens against those of the (standardized) labels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Sequence

import torch
import torch.nn as nn

log = logging.getLogger(__name__)

TASKS = ("v", "p", "ri", "ro")


class BiasedSelfAttention(nn.Module):
    """Multi-head self-attention with a learned (tokens x tokens) additive
    logit bias shared across heads, plus residual connection."""

    def __init__(self, d: int, seq_len: int, heads: int = 4):
        super().__init__()
        if d % heads:
            raise ValueError("token width must divide the head count")
        self.heads = heads
        self.d_head = d // heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)
        self.bias = nn.Parameter(torch.zeros(seq_len, seq_len))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.heads, self.d_head)
        q, k, v = qkv.unbind(dim=2)
        q = q.transpose(1, 2)  # (B, heads, T, d_head)
        k = k.transpose(1, 2)
        v = v.transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        logits = logits + self.bias[:t, :t]
        attended = torch.softmax(logits, dim=-1) @ v
        attended = attended.transpose(1, 2).reshape(b, t, d)
        return x + self.out(attended)


class EstimationHead(nn.Module):
    """One attribute head: attention block over the identity-augmented token
    sequence, mean pool, three-layer regressor."""

    def __init__(
        self,
        d: int,
        n_sp: int,
        n_sh: int,
        emb_tokens: int,
        heads: int = 4,
    ):
        super().__init__()
        self.proj_sp = nn.Linear(n_sp, d)
        self.proj_sh = nn.Linear(n_sh, d)
        self.attn = BiasedSelfAttention(d, seq_len=emb_tokens + 2, heads=heads)
        self.regressor = nn.Sequential(
            nn.Linear(d, d),
            nn.ReLU(),
            nn.Linear(d, d),
            nn.ReLU(),
            nn.Linear(d, 1),
        )

    def forward(
        self,
        id_sp: torch.Tensor,
        id_sh: torch.Tensor,
        f_emb: torch.Tensor,
    ) -> torch.Tensor:
        tokens = torch.cat(
            [
                self.proj_sp(id_sp).unsqueeze(1),
                self.proj_sh(id_sh).unsqueeze(1),
                f_emb,
            ],
            dim=1,
        )
        pooled = self.attn(tokens).mean(dim=1)
        return self.regressor(pooled).squeeze(-1)


def loss_idc(identity: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference of batch Gram matrices.

    Rows of both arguments are L2-normalized first, so the constraint aligns
    the cosine-similarity structure of the identity tokens with that of the
    labels regardless of their widths.
    """
    if identity.shape[0] != y.shape[0]:
        raise ValueError("batch sizes differ")
    if identity.shape[0] < 2:
        log.warning("loss_idc on a batch of %d is degenerate", identity.shape[0])
    id_n = identity / identity.norm(dim=1, keepdim=True).clamp_min(1e-12)
    y_n = y / y.norm(dim=1, keepdim=True).clamp_min(1e-12)
    return (id_n @ id_n.T - y_n @ y_n.T).abs().mean()


@dataclass
class LossBreakdown:
    l_e: Dict[str, torch.Tensor]
    l_idc: Dict[str, torch.Tensor]
    lam: float
    total: torch.Tensor

    def scalars(self) -> dict:
        return {
            "L_e": {k: float(v.detach()) for k, v in self.l_e.items()},
            "L_idc": {k: float(v.detach()) for k, v in self.l_idc.items()},
            "L_total": float(self.total.detach()),
        }


def loss_total(
    preds: torch.Tensor,
    labels: torch.Tensor,
    identities: Dict[str, torch.Tensor],
    lam: float,
    idc_keys: Sequence[str] = ("sh",) + TASKS,
) -> LossBreakdown:
    """Composite loss: per-task MAE plus lambda-weighted identity constraints.

    ``preds`` and ``labels`` are (batch, 4) in standardized space, ordered
    (v, p, ri, ro).  ``identities`` maps "sh" and the task names to tokens;
    the shared term compares against the full label matrix, each specific
    term against its own label column.  ``idc_keys`` selects which identity
    constraints participate (ablations drop entries).
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    l_e = {
        task: (preds[:, i] - labels[:, i]).abs().mean()
        for i, task in enumerate(TASKS)
    }
    l_idc = {}
    for key in idc_keys:
        if key == "sh":
            l_idc["sh"] = loss_idc(identities["sh"], labels)
        else:
            i = TASKS.index(key)
            l_idc[key] = loss_idc(identities[key], labels[:, i : i + 1])
    total = sum(l_e.values())
    if l_idc:
        total = total + lam * sum(l_idc.values())
    return LossBreakdown(l_e=l_e, l_idc=l_idc, lam=lam, total=total)
