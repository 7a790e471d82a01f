"""Full estimator wiring backbone, dependency flow, correlation bridge and
estimation heads, with the ablation switches used by the training harness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, Optional

import torch
import torch.nn as nn

from idol.backbone import Backbone
from idol.bridge import CorrelationBridge, randomized_adjacency
from idol.depflow import DependencyFlow
from idol.heads import TASKS, EstimationHead


@dataclass(frozen=True)
class ModelConfig:
    n: int = 64          # task-specific identity / embedding width
    n_sh: int = 64       # task-shared identity width (id_ratio scales this)
    k: int = 4           # mixture components = k + 1
    max_iters: int = 8   # iteration cap R
    tol: float = 1e-3    # convergence threshold tau
    d_node: int = 16
    head_dim: int = 64
    attn_heads: int = 4
    emb_tokens: int = 16
    in_channels: int = 2
    no_id_sp: bool = False
    no_id_sh: bool = False
    linear_id_sp: bool = False
    noisy_prior: bool = False
    random_dk_graph: bool = False
    graph_seed: int = 0

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(ModelConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return ModelConfig(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def idc_keys(self) -> tuple:
        keys = []
        if not self.no_id_sh:
            keys.append("sh")
        if not self.no_id_sp:
            keys.extend(TASKS)
        return tuple(keys)


class IDOLModel(nn.Module):
    """Identity-oriented multi-task estimator."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n = config.n
        self.backbone = Backbone(n=n, in_channels=config.in_channels)
        if not config.no_id_sp:
            self.depflow = DependencyFlow(
                n,
                max_iters=config.max_iters,
                tol=config.tol,
                linear_pairs=config.linear_id_sp,
                noisy_extra_path=config.noisy_prior,
            )
        else:
            self.depflow = None
        if not config.no_id_sh:
            adjacency = (
                randomized_adjacency(config.graph_seed)
                if config.random_dk_graph
                else None
            )
            self.bridge = CorrelationBridge(
                config.n_sh, k=config.k, d_node=config.d_node, adjacency=adjacency
            )
            self.sh_proj = (
                nn.Linear(n, config.n_sh) if config.n_sh != n else nn.Identity()
            )
        else:
            self.bridge = None
            self.sh_proj = None
        self.heads = nn.ModuleDict(
            {
                task: EstimationHead(
                    config.head_dim,
                    n_sp=n,
                    n_sh=config.n_sh,
                    emb_tokens=config.emb_tokens,
                    heads=config.attn_heads,
                )
                for task in TASKS
            }
        )

    def forward(
        self,
        ir: torch.Tensor,
        dev: torch.Tensor,
        cor: torch.Tensor,
        mode: str = "train",
        generator: Optional[torch.Generator] = None,
    ) -> Dict[str, object]:
        cfg = self.config
        f_emb, id_initial = self.backbone(ir, cor, mode=mode, generator=generator)
        batch = ir.shape[0]
        zeros = lambda w: f_emb.new_zeros(batch, w)

        if cfg.no_id_sp:
            id_sp = {task: zeros(cfg.n) for task in TASKS}
            iter_counts = {}
        else:
            id_sp = self.depflow(dev, id_initial)
            iter_counts = self.depflow.iteration_counts()

        if cfg.no_id_sh:
            id_sh = zeros(cfg.n_sh)
        else:
            id_sh, _alpha = self.bridge(cor, self.sh_proj(id_initial))

        preds = torch.stack(
            [self.heads[t](id_sp[t], id_sh, f_emb) for t in TASKS], dim=1
        )
        identities = dict(id_sp)
        identities["sh"] = id_sh
        return {
            "preds": preds,
            "identities": identities,
            "f_emb": f_emb,
            "id_initial": id_initial,
            "iter_counts": iter_counts,
        }


def parse_id_ratio(ratio: str, n: int) -> int:
    """Shared identity width from a "shared:specific" ratio string.

    The specific width stays at n; e.g. "1:2" halves the shared width and
    "2:1" doubles it.
    """
    try:
        a, b = (int(x) for x in ratio.split(":"))
    except ValueError as exc:
        raise ValueError(f"bad id_ratio {ratio!r}, expected like '1:2'") from exc
    if a < 1 or b < 1:
        raise ValueError("id_ratio parts must be positive")
    return max(1, (n * a) // b)
