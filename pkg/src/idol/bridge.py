"""Correlation-aware information bridge.

A fixed bipartite adjacency links the four correlation factors (tcf, tcc,
tce, tcw) to the four estimated attributes (v, p, ri, ro).  The resulting
8-node graph is encoded with stacked graph convolutions into mixing logits
for a self-adaptive Gaussian mixture, which produces the task-shared
identity token from the initial identity.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

FACTOR_NAMES = ("tcf", "tcc", "tce", "tcw")
ATTRIBUTE_NAMES = ("v", "p", "ri", "ro")

# Rows: factors (tcf, tcc, tce, tcw); columns: attributes (v, p, ri, ro).
FACTOR_ATTRIBUTE_ADJACENCY = np.array(
    [
        [0, 0, 1, 1],
        [1, 0, 1, 0],
        [1, 1, 0, 0],
        [0, 1, 0, 1],
    ],
    dtype=np.int64,
)


def randomized_adjacency(seed: int) -> np.ndarray:
    """Permute the 1-entries of the factor-attribute matrix (fixed seed)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    flat = FACTOR_ATTRIBUTE_ADJACENCY.flatten()
    rng.shuffle(flat)
    return flat.reshape(4, 4)


def edge_list(adjacency: np.ndarray) -> list[Tuple[int, int]]:
    """Undirected (factor_node, attribute_node) edges; attribute nodes are
    offset by 4 in the 8-node graph."""
    edges = []
    for i in range(4):
        for j in range(4):
            if adjacency[i, j]:
                edges.append((i, 4 + j))
    return edges


def _norm_adjacency(adjacency: np.ndarray) -> torch.Tensor:
    """Symmetric-normalized 8-node adjacency with self-loops."""
    a = np.zeros((8, 8))
    for i, j in edge_list(adjacency):
        a[i, j] = a[j, i] = 1.0
    a_hat = a + np.eye(8)
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(1))
    return torch.tensor(
        d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :], dtype=torch.float32
    )


class DarkKnowledgeGraph(nn.Module):
    """Batched 8-node graph: 4 factor nodes embedded from the sample's
    correlation factors plus 4 learned attribute-node embeddings."""

    def __init__(self, d_node: int = 16, adjacency: np.ndarray | None = None):
        super().__init__()
        self.d_node = d_node
        adj = FACTOR_ATTRIBUTE_ADJACENCY if adjacency is None else adjacency
        self.adjacency = adj.copy()
        self.register_buffer("norm_adj", _norm_adjacency(adj))
        # Per-factor scalar-to-vector embedding: feat_i = x_i * w_i + b_i.
        self.factor_weight = nn.Parameter(torch.randn(4, d_node) * 0.1)
        self.factor_bias = nn.Parameter(torch.zeros(4, d_node))
        self.attr_embed = nn.Parameter(torch.randn(4, d_node) * 0.1)

    @property
    def edges(self) -> list[Tuple[int, int]]:
        return edge_list(self.adjacency)

    def forward(self, x_cor: torch.Tensor) -> torch.Tensor:
        if x_cor.shape[-1] != 4:
            raise ValueError(f"expected 4 correlation factors, got {x_cor.shape[-1]}")
        factor = x_cor.unsqueeze(-1) * self.factor_weight + self.factor_bias
        attr = self.attr_embed.unsqueeze(0).expand(x_cor.shape[0], -1, -1)
        return torch.cat([factor, attr], dim=1)  # (B, 8, d_node)


class CorrelationEncoder(nn.Module):
    """Two graph-convolution layers, mean pool, linear head to k+1 logits."""

    def __init__(self, d_node: int, k: int):
        super().__init__()
        self.gc1 = nn.Linear(d_node, d_node)
        self.gc2 = nn.Linear(d_node, d_node)
        self.head = nn.Linear(d_node, k + 1)

    def forward(self, node_features: torch.Tensor, norm_adj: torch.Tensor):
        h = torch.relu(self.gc1(norm_adj @ node_features))
        h = torch.relu(self.gc2(norm_adj @ h))
        return self.head(h.mean(dim=1))


class SharedIdentityGMM(nn.Module):
    """Self-adaptive Gaussian mixture producing the task-shared identity.

    Each of the k+1 components is d_j = mu_j + sigma_j * id; the mixture
    weights are the softmax of the graph-encoder logits.
    """

    def __init__(self, n: int, k: int = 4):
        super().__init__()
        if k < 0:
            raise ValueError("k must be >= 0")
        self.k = k
        self.mu = nn.Parameter(torch.randn(k + 1, n) * 0.1)
        self.raw_sigma = nn.Parameter(torch.zeros(k + 1, n))

    @property
    def sigma(self) -> torch.Tensor:
        return F.softplus(self.raw_sigma)

    def components(self, id_initial: torch.Tensor) -> torch.Tensor:
        # (B, k+1, n)
        return self.mu.unsqueeze(0) + self.sigma.unsqueeze(0) * id_initial.unsqueeze(1)

    def forward(
        self, z_dk: torch.Tensor, id_initial: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        alpha = torch.softmax(z_dk, dim=-1)
        d = self.components(id_initial)
        id_sh = (alpha.unsqueeze(-1) * d).sum(dim=1)
        return id_sh, alpha


class CorrelationBridge(nn.Module):
    """Graph construction, correlation encoding and the mixture in one step."""

    def __init__(
        self,
        n: int,
        k: int = 4,
        d_node: int = 16,
        adjacency: np.ndarray | None = None,
    ):
        super().__init__()
        self.graph = DarkKnowledgeGraph(d_node, adjacency)
        self.encoder = CorrelationEncoder(d_node, k)
        self.gmm = SharedIdentityGMM(n, k)

    def forward(
        self, x_cor: torch.Tensor, id_initial: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        nodes = self.graph(x_cor)
        z_dk = self.encoder(nodes, self.graph.norm_adj)
        return self.gmm(z_dk, id_initial)
