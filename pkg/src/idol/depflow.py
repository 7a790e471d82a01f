"""Task dependency flow: development encoder for the intensity tasks and the
prior-aware approximator transforming intensity identities into size-task
identities.

The approximator follows the inverted wind-field relation r = gamma^(1/B):
a learned-linear estimate of the intermediate term gamma, a graph-convolution
context over learnable node embeddings, and a gated fixed-point iteration
(LSTM-style forget/input/output gates) standing in for the fractional power.
The iteration stops when the hidden state change falls below tau (max-over-
batch L-inf norm, measured on detached values) or after R steps.
"""

from __future__ import annotations

import math
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

# softplus(x + _SP_ONE) == 1 at x == 0, so a zero-initialized final layer
# yields sigma = 1 and the encoder starts as the identity modulation.
_SP_ONE = math.log(math.e - 1.0)

DEN_EPS = 1e-4
LN_GUARD = 1e-6


class DevelopmentEncoder(nn.Module):
    """Maps developmental factors to (mu, sigma) modulations for v and p.

    id_sp^i = mu_i + sigma_i * id for i in {v, p}.  The final layer is
    zero-initialized so both tokens equal the initial identity at step 0.
    """

    def __init__(self, n: int, in_dim: int = 2, hidden: int = 64):
        super().__init__()
        self.n = n
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
        )
        self.out = nn.Linear(hidden, 4 * n)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(
        self, x_dev: torch.Tensor, id_initial: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        raw = self.out(self.net(x_dev))
        mu_v, raw_v, mu_p, raw_p = raw.chunk(4, dim=-1)
        sigma_v = F.softplus(raw_v + _SP_ONE)
        sigma_p = F.softplus(raw_p + _SP_ONE)
        return mu_v + sigma_v * id_initial, mu_p + sigma_p * id_initial


class GammaEstimator(nn.Module):
    """gamma = alpha / (ln F_n(id) - ln F_r(id)) with numerical guards.

    Both linear outputs pass through softplus (+ LN_GUARD) before the
    logarithm; the denominator is clamped to |den| >= DEN_EPS preserving
    sign.  Guard activations are counted, never raised.
    """

    def __init__(self, n: int):
        super().__init__()
        self.f_n = nn.Linear(n, n)
        self.f_r = nn.Linear(n, n)
        self.alpha = nn.Parameter(torch.tensor(1.0))
        self.clamp_count = 0

    def forward(self, id_src: torch.Tensor) -> torch.Tensor:
        num = torch.log(F.softplus(self.f_n(id_src)) + LN_GUARD)
        den_raw = num - torch.log(F.softplus(self.f_r(id_src)) + LN_GUARD)
        sign = torch.where(den_raw >= 0, 1.0, -1.0)
        clamped = den_raw.abs() < DEN_EPS
        self.clamp_count += int(clamped.sum())
        den = torch.where(clamped, sign * DEN_EPS, den_raw)
        return self.alpha / den


class GraphContext(nn.Module):
    """One graph-convolution layer over learnable node embeddings, pooled.

    U = act(D^-1/2 (E + I) D^-1/2 U_raw W), mean-pooled over nodes to a
    single width-n context vector.
    """

    def __init__(self, m: int, n: int, edges: torch.Tensor, activation=torch.relu):
        super().__init__()
        if edges.shape != (m, m):
            raise ValueError("edge matrix must be (m, m)")
        if not torch.equal(edges, edges.T) or edges.diagonal().any():
            raise ValueError("edge matrix must be symmetric with zero diagonal")
        self.u_raw = nn.Parameter(torch.randn(m, n) * 0.1)
        self.weight = nn.Parameter(torch.eye(n) + 0.01 * torch.randn(n, n))
        self.activation = activation
        a_hat = edges.double() + torch.eye(m, dtype=torch.float64)
        d_inv_sqrt = a_hat.sum(1).rsqrt()
        norm = (d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]).float()
        self.register_buffer("norm_adj", norm)

    def forward(self) -> torch.Tensor:
        u = self.activation(self.norm_adj @ self.u_raw @ self.weight)
        return u.mean(dim=0)


class GatedIterator(nn.Module):
    """Gated fixed-point iteration refining a hidden state toward the target
    identity token.

    Per step (H hidden, C cell, gamma and the graph context U as inputs):
        f_fg = sigmoid(F_fg([H, gamma, U]))
        f_in = sigmoid(F_in([H, gamma])) * tanh(F_c([H, gamma]))
        f_ou = sigmoid(F_ou([H, gamma, U]))
        C <- C * f_fg + f_in ;  H <- tanh(C) * f_ou
    """

    def __init__(self, n: int, max_iters: int = 8, tol: float = 1e-3):
        super().__init__()
        if max_iters < 1 or tol <= 0:
            raise ValueError("need max_iters >= 1 and tol > 0")
        self.n = n
        self.max_iters = max_iters
        self.tol = tol
        self.f_fg = nn.Linear(3 * n, n)
        self.f_in = nn.Linear(2 * n, n)
        self.f_c = nn.Linear(2 * n, n)
        self.f_ou = nn.Linear(3 * n, n)

    def forward(
        self, h0: torch.Tensor, u: torch.Tensor, gamma: torch.Tensor
    ) -> Tuple[torch.Tensor, int]:
        u_b = u.unsqueeze(0).expand_as(h0)
        h = h0
        c = torch.zeros_like(h0)
        n_iters = 0
        for _ in range(self.max_iters):
            hg = torch.cat([h, gamma], dim=-1)
            hgu = torch.cat([h, gamma, u_b], dim=-1)
            f_fg = torch.sigmoid(self.f_fg(hgu))
            f_in = torch.sigmoid(self.f_in(hg)) * torch.tanh(self.f_c(hg))
            f_ou = torch.sigmoid(self.f_ou(hgu))
            c = c * f_fg + f_in
            h_new = torch.tanh(c) * f_ou
            n_iters += 1
            # Convergence is control flow, not a differentiable quantity.
            delta = (h_new.detach() - h.detach()).abs().max()
            h = h_new
            if delta < self.tol:
                break
        return h, n_iters


_PAIR_EDGE_COUNT = 4  # default node graph: ring over m=4 nodes


def _default_edges(m: int) -> torch.Tensor:
    e = torch.zeros(m, m)
    for i in range(m):
        j = (i + 1) % m
        e[i, j] = e[j, i] = 1.0
    return e


class PriorApproximator(nn.Module):
    """Full source-to-target identity transform for one task pair."""

    def __init__(
        self,
        n: int,
        m: int = 4,
        max_iters: int = 8,
        tol: float = 1e-3,
        edges: Optional[torch.Tensor] = None,
    ):
        super().__init__()
        self.gamma = GammaEstimator(n)
        self.graph = GraphContext(m, n, _default_edges(m) if edges is None else edges)
        self.iterator = GatedIterator(n, max_iters=max_iters, tol=tol)
        self.last_iters = 0

    def forward(self, id_src: torch.Tensor) -> torch.Tensor:
        gamma = self.gamma(id_src)
        u = self.graph()
        out, self.last_iters = self.iterator(id_src, u, gamma)
        return out


class DependencyFlow(nn.Module):
    """Development encoder plus per-pair prior approximators.

    Produces all four task-specific identity tokens: the v and p tokens from
    the developmental factors, the ri token from the v token and the ro token
    from the p token.  ``linear_pairs`` swaps the approximators for plain
    linear layers; ``noisy_extra_path`` adds an unphysical ri-to-ro path whose
    output is averaged into the ro token.
    """

    def __init__(
        self,
        n: int,
        m: int = 4,
        max_iters: int = 8,
        tol: float = 1e-3,
        linear_pairs: bool = False,
        noisy_extra_path: bool = False,
    ):
        super().__init__()
        self.dev_encoder = DevelopmentEncoder(n)
        self.linear_pairs = linear_pairs
        self.noisy_extra_path = noisy_extra_path
        if linear_pairs:
            self.v_to_ri = nn.Linear(n, n)
            self.p_to_ro = nn.Linear(n, n)
        else:
            self.v_to_ri = PriorApproximator(n, m, max_iters, tol)
            self.p_to_ro = PriorApproximator(n, m, max_iters, tol)
            if noisy_extra_path:
                self.ri_to_ro = PriorApproximator(n, m, max_iters, tol)

    def iteration_counts(self) -> Dict[str, int]:
        if self.linear_pairs:
            return {}
        counts = {
            "v_to_ri": self.v_to_ri.last_iters,
            "p_to_ro": self.p_to_ro.last_iters,
        }
        if self.noisy_extra_path:
            counts["ri_to_ro"] = self.ri_to_ro.last_iters
        return counts

    def forward(
        self, x_dev: torch.Tensor, id_initial: torch.Tensor
    ) -> Dict[str, torch.Tensor]:
        id_v, id_p = self.dev_encoder(x_dev, id_initial)
        id_ri = self.v_to_ri(id_v)
        id_ro = self.p_to_ro(id_p)
        if self.noisy_extra_path and not self.linear_pairs:
            id_ro = 0.5 * (id_ro + self.ri_to_ro(id_ri))
        return {"v": id_v, "p": id_p, "ri": id_ri, "ro": id_ro}
