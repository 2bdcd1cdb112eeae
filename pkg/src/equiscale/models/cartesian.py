"""Multi-channel Cartesian-vector message passing.

Each atom carries invariant scalars h in R^w and E equivariant vector
channels X in R^{3 x E}.  Messages see only rotation/translation invariants
(channel-wise squared norms of X_uv); vectors are updated through a channel
mixer whose output is scaled by 1/E, keeping entries order-one as the width
(and E ~ sqrt(w)) grows.  The mixer weights are initialized with std
1/sqrt(w) for the same reason.
"""

from __future__ import annotations

import torch
from torch import nn

from .common import MLP, Batch, dense_init, envelope, scatter_mean, scatter_sum


class CartesianLayer(nn.Module):
    def __init__(self, width: int, n_vec: int, gen: torch.Generator):
        super().__init__()
        self.n_vec = n_vec
        self.phi_m = MLP([2 * width + n_vec, width, width, width], gen)
        self.mixer = nn.Linear(width, n_vec * n_vec, bias=False)
        dense_init(self.mixer, gen, std=1.0 / width**0.5)

    def message(self, h_u, h_v, x_uv, length_scale: float):
        sq = (x_uv**2).sum(dim=1) / length_scale**2  # (E_edges, n_vec)
        return self.phi_m(torch.cat([h_u, h_v, sq], dim=-1))

    def vector_update(self, x_uv, m):
        phi = self.mixer(m).reshape(-1, self.n_vec, self.n_vec)
        return torch.bmm(x_uv, phi) / self.n_vec


class CartesianVectorModel(nn.Module):
    def __init__(self, config, gen: torch.Generator):
        super().__init__()
        self.config = config
        w, e = config.width, config.vector_channels
        self.embed = nn.Embedding(config.z_max + 1, w)
        with torch.no_grad():
            self.embed.weight.normal_(0.0, 1.0, generator=gen)
        self.layers = nn.ModuleList(CartesianLayer(w, e, gen) for _ in range(config.depth))
        self.energy_head = MLP([w, w, 1], gen)
        self.force_head = nn.Linear(e, 1, bias=False)
        dense_init(self.force_head, gen)

    def forward(self, batch: Batch):
        cfg = self.config
        n = batch.n_atoms
        h = self.embed(batch.z)
        # vector channels start at the positions themselves (broadcast), so
        # X_uv carries raw edge geometry while X - X0 stays translation
        # invariant for the force readout
        x0 = batch.pos[:, :, None].expand(n, 3, cfg.vector_channels).contiguous()
        x = x0
        env = envelope(batch.dist, cfg.cutoff)[:, None]
        for layer in self.layers:
            x_uv = x[batch.src] - x[batch.dst]
            m = layer.message(h[batch.src], h[batch.dst], x_uv, cfg.cutoff) * env
            h = h + scatter_mean(m, batch.dst, n)
            x = x + scatter_mean(layer.vector_update(x_uv, m), batch.dst, n)
        e_atom = self.energy_head(h).squeeze(-1)
        energy = scatter_sum(e_atom, batch.system_index, batch.n_systems)
        forces = self.force_head(x - x0).squeeze(-1)
        return energy, forces
