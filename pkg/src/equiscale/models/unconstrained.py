"""Vanilla message passing: raw relative vectors fed straight into the MLP.

No symmetry constraint is enforced; node states and forces are generically
not rotation-equivariant, which is exactly the point of this baseline.

The message function is a one-hidden-layer MLP on [h_u, h_v, r_uv, |r_uv|]
(input 2w + 4, output w) evaluated in factored form: the first layer splits
into per-node projections of h_u and h_v plus a cheap per-edge geometry term,
and the output layer commutes with the mean aggregation, so it is applied
once per node.  The computed function is exactly

    m_{u->v} = W_out silu(W_src h_u + W_dst h_v + W_geo [r_uv, |r_uv|] + b)

but the dense work scales with atoms rather than edges, which is what keeps
this family's per-token forward cost at roughly 2 FLOPs per parameter (the
dense-layer-dominated regime); the equivariant families pay per-edge or
per-quadruplet dense costs instead.
"""

from __future__ import annotations

import torch
from torch import nn

from .common import Batch, dense_init, envelope, scatter_mean, scatter_sum


class UnconstrainedLayer(nn.Module):
    def __init__(self, width: int, gen: torch.Generator):
        super().__init__()
        self.w_src = nn.Linear(width, width, bias=False)
        self.w_dst = nn.Linear(width, width)
        self.w_geo = nn.Linear(4, width, bias=False)
        # no bias: keeps W_out exactly interchangeable with the mean
        # aggregation and leaves empty neighborhoods with a zero update
        self.w_out = nn.Linear(width, width, bias=False)
        for lin in (self.w_src, self.w_dst, self.w_geo, self.w_out):
            dense_init(lin, gen)

    def hidden(self, h_u, h_v, rel, dist):
        geo = torch.cat([rel, dist[:, None]], dim=-1)
        return torch.nn.functional.silu(self.w_src(h_u) + self.w_dst(h_v) + self.w_geo(geo))

    def message(self, h_u, h_v, rel, dist):
        """Full per-edge message (reference form; forward hoists w_out)."""
        return self.w_out(self.hidden(h_u, h_v, rel, dist))

    def update(self, h, batch: Batch, env):
        p_src = self.w_src(h)
        p_dst = self.w_dst(h)
        geo = torch.cat([batch.rel, batch.dist[:, None]], dim=-1)
        hidden = torch.nn.functional.silu(p_src[batch.src] + p_dst[batch.dst] + self.w_geo(geo))
        agg = scatter_mean(hidden * env, batch.dst, batch.n_atoms)
        return h + self.w_out(agg)


class UnconstrainedForceHead(nn.Module):
    """Per-edge scalar coefficient on the raw edge vector (factored the same way)."""

    def __init__(self, width: int, gen: torch.Generator):
        super().__init__()
        self.p_src = nn.Linear(width, width, bias=False)
        self.p_dst = nn.Linear(width, width)
        self.p_geo = nn.Linear(4, width, bias=False)
        self.alpha = nn.Linear(width, 1)
        for lin in (self.p_src, self.p_dst, self.p_geo, self.alpha):
            dense_init(lin, gen)

    def forward(self, h, batch: Batch, env):
        geo = torch.cat([batch.rel, batch.dist[:, None]], dim=-1)
        hidden = torch.nn.functional.silu(
            self.p_src(h)[batch.src] + self.p_dst(h)[batch.dst] + self.p_geo(geo)
        )
        coeff = self.alpha(hidden)
        return scatter_mean(coeff * batch.rel * env, batch.dst, batch.n_atoms)


class UnconstrainedModel(nn.Module):
    def __init__(self, config, gen: torch.Generator):
        super().__init__()
        self.config = config
        w = config.width
        self.embed = nn.Embedding(config.z_max + 1, w)
        with torch.no_grad():
            self.embed.weight.normal_(0.0, 1.0, generator=gen)
        self.layers = nn.ModuleList(
            UnconstrainedLayer(w, gen) for _ in range(config.depth)
        )
        hidden = nn.Linear(w, w)
        out = nn.Linear(w, 1)
        dense_init(hidden, gen)
        dense_init(out, gen)
        self.energy_head = nn.Sequential(hidden, nn.SiLU(), out)
        self.force_head = UnconstrainedForceHead(w, gen)

    def forward(self, batch: Batch):
        h = self.embed(batch.z)
        env = envelope(batch.dist, self.config.cutoff)[:, None]
        for layer in self.layers:
            h = layer.update(h, batch, env)
        e_atom = self.energy_head(h).squeeze(-1)
        energy = scatter_sum(e_atom, batch.system_index, batch.n_systems)
        forces = self.force_head(h, batch, env)
        return energy, forces
