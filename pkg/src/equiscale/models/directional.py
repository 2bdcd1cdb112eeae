"""Directional message passing on invariant multi-body geometry.

Messages aggregate over two-hop quadruplets (u, v, k, j) using pairwise
distances, bond angles at v, and dihedral angles between the (u,v,k) and
(v,k,j) planes.  All inputs are rigid-motion invariants, so node states are
exactly invariant; forces get their direction from unit edge vectors with an
invariant learned magnitude.

Because the quadruplet sums grow with neighborhood size, each layer carries
an empirically estimated scaling factor: call :meth:`DirectionalModel.calibrate`
on a few representative batches once after init, which freezes per-layer
1/RMS factors (they are functions of invariants only, so equivariance is
unaffected).
"""

from __future__ import annotations

import torch
from torch import nn

from .common import MLP, Batch, envelope, radial_basis, scatter_mean, scatter_sum


class DirectionalLayer(nn.Module):
    def __init__(self, width: int, n_rbf: int, gen: torch.Generator):
        super().__init__()
        self.phi_m = MLP([2 * width + n_rbf + 2, width, width, width], gen)
        self.register_buffer("scale", torch.ones(()))

    def edge_messages(self, h, batch: Batch, rbf_edge):
        """Quadruplet sum per edge, before the frozen scale factor."""
        if batch.quad_edge.numel() == 0:
            return torch.zeros(
                (batch.src.shape[0], self.phi_m.layers[-1].out_features),
                dtype=h.dtype,
                device=h.device,
            )
        qin = torch.cat(
            [
                h[batch.quad_u],
                h[batch.quad_v],
                rbf_edge[batch.quad_edge],
                batch.cos_phi[:, None],
                batch.cos_omega[:, None],
            ],
            dim=-1,
        )
        mq = self.phi_m(qin)
        return scatter_sum(mq, batch.quad_edge, batch.src.shape[0])


class DirectionalModel(nn.Module):
    def __init__(self, config, gen: torch.Generator):
        super().__init__()
        self.config = config
        w = config.width
        self.embed = nn.Embedding(config.z_max + 1, w)
        with torch.no_grad():
            self.embed.weight.normal_(0.0, 1.0, generator=gen)
        self.layers = nn.ModuleList(
            DirectionalLayer(w, config.n_rbf, gen) for _ in range(config.depth)
        )
        self.energy_head = MLP([w, w, 1], gen)
        self.force_head = MLP([2 * w + config.n_rbf, w, 1], gen)
        self.calibrated = False

    def _node_states(self, batch: Batch):
        cfg = self.config
        h = self.embed(batch.z)
        rbf_edge = radial_basis(batch.dist, cfg.n_rbf, cfg.cutoff)
        env = envelope(batch.dist, cfg.cutoff)[:, None]
        n = batch.n_atoms
        for layer in self.layers:
            m_edge = layer.edge_messages(h, batch, rbf_edge) * layer.scale * env
            h = h + scatter_mean(m_edge, batch.dst, n)
        return h, rbf_edge, env

    def forward(self, batch: Batch):
        h, rbf_edge, env = self._node_states(batch)
        e_atom = self.energy_head(h).squeeze(-1)
        energy = scatter_sum(e_atom, batch.system_index, batch.n_systems)
        magnitude = self.force_head(
            torch.cat([h[batch.src], h[batch.dst], rbf_edge], dim=-1)
        )
        rhat = batch.rel / batch.dist.clamp(min=1e-12)[:, None]
        forces = scatter_mean(magnitude * rhat * env, batch.dst, batch.n_atoms)
        return energy, forces

    @torch.no_grad()
    def calibrate(self, batches: list) -> None:
        """Estimate per-layer scale factors from a few batches, then freeze them.

        Layers are calibrated in order so each sees inputs propagated through
        the already-rescaled layers below it.
        """
        cfg = self.config
        states = []
        for batch in batches:
            h = self.embed(batch.z)
            rbf_edge = radial_basis(batch.dist, cfg.n_rbf, cfg.cutoff)
            env = envelope(batch.dist, cfg.cutoff)[:, None]
            states.append([h, rbf_edge, env])
        for layer in self.layers:
            sq, cnt, raws = 0.0, 0, []
            for (h, rbf_edge, env), batch in zip(states, batches):
                raw = layer.edge_messages(h, batch, rbf_edge)
                raws.append(raw)
                sq += float((raw**2).sum())
                cnt += raw.numel()
            rms = (sq / max(cnt, 1)) ** 0.5
            if rms > 0:
                layer.scale.fill_(1.0 / rms)
            for state, batch, raw in zip(states, batches, raws):
                state[0] = state[0] + scatter_mean(
                    raw * layer.scale * state[2], batch.dst, batch.n_atoms
                )
        self.calibrated = True
