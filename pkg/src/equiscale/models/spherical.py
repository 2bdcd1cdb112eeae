"""High-order spherical-tensor message passing.

Node states are irreps tensors (C channels per order l <= l_max).  Messages
couple the source state with spherical harmonics of the edge direction.  Two
implementations are provided:

* :func:`so3_convolution_full` -- the reference path: a dense contraction of
  the source irreps with Clebsch-Gordan coefficients and explicitly evaluated
  spherical harmonics, one (l1, l2, l3) weight matrix per coupling path.
  Slow but transparently correct; it serves as the oracle for the fast path.

* :func:`so2_convolution_reduced` and :class:`So2EdgeConv` -- the fast path:
  rotate the source state into the edge-aligned frame (where only m2 = 0
  harmonics survive), apply per-(l1, l3, m) scalar/2x2 kernels that mix
  channels, and rotate back.  :func:`reduce_weights` maps full-path weights
  onto these kernels; under that mapping the two paths agree to machine
  precision.

The kernel convention for m > 0 couples the (+m, -m) component pair as

    [y_{+m}]   [ w_{+m}  -w_{-m} ] [h_{+m}]
    [y_{-m}] = [ w_{-m}   w_{+m} ] [h_{-m}]

and m = 0 uses the plain scalar rule y_0 = w_0 h_0.  Kernels act only for
|m| <= m_max; components above m_max are dropped in the aligned frame, which
preserves equivariance because the frame co-rotates with the input.

The aligned-frame harmonic value (a constant per l2) is absorbed into the
kernel weights; :func:`reduce_weights` includes it so the equivalence with
the full path is exact rather than up to a reparameterization.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError
from ..so3 import IrrepsTensor, real_spherical_harmonics, sh_pole_value, wigner_d
from .common import MLP, Batch, dense_init, envelope, radial_basis, scatter_mean, scatter_sum

__all__ = [
    "So2EdgeConv",
    "SphericalTensorModel",
    "coupling_paths",
    "reduce_weights",
    "so2_convolution_reduced",
    "so2_paths",
    "so3_convolution_full",
]


def coupling_paths(l_max: int) -> list:
    """All (l1, l2, l3) triples within l_max satisfying the triangle rule."""
    return [
        (l1, l2, l3)
        for l1 in range(l_max + 1)
        for l2 in range(l_max + 1)
        for l3 in range(abs(l1 - l2), min(l_max, l1 + l2) + 1)
    ]


def so2_paths(l_max: int, m_max: int) -> list:
    """All (l1, l3, m) kernel slots, m = 0..min(l1, l3, m_max)."""
    return [
        (l1, l3, m)
        for l1 in range(l_max + 1)
        for l3 in range(l_max + 1)
        for m in range(min(l1, l3, m_max) + 1)
    ]


def so3_convolution_full(h: IrrepsTensor, r_uv: np.ndarray, weights: dict, cg) -> IrrepsTensor:
    """Reference message: couple source irreps with edge spherical harmonics.

    ``weights[(l1, l2, l3)]`` is a (C_in, C_out) channel-mixing matrix per
    coupling path.  Output order l3 and channel count follow the weights.
    """
    r_uv = np.asarray(r_uv, dtype=float)
    rhat = r_uv / np.linalg.norm(r_uv)
    l_max = h.l_max
    ys = real_spherical_harmonics(rhat, l_max)
    c_out = next(iter(weights.values())).shape[1]
    out = IrrepsTensor.zeros(l_max, c_out)
    for (l1, l2, l3), w in weights.items():
        contrib = np.einsum("cm,mnk,n->ck", h.blocks[l1], cg.block(l1, l2, l3), ys[l2])
        out.blocks[l3] += w.T @ contrib
    return out


def reduce_weights(weights: dict, cg, l_max: int) -> dict:
    """Map full-path weights onto SO(2) kernels (aligned-frame constants included).

    Returns ``kernels[(l1, l3)] = {"pos": {m: W}, "neg": {m: W}}`` with

        pos[m] = sum_l2  w[(l1,l2,l3)] * C[(l1,m),(l2,0)->(l3,m)]  * Y_l2(pole)
        neg[m] = sum_l2  w[(l1,l2,l3)] * C[(l1,m),(l2,0)->(l3,-m)] * Y_l2(pole)
    """
    kernels = {}
    for l1 in range(l_max + 1):
        for l3 in range(l_max + 1):
            pos, neg = {}, {}
            for m in range(min(l1, l3) + 1):
                acc_p = None
                acc_n = None
                for l2 in range(abs(l1 - l3), min(l_max, l1 + l3) + 1):
                    key = (l1, l2, l3)
                    if key not in weights:
                        continue
                    blk = cg.block(l1, l2, l3)
                    pole = sh_pole_value(l2)
                    term_p = weights[key] * (blk[m + l1, l2, m + l3] * pole)
                    acc_p = term_p if acc_p is None else acc_p + term_p
                    if m > 0:
                        term_n = weights[key] * (blk[m + l1, l2, -m + l3] * pole)
                        acc_n = term_n if acc_n is None else acc_n + term_n
                if acc_p is not None:
                    pos[m] = acc_p
                    if m > 0:
                        neg[m] = acc_n
            kernels[(l1, l3)] = {"pos": pos, "neg": neg}
    return kernels


def so2_convolution_reduced(
    h: IrrepsTensor, frame: np.ndarray, kernels: dict, m_max: int | None = None
) -> IrrepsTensor:
    """Fast message path: rotate in, apply per-m kernels, rotate out."""
    l_max = h.l_max
    if m_max is None:
        m_max = l_max
    if m_max > l_max:
        raise ConfigError(f"m_max={m_max} exceeds l_max={l_max}")
    ht = [h.blocks[l] @ wigner_d(frame, l).T for l in range(l_max + 1)]
    c_out = None
    for k in kernels.values():
        if k["pos"]:
            c_out = next(iter(k["pos"].values())).shape[1]
            break
    if c_out is None:
        raise ConfigError("kernels are empty")
    out = IrrepsTensor.zeros(l_max, c_out)
    for l3 in range(l_max + 1):
        y = np.zeros((c_out, 2 * l3 + 1))
        for l1 in range(l_max + 1):
            ker = kernels.get((l1, l3))
            if ker is None or not ker["pos"]:
                continue
            pos, neg = ker["pos"], ker["neg"]
            if 0 in pos:
                y[:, l3] += ht[l1][:, l1] @ pos[0]
            for m in range(1, min(l1, l3, m_max) + 1):
                if m not in pos:
                    continue
                hp = ht[l1][:, l1 + m]
                hn = ht[l1][:, l1 - m]
                y[:, l3 + m] += hp @ pos[m] - hn @ neg[m]
                y[:, l3 - m] += hp @ neg[m] + hn @ pos[m]
        out.blocks[l3] = y @ wigner_d(frame, l3)
    return out


# ---------------------------------------------------------------------------
# torch modules
# ---------------------------------------------------------------------------


class So2EdgeConv(nn.Module):
    """Edge convolution in the aligned frame with channel-mixing kernels.

    Per-edge kernels are the learned base matrices modulated by a radial gain
    ``1 + mlp(rbf)`` (final layer zero-initialized, so gains start at exactly
    1 and the conv matches its static kernels at init).
    """

    def __init__(self, channels: int, l_max: int, m_max: int, n_rbf: int, gen: torch.Generator):
        super().__init__()
        self.channels = channels
        self.l_max = l_max
        self.m_max = m_max
        self.paths = so2_paths(l_max, m_max)
        self.weights = nn.ParameterDict()
        std = 1.0 / (channels**0.5 * (l_max + 1))
        for l1, l3, m in self.paths:
            w = torch.empty(channels, channels)
            with torch.no_grad():
                w.normal_(0.0, std, generator=gen)
            self.weights[f"{l1}_{l3}_{m}_p"] = nn.Parameter(w)
            if m > 0:
                w = torch.empty(channels, channels)
                with torch.no_grad():
                    w.normal_(0.0, std, generator=gen)
                self.weights[f"{l1}_{l3}_{m}_n"] = nn.Parameter(w)
        self.radial = MLP([n_rbf, n_rbf, len(self.paths)], gen, final_std=0.0)

    def forward(self, h_src: torch.Tensor, wigner: torch.Tensor, rbf: torch.Tensor) -> torch.Tensor:
        """h_src: (E, C, K); wigner: (E, K, K); rbf: (E, n_rbf) -> (E, C, K)."""
        ht = torch.einsum("eck,elk->ecl", h_src, wigner)  # rotate into the frame
        gains = 1.0 + self.radial(rbf)  # (E, n_paths)
        n_edges = h_src.shape[0]
        cols = [
            [
                torch.zeros(n_edges, self.channels, dtype=h_src.dtype, device=h_src.device)
                for _ in range(2 * l3 + 1)
            ]
            for l3 in range(self.l_max + 1)
        ]
        for p, (l1, l3, m) in enumerate(self.paths):
            off1 = l1 * l1
            g = gains[:, p : p + 1]
            wp = self.weights[f"{l1}_{l3}_{m}_p"]
            if m == 0:
                h0 = ht[:, :, off1 + l1]
                cols[l3][l3] = cols[l3][l3] + g * (h0 @ wp)
            else:
                wn = self.weights[f"{l1}_{l3}_{m}_n"]
                hp = ht[:, :, off1 + l1 + m]
                hn = ht[:, :, off1 + l1 - m]
                cols[l3][l3 + m] = cols[l3][l3 + m] + g * (hp @ wp - hn @ wn)
                cols[l3][l3 - m] = cols[l3][l3 - m] + g * (hp @ wn + hn @ wp)
        y = torch.cat([torch.stack(c, dim=-1) for c in cols], dim=-1)  # (E, C, K)
        return torch.einsum("eck,ekl->ecl", y, wigner)  # rotate back: y @ D


class GatedInteraction(nn.Module):
    """Node-wise channel mixing with invariant gates (equivariant)."""

    def __init__(self, channels: int, l_max: int, gen: torch.Generator):
        super().__init__()
        self.l_max = l_max
        self.mix = nn.ParameterList()
        for _ in range(l_max + 1):
            w = torch.empty(channels, channels)
            with torch.no_grad():
                w.normal_(0.0, 1.0 / channels**0.5, generator=gen)
            self.mix.append(nn.Parameter(w))
        self.scalar_mlp = MLP([channels, channels, channels], gen)
        self.gate_mlp = MLP([channels, channels, channels * l_max], gen)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        scalars = h[:, :, 0]
        gates = torch.sigmoid(self.gate_mlp(scalars)).reshape(
            h.shape[0], -1, self.l_max
        )
        pieces = [self.scalar_mlp(scalars)[:, :, None]]
        for l in range(1, self.l_max + 1):
            off = l * l
            blk = h[:, :, off : off + 2 * l + 1]
            mixed = torch.einsum("ecm,cd->edm", blk, self.mix[l])
            pieces.append(mixed * gates[:, :, l - 1 : l])
        return torch.cat(pieces, dim=-1)


class SphericalTensorModel(nn.Module):
    def __init__(self, config, gen: torch.Generator):
        super().__init__()
        self.config = config
        c, l_max = config.channels, config.l_max
        self.embed = nn.Embedding(config.z_max + 1, c)
        with torch.no_grad():
            self.embed.weight.normal_(0.0, 1.0, generator=gen)
        self.convs = nn.ModuleList(
            So2EdgeConv(c, l_max, config.m_max, config.n_rbf, gen)
            for _ in range(config.depth)
        )
        self.interactions = nn.ModuleList(
            GatedInteraction(c, l_max, gen) for _ in range(config.depth)
        )
        hidden = max(8, c)
        self.energy_head = MLP([c, hidden, 1], gen)
        self.force_head = nn.Linear(c, 1, bias=False)
        dense_init(self.force_head, gen)

    def forward(self, batch: Batch):
        cfg = self.config
        n = batch.n_atoms
        K = (cfg.l_max + 1) ** 2
        scalars = self.embed(batch.z)
        h = torch.zeros(n, cfg.channels, K, dtype=scalars.dtype, device=scalars.device)
        h = torch.cat([scalars[:, :, None], h[:, :, 1:]], dim=-1)
        rbf = radial_basis(batch.dist, cfg.n_rbf, cfg.cutoff)
        env = envelope(batch.dist, cfg.cutoff)[:, None, None]
        for conv, interaction in zip(self.convs, self.interactions):
            msg = conv(h[batch.src], batch.wigner, rbf) * env
            h = h + scatter_mean(msg, batch.dst, n)
            h = h + interaction(h)
        e_atom = self.energy_head(h[:, :, 0]).squeeze(-1)
        energy = scatter_sum(e_atom, batch.system_index, batch.n_systems)
        # order-1 block columns are (x, y, z) in the chosen harmonic basis
        forces = self.force_head(h[:, :, 1:4].transpose(1, 2)).squeeze(-1)
        return energy, forces
