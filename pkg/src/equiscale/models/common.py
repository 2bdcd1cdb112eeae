"""Shared building blocks for the message-passing families.

Initialization follows the width-scaling convention used for learning-rate
transfer: dense weights are Gaussian with std 1/sqrt(fan_in) (biases zero),
so activations stay order-one as the width grows and the base learning rate
can be transferred across widths by eta(w) = eta_base * w_base / w.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..atoms import AtomicSystem, build_graph

__all__ = [
    "MLP",
    "Batch",
    "featurize",
    "dense_init",
    "radial_basis",
    "envelope",
    "scatter_mean",
    "scatter_sum",
]


def dense_init(linear: nn.Linear, gen: torch.Generator, std: float | None = None) -> None:
    fan_in = linear.weight.shape[1]
    std = (1.0 / fan_in**0.5) if std is None else std
    with torch.no_grad():
        linear.weight.normal_(0.0, std, generator=gen)
        if linear.bias is not None:
            linear.bias.zero_()


class MLP(nn.Module):
    """Dense stack with SiLU between layers (smooth everywhere)."""

    def __init__(self, dims: list, gen: torch.Generator, final_std: float | None = None):
        super().__init__()
        layers = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            lin = nn.Linear(a, b)
            dense_init(lin, gen, std=final_std if i == len(dims) - 2 and final_std is not None else None)
            layers.append(lin)
        self.layers = nn.ModuleList(layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < len(self.layers) - 1:
                x = torch.nn.functional.silu(x)
        return x


def radial_basis(dist: torch.Tensor, n_rbf: int, cutoff: float) -> torch.Tensor:
    """Gaussian radial basis on [0, cutoff], shape (..., n_rbf)."""
    centers = torch.linspace(0.0, cutoff, n_rbf, dtype=dist.dtype, device=dist.device)
    gamma = (n_rbf / cutoff) ** 2
    return torch.exp(-gamma * (dist[..., None] - centers) ** 2)


def envelope(dist: torch.Tensor, cutoff: float) -> torch.Tensor:
    """C^2 cutoff envelope: 1 at r = 0, 0 at r >= cutoff."""
    u = torch.clamp(dist / cutoff, 0.0, 1.0)
    return 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)


def scatter_sum(values: torch.Tensor, index: torch.Tensor, n_out: int) -> torch.Tensor:
    out = torch.zeros((n_out,) + values.shape[1:], dtype=values.dtype, device=values.device)
    return out.index_add_(0, index, values)


def scatter_mean(values: torch.Tensor, index: torch.Tensor, n_out: int) -> torch.Tensor:
    """Mean over incoming values per output slot; zero where nothing arrives."""
    total = scatter_sum(values, index, n_out)
    counts = torch.zeros(n_out, dtype=values.dtype, device=values.device)
    counts.index_add_(0, index, torch.ones_like(index, dtype=values.dtype))
    counts = counts.clamp(min=1.0)
    return total / counts.reshape((n_out,) + (1,) * (values.dim() - 1))


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Concatenated systems with a shared edge list (and family extras)."""

    z: torch.Tensor  # (n,)
    pos: torch.Tensor  # (n, 3)
    system_index: torch.Tensor  # (n,)
    n_systems: int
    n_tokens: int
    src: torch.Tensor  # (E,)
    dst: torch.Tensor  # (E,)
    rel: torch.Tensor  # (E, 3)
    dist: torch.Tensor  # (E,)
    energy: torch.Tensor | None = None  # (S,)
    forces: torch.Tensor | None = None  # (n, 3)
    # directional extras
    quad_u: torch.Tensor | None = None
    quad_v: torch.Tensor | None = None
    quad_edge: torch.Tensor | None = None  # (Q,) edge id of (u, v)
    cos_phi: torch.Tensor | None = None  # (Q,)
    cos_omega: torch.Tensor | None = None  # (Q,)
    # spherical extras
    wigner: torch.Tensor | None = None  # (E, K, K) block-diag D_l(R_uv)

    @property
    def n_atoms(self) -> int:
        return int(self.z.shape[0])


def angle_features(pos: np.ndarray, quads: np.ndarray, delta: float = 1e-6) -> tuple:
    """Bond-angle and dihedral features for quadruplets (u, v, k, j).

    cos_phi is the angle at v between r_vu and r_vk.  cos_omega is the angle
    between the planes (u, v, k) and (v, k, j) via their normals; the smooth
    denominator ``|n1||n2| + delta`` sends the feature continuously to zero
    for collinear (degenerate) triplets instead of leaving it undefined.
    """
    u, v, k, j = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    r_vu = pos[u] - pos[v]
    r_vk = pos[k] - pos[v]
    r_kj = pos[j] - pos[k]
    r_kv = pos[v] - pos[k]
    nu = np.linalg.norm(r_vu, axis=1)
    nk = np.linalg.norm(r_vk, axis=1)
    cos_phi = np.einsum("ij,ij->i", r_vu, r_vk) / (nu * nk + 1e-12)
    n1 = np.cross(r_vu, r_vk)
    n2 = np.cross(r_kj, r_kv)
    denom = np.linalg.norm(n1, axis=1) * np.linalg.norm(n2, axis=1) + delta
    cos_omega = np.einsum("ij,ij->i", n1, n2) / denom
    return cos_phi, cos_omega


def _enumerate_quads(src: np.ndarray, dst: np.ndarray, n: int) -> tuple:
    """Quadruplets (u, v, k, j) with k in N(v)\\{u}, j in N(k)\\{u, v}.

    Returns (quads (Q, 4), quad_edge (Q,)) where quad_edge maps each quad to
    the index of its (u, v) edge.
    """
    nbrs = [src[dst == v] for v in range(n)]
    quads = []
    quad_edge = []
    for e, (u, v) in enumerate(zip(src.tolist(), dst.tolist())):
        for k in nbrs[v]:
            if k == u:
                continue
            for j in nbrs[k]:
                if j == u or j == v:
                    continue
                quads.append((u, v, k, j))
                quad_edge.append(e)
    if not quads:
        return np.empty((0, 4), dtype=int), np.empty(0, dtype=int)
    return np.array(quads, dtype=int), np.array(quad_edge, dtype=int)


def _edge_wigner_blocks(rel: np.ndarray, l_max: int) -> np.ndarray:
    """Block-diagonal Wigner-D of the edge-aligned frame per edge, (E, K, K)."""
    from ..so3 import edge_frame, wigner_d

    K = (l_max + 1) ** 2
    out = np.zeros((rel.shape[0], K, K))
    for e in range(rel.shape[0]):
        frame = edge_frame(rel[e])
        off = 0
        for l in range(l_max + 1):
            d = 2 * l + 1
            out[e, off : off + d, off : off + d] = wigner_d(frame, l)
            off += d
    return out


def featurize(systems: list, config, device: str = "cpu") -> Batch:
    """Build a batch (graphs, labels, family extras) from a list of systems."""
    dtype = torch.float64 if config.dtype == "float64" else torch.float32
    z_list, pos_list, sys_idx = [], [], []
    src_list, dst_list = [], []
    offset = 0
    for i, s in enumerate(systems):
        g = build_graph(s, cutoff=config.cutoff, k_max=config.k_max)
        z_list.append(s.atomic_numbers)
        pos_list.append(s.positions)
        sys_idx.append(np.full(s.n_atoms, i, dtype=int))
        src_list.append(g.src + offset)
        dst_list.append(g.dst + offset)
        offset += s.n_atoms

    z = np.concatenate(z_list)
    pos = np.concatenate(pos_list)
    src = np.concatenate(src_list).astype(int)
    dst = np.concatenate(dst_list).astype(int)
    rel = pos[src] - pos[dst] if src.size else np.empty((0, 3))
    dist = np.linalg.norm(rel, axis=-1) if src.size else np.empty(0)

    labeled = all(s.labeled for s in systems)
    batch = Batch(
        z=torch.from_numpy(z).long(),
        pos=torch.from_numpy(pos).to(dtype),
        system_index=torch.from_numpy(np.concatenate(sys_idx)).long(),
        n_systems=len(systems),
        n_tokens=int(z.size),
        src=torch.from_numpy(src).long(),
        dst=torch.from_numpy(dst).long(),
        rel=torch.from_numpy(rel).to(dtype),
        dist=torch.from_numpy(dist).to(dtype),
        energy=torch.tensor([s.energy for s in systems], dtype=dtype) if labeled else None,
        forces=torch.from_numpy(np.concatenate([s.forces for s in systems])).to(dtype)
        if labeled
        else None,
    )

    if config.family == "directional":
        quads, quad_edge = _enumerate_quads(src, dst, len(z))
        cos_phi, cos_omega = (
            angle_features(pos, quads) if quads.size else (np.empty(0), np.empty(0))
        )
        batch.quad_u = torch.from_numpy(quads[:, 0] if quads.size else np.empty(0, dtype=int)).long()
        batch.quad_v = torch.from_numpy(quads[:, 1] if quads.size else np.empty(0, dtype=int)).long()
        batch.quad_edge = torch.from_numpy(quad_edge).long()
        batch.cos_phi = torch.from_numpy(cos_phi).to(dtype)
        batch.cos_omega = torch.from_numpy(cos_omega).to(dtype)
    elif config.family == "spherical-tensor":
        batch.wigner = torch.from_numpy(_edge_wigner_blocks(rel, config.l_max)).to(dtype)
    return batch
