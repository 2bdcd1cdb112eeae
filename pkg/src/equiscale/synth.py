"""Synthetic molecular datasets with exact analytic labels.

A pairwise Lennard-Jones-type potential with a smooth cutoff switch stands in
for ab-initio labels: energies are invariant, forces are the exact negative
analytic gradient, and both are cheap enough to generate at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .atoms import AtomicSystem, token_count
from .errors import ConfigError

__all__ = ["ToyPotentialSpec", "energy_and_forces", "generate", "split"]


@dataclass(frozen=True)
class ToyPotentialSpec:
    """Pairwise analytic potential and sampling ranges for generation.

    Pair parameters follow Lorentz-Berthelot combination of the per-element
    values: sigma_ij = (sigma_i + sigma_j)/2, eps_ij = sqrt(eps_i * eps_j).
    The switch is identically 1 below ``switch_on`` and falls smoothly (C^2)
    to 0 at ``cutoff``, so a dimer at its minimum separation keeps the exact
    pair energy -eps and zero force.
    """

    elements: tuple = (1, 6, 8)
    epsilon: dict = field(default_factory=lambda: {1: 0.15, 6: 0.45, 8: 0.30})  # eV
    sigma: dict = field(default_factory=lambda: {1: 1.7, 6: 2.4, 8: 2.1})  # angstrom
    energy_offset: dict = field(default_factory=dict)  # per-element eV, default 0
    cutoff: float = 6.0
    switch_on: float = 4.5
    n_atoms_min: int = 4
    n_atoms_max: int = 24
    min_separation_factor: float = 0.8

    def __post_init__(self):
        for z in self.elements:
            if self.epsilon.get(z, 0.0) <= 0 or self.sigma.get(z, 0.0) <= 0:
                raise ConfigError(f"element {z} needs positive epsilon and sigma")
        if not 0 < self.switch_on < self.cutoff:
            raise ConfigError("need 0 < switch_on < cutoff")
        if not 1 <= self.n_atoms_min <= self.n_atoms_max:
            raise ConfigError("bad atom-count range")

    def pair_params(self, z1: int, z2: int) -> tuple:
        eps = math.sqrt(self.epsilon[z1] * self.epsilon[z2])
        sig = 0.5 * (self.sigma[z1] + self.sigma[z2])
        return eps, sig


def _switch(r: np.ndarray, r_on: float, r_off: float) -> tuple:
    """Quintic smoothstep S(r) and dS/dr: 1 below r_on, 0 above r_off."""
    t = np.clip((r - r_on) / (r_off - r_on), 0.0, 1.0)
    s = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    ds = -30.0 * t**2 * (1.0 - t) ** 2 / (r_off - r_on)
    ds = np.where((r > r_on) & (r < r_off), ds, 0.0)
    return s, ds


def energy_and_forces(spec: ToyPotentialSpec, z: np.ndarray, pos: np.ndarray) -> tuple:
    """Exact energy (eV) and forces (eV/angstrom) of the analytic potential."""
    n = len(z)
    energy = float(sum(spec.energy_offset.get(int(zz), 0.0) for zz in z))
    forces = np.zeros((n, 3))
    if n == 1:
        return energy, forces
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    iu, ju = np.triu_indices(n, k=1)
    r = dist[iu, ju]
    eps = np.empty_like(r)
    sig = np.empty_like(r)
    for k, (i, j) in enumerate(zip(iu, ju)):
        eps[k], sig[k] = spec.pair_params(int(z[i]), int(z[j]))
    mask = r < spec.cutoff
    if not np.any(mask):
        return energy, forces
    r, eps, sig = r[mask], eps[mask], sig[mask]
    iu, ju = iu[mask], ju[mask]

    u = r / sig
    inv6 = u**-6
    phi = inv6 * inv6 - 2.0 * inv6
    dphi_dr = 12.0 * (u**-7 - u**-13) / sig
    s, ds = _switch(r, spec.switch_on, spec.cutoff)
    energy += float(np.sum(eps * phi * s))
    # dE/dr per pair; force on i is -(dE/dr) * rhat_ij
    dE_dr = eps * (dphi_dr * s + phi * ds)
    rhat = (pos[iu] - pos[ju]) / r[:, None]
    pair_force = -dE_dr[:, None] * rhat
    np.add.at(forces, iu, pair_force)
    np.add.at(forces, ju, -pair_force)
    return energy, forces


def _sample_positions(spec: ToyPotentialSpec, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random placement with dart-throwing, then a short damped relaxation."""
    n = len(z)
    sig_min = min(spec.sigma[int(zz)] for zz in z)
    min_sep = spec.min_separation_factor * sig_min
    radius = 1.2 * max(spec.sigma.values()) * max(1.0, n ** (1.0 / 3.0))
    pos = np.zeros((n, 3))
    for i in range(n):
        for attempt in range(200):
            cand = rng.uniform(-radius, radius, size=3)
            if i == 0 or np.linalg.norm(pos[:i] - cand, axis=1).min() >= min_sep:
                pos[i] = cand
                break
        else:
            radius *= 1.3
            pos[i] = rng.uniform(-radius, radius, size=3)

    # damped steepest descent with capped displacement; the repulsive core
    # keeps atoms apart, random step scales keep conformers diverse
    n_steps = int(rng.integers(10, 30))
    step = 0.05 * rng.uniform(0.5, 1.5)
    for _ in range(n_steps):
        _, f = energy_and_forces(spec, z, pos)
        disp = step * f
        norms = np.linalg.norm(disp, axis=1, keepdims=True)
        pos = pos + disp * np.minimum(1.0, 0.25 / np.maximum(norms, 1e-12))
    return pos - pos.mean(axis=0)


def generate(spec: ToyPotentialSpec, n_systems: int, seed: int) -> tuple:
    """Generate labeled systems; returns (list of AtomicSystem, token count).

    Per-system RNG streams make the output order-deterministic and suitable
    for parallel generation.
    """
    if n_systems < 1:
        raise ConfigError("n_systems must be >= 1")
    root = np.random.SeedSequence(seed)
    systems = []
    for idx, child in enumerate(root.spawn(n_systems)):
        rng = np.random.Generator(np.random.PCG64(child))
        n = int(rng.integers(spec.n_atoms_min, spec.n_atoms_max + 1))
        z = rng.choice(np.array(spec.elements, dtype=int), size=n)
        pos = _sample_positions(spec, z, rng)
        e, f = energy_and_forces(spec, z, pos)
        systems.append(AtomicSystem(atomic_numbers=z, positions=pos, energy=e, forces=f))
    return systems, token_count(systems)


def split(systems: list, val_fraction: float, seed: int) -> tuple:
    """Deterministic disjoint (train, validation) split."""
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(systems))
    n_val = int(round(val_fraction * len(systems)))
    val_idx = set(order[:n_val].tolist())
    train = [systems[i] for i in range(len(systems)) if i not in val_idx]
    val = [systems[i] for i in range(len(systems)) if i in val_idx]
    return train, val
