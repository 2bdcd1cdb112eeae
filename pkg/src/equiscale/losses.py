"""Task and symmetry losses.

The task loss for one system of n atoms is

    L = (lambda_e / n) |e_pred - e| + (lambda_f / n) sum_i ||f_pred,i - f_i||_2

(an L1 energy term and a per-atom Euclidean force-error term).  Batches
reduce by the mean over systems.  The symmetry loss averages task losses over
M Haar-random rotations applied jointly to inputs and targets: positions and
force labels rotate, the energy label does not.  Systems must be centered so
the rotation group is the only symmetry left to sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .atoms import AtomicSystem
from .errors import ConfigError
from .models.common import Batch, featurize
from .so3 import sample_rotation

__all__ = [
    "LossSpec",
    "batch_task_loss",
    "predict",
    "rotate_system",
    "symmetry_flops_multiplier",
    "symmetry_loss",
    "task_loss_single",
]


@dataclass(frozen=True)
class LossSpec:
    """Loss coefficients; symmetry term active when ``symmetry_m >= 1``."""

    lambda_e: float = 1.0
    lambda_f: float = 1.0
    symmetry_m: int = 0
    symmetry_weight: float = 1.0

    def __post_init__(self):
        if self.lambda_e <= 0 or self.lambda_f <= 0:
            raise ConfigError("lambda_e and lambda_f must be positive")
        if self.symmetry_m < 0:
            raise ConfigError("symmetry_m must be >= 0 (0 disables the term)")
        if self.symmetry_m >= 1 and self.symmetry_weight <= 0:
            raise ConfigError("symmetry_weight must be positive when enabled")


def symmetry_flops_multiplier(m: int) -> int:
    """Training-cost multiplier with the symmetry term active: M + 1 passes."""
    if m < 0:
        raise ConfigError("M must be >= 0")
    return m + 1


def batch_task_loss(
    energy: torch.Tensor,
    forces: torch.Tensor,
    batch: Batch,
    spec: LossSpec,
    target_energy: torch.Tensor | None = None,
    target_forces: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean over systems of the per-system task loss."""
    e_true = batch.energy if target_energy is None else target_energy
    f_true = batch.forces if target_forces is None else target_forces
    if e_true is None or f_true is None:
        raise ConfigError("batch has no labels")
    n_per_system = torch.zeros(batch.n_systems, dtype=energy.dtype)
    n_per_system.index_add_(
        0, batch.system_index, torch.ones(batch.n_atoms, dtype=energy.dtype)
    )
    if (n_per_system == 0).any():
        raise ConfigError("system with zero atoms in batch")
    e_term = spec.lambda_e * (energy - e_true).abs() / n_per_system
    f_norm = (forces - f_true).norm(dim=-1)
    f_per_system = torch.zeros(batch.n_systems, dtype=energy.dtype)
    f_per_system.index_add_(0, batch.system_index, f_norm)
    f_term = spec.lambda_f * f_per_system / n_per_system
    return (e_term + f_term).mean()


def task_loss_single(
    pred_energy: float,
    pred_forces: np.ndarray,
    true_energy: float,
    true_forces: np.ndarray,
    n_atoms: int,
    spec: LossSpec,
) -> float:
    """Scalar task loss for one system (numpy convenience)."""
    if n_atoms < 1:
        raise ConfigError("n_atoms must be >= 1")
    de = abs(float(pred_energy) - float(true_energy))
    df = float(np.linalg.norm(np.asarray(pred_forces) - np.asarray(true_forces), axis=-1).sum())
    return (spec.lambda_e * de + spec.lambda_f * df) / n_atoms


def rotate_system(system: AtomicSystem, rotation: np.ndarray) -> AtomicSystem:
    """Rotate positions and force labels; the energy label is invariant."""
    return AtomicSystem(
        atomic_numbers=system.atomic_numbers,
        positions=system.positions @ rotation.T,
        energy=system.energy,
        forces=system.forces @ rotation.T if system.forces is not None else None,
    )


def predict(model: torch.nn.Module, systems: list) -> tuple:
    """Featurize and forward a list of systems; returns (energy, forces)."""
    batch = featurize(systems, model.config)
    return model(batch)


def symmetry_loss(
    model: torch.nn.Module,
    systems: list,
    m: int,
    rng: np.random.Generator,
    spec: LossSpec | None = None,
) -> torch.Tensor:
    """Average task loss over M rotated (input, target) pairs.

    Expects centered systems with labels.  Graph topology is rotation
    invariant, but geometry-dependent features are rebuilt per rotation.
    """
    if m < 1:
        raise ConfigError("M must be >= 1")
    spec = spec or LossSpec()
    total = None
    for _ in range(m):
        R = sample_rotation(rng)
        rotated = [rotate_system(s, R) for s in systems]
        batch = featurize(rotated, model.config)
        energy, forces = model(batch)
        term = batch_task_loss(energy, forces, batch, spec)
        total = term if total is None else total + term
    return total / m
