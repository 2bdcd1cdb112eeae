"""Atomic systems, radius graphs, and energy referencing.

Positions are in angstrom, energies in eV, forces in eV/angstrom.  One atom
is one "token"; dataset sizes are counted in tokens throughout the package.
All functions here are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .errors import DataFormatError, NormalizationError

__all__ = [
    "AtomicSystem",
    "NeighborGraph",
    "NormalizationStats",
    "build_graph",
    "center_of_mass_center",
    "denormalize_predictions",
    "fit_energy_reference",
    "normalize_labels",
    "read_systems",
    "token_count",
    "write_systems",
]


@dataclass(frozen=True)
class AtomicSystem:
    """A molecule: atomic numbers, 3D positions, optional energy/force labels."""

    atomic_numbers: np.ndarray  # (n,) positive ints
    positions: np.ndarray  # (n, 3) float, angstrom
    energy: float | None = None  # eV
    forces: np.ndarray | None = None  # (n, 3) float, eV/angstrom

    def __post_init__(self):
        z = np.asarray(self.atomic_numbers, dtype=int)
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "atomic_numbers", z)
        object.__setattr__(self, "positions", pos)
        if z.ndim != 1 or z.size < 1:
            raise DataFormatError("need at least one atom")
        if np.any(z <= 0):
            raise DataFormatError("atomic numbers must be positive")
        if pos.shape != (z.size, 3):
            raise DataFormatError(f"positions shape {pos.shape} != ({z.size}, 3)")
        if not np.all(np.isfinite(pos)):
            raise DataFormatError("positions must be finite")
        if (self.energy is None) != (self.forces is None):
            raise DataFormatError("energy and forces must be present together")
        if self.forces is not None:
            f = np.asarray(self.forces, dtype=float)
            object.__setattr__(self, "forces", f)
            object.__setattr__(self, "energy", float(self.energy))
            if f.shape != (z.size, 3):
                raise DataFormatError(f"forces shape {f.shape} != ({z.size}, 3)")
            if not np.all(np.isfinite(f)) or not np.isfinite(self.energy):
                raise DataFormatError("labels must be finite")

    @property
    def n_atoms(self) -> int:
        return int(self.atomic_numbers.size)

    @property
    def labeled(self) -> bool:
        return self.energy is not None


def token_count(systems: Iterable[AtomicSystem]) -> int:
    """Dataset size in tokens: total number of atoms."""
    return sum(s.n_atoms for s in systems)


# ---------------------------------------------------------------------------
# radius graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborGraph:
    """Directed edges (u, v) meaning u is in the neighborhood of receiver v."""

    src: np.ndarray  # (E,) int, sender u
    dst: np.ndarray  # (E,) int, receiver v
    rel: np.ndarray  # (E, 3) float, r_uv = x_u - x_v
    dist: np.ndarray  # (E,) float
    cutoff: float
    k_max: int

    @property
    def n_edges(self) -> int:
        return int(self.src.size)


def build_graph(system: AtomicSystem, cutoff: float, k_max: int) -> NeighborGraph:
    """Directed radius graph with a per-receiver neighbor cap.

    Every pair within ``cutoff`` is connected unless the receiver already has
    ``k_max`` nearer neighbors; ties at equal distance keep the lower sender
    index.  Deterministic.  Isolated atoms are allowed.
    """
    if cutoff <= 0:
        raise DataFormatError(f"cutoff must be positive, got {cutoff}")
    if k_max < 1:
        raise DataFormatError(f"k_max must be >= 1, got {k_max}")
    pos = system.positions
    n = system.n_atoms
    diff = pos[:, None, :] - pos[None, :, :]  # diff[u, v] = x_u - x_v
    dist = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(dist, np.inf)

    src_list, dst_list = [], []
    for v in range(n):
        within = np.nonzero(dist[:, v] <= cutoff)[0]
        if within.size > k_max:
            order = np.lexsort((within, dist[within, v]))  # distance, then index
            within = within[order[:k_max]]
        src_list.append(within)
        dst_list.append(np.full(within.size, v, dtype=int))

    src = np.concatenate(src_list) if src_list else np.empty(0, dtype=int)
    dst = np.concatenate(dst_list) if dst_list else np.empty(0, dtype=int)
    rel = pos[src] - pos[dst]
    return NeighborGraph(
        src=src,
        dst=dst,
        rel=rel,
        dist=np.linalg.norm(rel, axis=-1) if src.size else np.empty(0),
        cutoff=float(cutoff),
        k_max=int(k_max),
    )


def center_of_mass_center(system: AtomicSystem) -> AtomicSystem:
    """Shift positions so the (unweighted) centroid is at the origin.

    Labels are untouched: the energy is translation invariant and forces are
    derivatives with respect to relative geometry.
    """
    centroid = system.positions.mean(axis=0)
    return replace(system, positions=system.positions - centroid)


# ---------------------------------------------------------------------------
# energy referencing and normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationStats:
    """Per-element reference energies plus mean/std of referenced energies."""

    mu: float
    sigma: float
    per_element_refs: dict  # z -> eV

    def __post_init__(self):
        if not self.sigma > 0:
            raise NormalizationError(f"sigma must be positive, got {self.sigma}")

    def reference_energy(self, system: AtomicSystem) -> float:
        """Composition baseline sum_i ref[z_i] for one system."""
        return float(sum(self.per_element_refs.get(int(z), 0.0) for z in system.atomic_numbers))

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "per_element_refs": {str(k): v for k, v in sorted(self.per_element_refs.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(
            mu=float(d["mu"]),
            sigma=float(d["sigma"]),
            per_element_refs={int(k): float(v) for k, v in d["per_element_refs"].items()},
        )


def fit_energy_reference(train: Sequence[AtomicSystem]) -> NormalizationStats:
    """Least-squares per-element reference energies, then mean/std of residuals.

    Regresses total energy on element counts; the referenced energy of a
    system is e - sum_i ref[z_i], and (mu, sigma) are its training-set mean
    and standard deviation.
    """
    labeled = [s for s in train if s.labeled]
    if len(labeled) < 2:
        raise DataFormatError("need at least two labeled systems to fit a reference")
    elements = sorted({int(z) for s in labeled for z in s.atomic_numbers})
    comp = np.zeros((len(labeled), len(elements)))
    col = {z: i for i, z in enumerate(elements)}
    for i, s in enumerate(labeled):
        for z in s.atomic_numbers:
            comp[i, col[int(z)]] += 1.0
    energies = np.array([s.energy for s in labeled])

    rank = np.linalg.matrix_rank(comp)
    if rank < len(elements):
        # name the columns whose removal does not decrease the rank
        degenerate = [
            z
            for j, z in enumerate(elements)
            if np.linalg.matrix_rank(np.delete(comp, j, axis=1)) == rank
        ]
        raise DataFormatError(
            f"composition matrix is rank deficient; degenerate elements: {degenerate}"
        )

    coeffs, *_ = np.linalg.lstsq(comp, energies, rcond=None)
    referenced = energies - comp @ coeffs
    mu = float(referenced.mean())
    sigma = float(referenced.std())
    if sigma <= 0:
        sigma = 1.0  # constant referenced energies: degenerate but usable scale
    return NormalizationStats(
        mu=mu, sigma=sigma, per_element_refs={z: float(c) for z, c in zip(elements, coeffs)}
    )


def normalize_labels(system: AtomicSystem, stats: NormalizationStats) -> AtomicSystem:
    """e' = (e - ref - mu) / sigma and f' = f / sigma."""
    if not system.labeled:
        return system
    e = (system.energy - stats.reference_energy(system) - stats.mu) / stats.sigma
    return replace(system, energy=e, forces=system.forces / stats.sigma)


def denormalize_predictions(system: AtomicSystem, stats: NormalizationStats) -> AtomicSystem:
    """Inverse of :func:`normalize_labels`; exact round trip."""
    if not system.labeled:
        return system
    e = system.energy * stats.sigma + stats.mu + stats.reference_energy(system)
    return replace(system, energy=e, forces=system.forces * stats.sigma)


# ---------------------------------------------------------------------------
# dataset file format: one JSON object per line
# ---------------------------------------------------------------------------


def _system_to_record(system: AtomicSystem) -> dict:
    rec = {
        "z": [int(z) for z in system.atomic_numbers],
        "pos": [[float(x) for x in row] for row in system.positions],
    }
    if system.labeled:
        rec["energy"] = float(system.energy)
        rec["forces"] = [[float(x) for x in row] for row in system.forces]
    return rec


def _record_to_system(rec: dict) -> AtomicSystem:
    try:
        return AtomicSystem(
            atomic_numbers=np.array(rec["z"], dtype=int),
            positions=np.array(rec["pos"], dtype=float),
            energy=rec.get("energy"),
            forces=np.array(rec["forces"], dtype=float) if "forces" in rec else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed dataset record: {exc}") from exc


def write_systems(systems: Iterable[AtomicSystem], fh: IO[str]) -> int:
    """Write systems as JSON lines; returns the number written."""
    n = 0
    for s in systems:
        fh.write(json.dumps(_system_to_record(s), sort_keys=True))
        fh.write("\n")
        n += 1
    return n


def read_systems(fh: IO[str]) -> Iterator[AtomicSystem]:
    """Parse JSON-line records, rejecting any that violate the invariants."""
    for lineno, line in enumerate(fh, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
        try:
            yield _record_to_system(rec)
        except DataFormatError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from exc
