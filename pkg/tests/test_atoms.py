"""Graph construction, centering, and energy referencing."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equiscale.atoms import (
    AtomicSystem,
    NormalizationStats,
    build_graph,
    center_of_mass_center,
    denormalize_predictions,
    fit_energy_reference,
    normalize_labels,
    read_systems,
    token_count,
    write_systems,
)
from equiscale.errors import DataFormatError, NormalizationError
from equiscale.so3 import sample_rotation


def make_system(pos, z=None, energy=None, forces=None):
    pos = np.asarray(pos, dtype=float)
    if z is None:
        z = np.ones(len(pos), dtype=int)
    return AtomicSystem(atomic_numbers=z, positions=pos, energy=energy, forces=forces)


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------


def edge_set(g):
    return set(zip(g.src.tolist(), g.dst.tolist()))


def test_two_atoms_within_cutoff():
    g = build_graph(make_system([[0, 0, 0], [3, 0, 0]]), cutoff=6.0, k_max=30)
    assert edge_set(g) == {(0, 1), (1, 0)}
    assert np.allclose(g.rel[g.dst == 1][0], [-3.0, 0.0, 0.0])


def test_two_atoms_outside_cutoff():
    g = build_graph(make_system([[0, 0, 0], [7, 0, 0]]), cutoff=6.0, k_max=30)
    assert g.n_edges == 0


def test_neighbor_cap_keeps_nearest():
    # brute-force sort oracle on a constructed cluster: 31 candidates in
    # range, cap 30 -> the 30 nearest kept
    rng = np.random.default_rng(3)
    center = np.zeros(3)
    shells = 0.5 + 5.0 * rng.permutation(np.linspace(0.01, 0.99, 31))
    dirs = rng.normal(size=(31, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pos = np.vstack([center, dirs * shells[:, None]])
    g = build_graph(make_system(pos), cutoff=6.0, k_max=30)
    into_center = sorted(g.src[g.dst == 0].tolist())
    dists = np.linalg.norm(pos[1:], axis=1)
    expected = sorted((1 + np.argsort(dists)[:30]).tolist())
    assert into_center == expected
    assert len(into_center) == 30


def test_neighbor_cap_tie_break_lower_index():
    # equidistant ring: ties resolved toward the lower atom index
    pos = [[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0]]
    g = build_graph(make_system(pos), cutoff=6.0, k_max=2)
    into_center = sorted(g.src[g.dst == 0].tolist())
    assert into_center == [1, 2]


def test_graph_topology_rotation_invariant_and_rel_equivariant():
    rng = np.random.default_rng(5)
    pos = rng.normal(size=(12, 3)) * 2.5
    sys_a = make_system(pos)
    g_a = build_graph(sys_a, cutoff=4.0, k_max=6)
    for _ in range(5):
        R = sample_rotation(rng)
        g_b = build_graph(make_system(pos @ R.T), cutoff=4.0, k_max=6)
        assert edge_set(g_a) == edge_set(g_b)
        assert np.abs(g_a.dist - g_b.dist).max() < 1e-10
        assert np.abs(g_b.rel - g_a.rel @ R.T).max() < 1e-10


def test_rel_recomputable_from_positions():
    rng = np.random.default_rng(6)
    pos = rng.normal(size=(9, 3)) * 2.0
    g = build_graph(make_system(pos), cutoff=5.0, k_max=30)
    assert np.abs(g.rel - (pos[g.src] - pos[g.dst])).max() < 1e-12
    assert g.dist.max() <= 5.0
    assert np.all(g.src != g.dst)


def test_isolated_atom_allowed():
    g = build_graph(make_system([[0, 0, 0]]), cutoff=6.0, k_max=30)
    assert g.n_edges == 0


# ---------------------------------------------------------------------------
# centering
# ---------------------------------------------------------------------------


def test_center_already_centered():
    s = make_system([[1, 0, 0], [-1, 0, 0]])
    out = center_of_mass_center(s)
    assert np.allclose(out.positions, s.positions, atol=1e-15)


def test_center_shifts_centroid_to_origin():
    s = make_system([[2, 0, 0], [0, 0, 0]])
    out = center_of_mass_center(s)
    assert np.allclose(out.positions, [[1, 0, 0], [-1, 0, 0]], atol=1e-15)
    assert np.abs(out.positions.mean(axis=0)).max() < 1e-12


def test_center_preserves_labels():
    f = np.array([[1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]])
    s = make_system([[2, 0, 0], [0, 0, 0]], energy=-1.5, forces=f)
    out = center_of_mass_center(s)
    assert out.energy == -1.5
    assert np.array_equal(out.forces, f)


# ---------------------------------------------------------------------------
# energy referencing
# ---------------------------------------------------------------------------


def test_reference_single_element_linear():
    systems = [
        make_system(np.zeros((n, 3)) + np.arange(n)[:, None] * 10.0,
                    z=np.full(n, 6), energy=n * 2.5, forces=np.zeros((n, 3)))
        for n in (2, 3, 5, 8)
    ]
    stats = fit_energy_reference(systems)
    assert np.isclose(stats.per_element_refs[6], 2.5, atol=1e-10)
    for s in systems:
        assert abs(s.energy - stats.reference_energy(s) - stats.mu) < 1e-10


def test_reference_mu_sigma():
    base = [
        make_system(np.zeros((2, 3)) + [[0, 0, 0], [50, 0, 0]],
                    z=np.array([1, 1]), energy=e, forces=np.zeros((2, 3)))
        for e in (0.0, 2.0)
    ]
    stats = fit_energy_reference(base)
    # referenced energies are {-1, +1}; mu = 0 after centering on the mean,
    # the raw spread {0, 2} has mean 1 and std 1
    refd = [s.energy - stats.reference_energy(s) for s in base]
    assert np.isclose(np.mean(refd) - stats.mu, 0.0, atol=1e-12)
    assert np.isclose(stats.sigma, 1.0, atol=1e-12)


def test_reference_recovers_random_linear_model():
    # normal-equations oracle: data from a known composition model + noise
    rng = np.random.default_rng(9)
    truth = {1: -13.6, 6: -1027.0, 8: -2040.0}
    systems = []
    for _ in range(200):
        n = int(rng.integers(3, 12))
        z = rng.choice([1, 6, 8], size=n)
        e = sum(truth[int(zz)] for zz in z) + rng.normal(0, 0.05)
        systems.append(
            make_system(rng.normal(size=(n, 3)) * 5, z=z, energy=e, forces=np.zeros((n, 3)))
        )
    stats = fit_energy_reference(systems)
    for z, c in truth.items():
        assert abs(stats.per_element_refs[z] - c) < 0.05


def test_reference_rank_deficient_named():
    # elements 1 and 6 always appear in lockstep -> degenerate columns
    systems = [
        make_system(np.zeros((2 * k, 3)) + np.arange(2 * k)[:, None] * 9.0,
                    z=np.array([1, 6] * k), energy=float(k), forces=np.zeros((2 * k, 3)))
        for k in (1, 2, 3)
    ]
    with pytest.raises(DataFormatError) as err:
        fit_energy_reference(systems)
    assert "1" in str(err.value) and "6" in str(err.value)


def test_normalize_examples():
    stats = NormalizationStats(mu=3.0, sigma=2.0, per_element_refs={})
    s = make_system([[0, 0, 0]], energy=3.0, forces=np.array([[2.0, 0.0, 0.0]]))
    out = normalize_labels(s, stats)
    assert out.energy == 0.0
    assert np.allclose(out.forces, [[1.0, 0.0, 0.0]])


def test_sigma_zero_rejected():
    with pytest.raises(NormalizationError):
        NormalizationStats(mu=0.0, sigma=0.0, per_element_refs={})


@settings(max_examples=50, deadline=None)
@given(
    e=st.floats(-1e3, 1e3),
    mu=st.floats(-10, 10),
    sigma=st.floats(0.01, 100),
)
def test_normalize_roundtrip(e, mu, sigma):
    stats = NormalizationStats(mu=mu, sigma=sigma, per_element_refs={1: -3.0})
    s = make_system([[0, 0, 0], [9, 0, 0]], energy=e,
                    forces=np.array([[1.0, -2.0, 0.5], [0.0, 0.0, 0.0]]))
    back = denormalize_predictions(normalize_labels(s, stats), stats)
    assert abs(back.energy - e) < 1e-10 * max(1.0, abs(e))
    assert np.abs(back.forces - s.forces).max() < 1e-10


def test_training_set_normalized_stats():
    rng = np.random.default_rng(11)
    systems = []
    for _ in range(100):
        n = int(rng.integers(2, 9))
        z = rng.choice([1, 8], size=n)
        e = sum({1: -13.6, 8: -2040.0}[int(zz)] for zz in z) + rng.normal(0, 2.0)
        systems.append(
            make_system(rng.normal(size=(n, 3)) * 4, z=z, energy=e, forces=np.zeros((n, 3)))
        )
    stats = fit_energy_reference(systems)
    normed = [normalize_labels(s, stats).energy for s in systems]
    assert abs(np.mean(normed)) < 1e-8
    assert abs(np.std(normed) - 1.0) < 1e-8


# ---------------------------------------------------------------------------
# tokens and file io
# ---------------------------------------------------------------------------


def test_token_count_sums_atoms():
    systems = [make_system(np.zeros((n, 3)) + np.arange(n)[:, None] * 9.0) for n in (1, 4, 7)]
    assert token_count(systems) == 12


def test_jsonl_roundtrip():
    rng = np.random.default_rng(12)
    systems = [
        make_system(rng.normal(size=(3, 3)), z=np.array([1, 6, 8]),
                    energy=-2.25, forces=rng.normal(size=(3, 3))),
        make_system(rng.normal(size=(2, 3)), z=np.array([1, 1])),
    ]
    buf = io.StringIO()
    assert write_systems(systems, buf) == 2
    buf.seek(0)
    back = list(read_systems(buf))
    assert len(back) == 2
    assert np.allclose(back[0].positions, systems[0].positions)
    assert back[0].energy == systems[0].energy
    assert np.allclose(back[0].forces, systems[0].forces)
    assert back[1].energy is None


@pytest.mark.parametrize(
    "line",
    [
        '{"z": [], "pos": []}',  # no atoms
        '{"z": [1], "pos": [[0, 0, 0]], "energy": 1.0}',  # energy without forces
        '{"z": [1, 1], "pos": [[0, 0, 0]]}',  # shape mismatch
        '{"z": [0], "pos": [[0, 0, 0]]}',  # non-positive atomic number
        '{"z": [1], "pos": [[0, 0, "oops"]]}',
        "not json",
    ],
)
def test_reader_rejects_invalid_records(line):
    with pytest.raises(DataFormatError):
        list(read_systems(io.StringIO(line + "\n")))
