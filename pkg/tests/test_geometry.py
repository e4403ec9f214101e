from itertools import combinations

import pytest
from hypothesis import given, settings, strategies as st

from pairgraft.geometry import (
    Role,
    Shape,
    Topology,
    build_layout,
    commutes,
    logical_strings,
    pauli_support_mask,
    qubit_counts,
)

PATCHES = [Topology.RotatedGood, Topology.RotatedBad, Topology.Unrotated]


def _mask(p):
    return pauli_support_mask(p.data_qubits)


@pytest.mark.parametrize(
    "topology,d,expected",
    [
        ("rotated-good", 3, 25),
        ("rotated-bad", 3, 33),
        ("unrotated", 3, 49),
    ],
)
def test_qubit_count_examples(topology, d, expected):
    assert build_layout(topology, d).num_qubits == expected


@pytest.mark.parametrize("topology", PATCHES + [Topology.Torus])
@pytest.mark.parametrize("d", [3, 5, 7, 9])
def test_qubit_count_formula(topology, d):
    if topology is Topology.Torus:
        d += 1
    assert build_layout(topology, d).num_qubits == qubit_counts(topology, d)


@pytest.mark.parametrize("topology", ["rotated-good", "rotated-bad", "unrotated"])
def test_even_patch_distance_rejected(topology):
    with pytest.raises(ValueError):
        build_layout(topology, 4)


def test_odd_torus_rejected():
    with pytest.raises(ValueError):
        build_layout("torus", 5)


@pytest.mark.parametrize("topology,d", [("rotated-good", 5), ("rotated-bad", 5), ("unrotated", 3), ("torus", 6)])
def test_plaquettes_commute(topology, d):
    layout = build_layout(topology, d)
    for a, b in combinations(layout.plaquettes, 2):
        assert commutes(_mask(a), a.pauli_type, _mask(b), b.pauli_type)


@pytest.mark.parametrize("topology,d", [("rotated-good", 5), ("rotated-bad", 5), ("unrotated", 3), ("torus", 4)])
def test_logicals_commute_with_stabilizers_and_pair_up(topology, d):
    layout = build_layout(topology, d)
    strings = layout.logical_observables
    for s in strings:
        m = pauli_support_mask(s.path)
        for p in layout.plaquettes:
            assert commutes(m, s.pauli_type, _mask(p), p.pauli_type)
    for a, b in combinations(strings, 2):
        if a.pauli_type == b.pauli_type:
            continue
        # conjugate strings cross once; parallel torus strings share a whole row
        crossing = a.label[1:] != b.label[1:] or topology != "torus"
        ma, mb = pauli_support_mask(a.path), pauli_support_mask(b.path)
        assert commutes(ma, a.pauli_type, mb, b.pauli_type) != crossing


def test_rotated_good_logical_is_a_row():
    layout = build_layout("rotated-good", 3)
    (z,) = [s for s in logical_strings(layout) if s[2] == "Z"]
    rows = {q.pos[0] for q in z[1]}
    assert len(z[1]) == 3 and len(rows) == 1


def test_rotated_bad_logical_is_a_column_by_symplectic_check():
    layout = build_layout("rotated-bad", 3)
    strings = {s.pauli_type: s for s in layout.logical_observables}
    z, x = strings["Z"], strings["X"]
    assert len(z.path) == 3 and len({q.pos[1] for q in z.path}) == 1
    zm, xm = pauli_support_mask(z.path), pauli_support_mask(x.path)
    assert not commutes(zm, "Z", xm, "X")
    for p in layout.plaquettes:
        assert commutes(zm, "Z", _mask(p), p.pauli_type)


def test_torus_has_four_strings_of_length_l():
    layout = build_layout("torus", 4)
    strings = layout.logical_observables
    assert sorted(s.label for s in strings) == ["Xh", "Xv", "Zh", "Zv"]
    assert all(len(s.path) == 4 for s in strings)


@pytest.mark.parametrize("topology,d", [("rotated-good", 5), ("torus", 6), ("unrotated", 5)])
def test_data_qubit_membership_bounded(topology, d):
    layout = build_layout(topology, d)
    for q in layout.data_qubits:
        owners = [p for p in layout.plaquettes if q in p.data_qubits]
        assert sum(p.pauli_type == "Z" for p in owners) <= 2
        assert sum(p.pauli_type == "X" for p in owners) <= 2


@pytest.mark.parametrize("topology,d", [("rotated-good", 5), ("rotated-bad", 5)])
def test_aux_counts_follow_shape(topology, d):
    layout = build_layout(topology, d)
    for p in layout.plaquettes:
        if p.n >= 3:
            assert len(p.aux) == 3
        elif p.n == 2:
            labels = set(p.labels)
            shares = labels in ({1, 3}, {2, 4})
            assert len(p.aux) == (1 if shares else 3)


def test_aux_owned_by_one_plaquette():
    layout = build_layout("torus", 6)
    owners = {}
    for p in layout.plaquettes:
        for _, q in p.aux:
            assert q.role is not Role.Data
            assert q.index not in owners
            owners[q.index] = p.id


def test_rotated_good_boundary_orientation():
    layout = build_layout("rotated-good", 5)
    for p in layout.plaquettes:
        if p.n != 2:
            continue
        cols = {q.pos[1] for q in p.data_qubits}
        vertical_edge = len(cols) == 1
        assert vertical_edge == (p.pauli_type == "Z")


def test_bulk_shapes_are_four_gons():
    layout = build_layout("torus", 4)
    assert {p.shape for p in layout.plaquettes} == {Shape.FourGon}


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([3, 5, 7]), st.sampled_from(PATCHES))
def test_indices_are_dense_and_unique(d, topology):
    layout = build_layout(topology, d)
    assert [q.index for q in layout.qubits] == list(range(layout.num_qubits))
    assert len({q.pos for q in layout.qubits}) == layout.num_qubits
