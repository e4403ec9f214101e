import time
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pairgraft.circuit_gen import generate, isolated_circuit, label_qubits
from pairgraft.geometry import build_layout
from pairgraft.stabilizer_engine import (
    PauliFault,
    Tableau,
    anticommutes,
    apply_measurement,
    group_rank,
    pauli_from_terms,
    pauli_to_terms,
    product_sign,
    propagate_fault,
    run_symbolic,
    same_group,
)

# Generator sets of the isolated ZZZZ circuit after steps 0..5.
ISG_TABLE = [
    ["XA"],
    ["Z1 ZA", "ZB", "XC"],
    ["XA XB", "ZC Z2", "Z1 ZA ZB"],
    ["Z3 ZA", "XB XC", "Z1 ZA ZB ZC Z2"],
    ["XA", "ZB", "ZC Z4", "Z1 ZB ZC Z2 Z3"],
    ["XC", "XA", "ZB", "Z1 Z2 Z3 Z4"],
]

_I = np.eye(2, dtype=complex)
_MATS = {
    "I": _I,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _dense(x, z, n):
    letters = []
    for q in range(n):
        bx, bz = (x >> q) & 1, (z >> q) & 1
        letters.append("Y" if bx and bz else "X" if bx else "Z" if bz else "I")
    # qubit 0 is the rightmost tensor factor
    return reduce(np.kron, [_MATS[c] for c in reversed(letters)])


def _ops(text, names):
    return pauli_from_terms((names[t[1:]], t[0]) for t in text.split())


def test_isg_matches_golden_table():
    t0 = time.perf_counter()
    c = isolated_circuit("Z", "standard4", 1)
    run = run_symbolic(c, snapshot_steps=True, verify=True)
    names = label_qubits(c.layout.plaquettes[0], c.schedule)
    assert len(run.snapshots) == 6
    for expected, snap in zip(ISG_TABLE, run.snapshots):
        want = [_ops(g, names) for g in expected]
        got = [(x, z) for x, z, _, _ in snap]
        assert same_group(want, got, c.num_qubits)
    assert time.perf_counter() - t0 < 1.0


def test_isg_x_plaquette_is_the_dual():
    c = isolated_circuit("X", "standard4", 1)
    run = run_symbolic(c, snapshot_steps=True)
    names = label_qubits(c.layout.plaquettes[0], c.schedule)
    swap = {"X": "Z", "Z": "X"}
    for expected, snap in zip(ISG_TABLE, run.snapshots):
        want = [_ops(" ".join(swap[t[0]] + t[1:] for t in g.split()), names) for g in expected]
        assert same_group(want, [(x, z) for x, z, _, _ in snap], c.num_qubits)


@st.composite
def _programs(draw):
    n = draw(st.integers(2, 4))
    length = draw(st.integers(1, 12))
    ops = []
    for _ in range(length):
        letters = draw(st.lists(st.sampled_from("IXYZ"), min_size=n, max_size=n))
        if all(c == "I" for c in letters):
            letters[0] = "Z"
        ops.append([(q, c) for q, c in enumerate(letters) if c != "I"])
    bits = draw(st.lists(st.integers(0, 1), min_size=length, max_size=length))
    return n, ops, bits


@settings(max_examples=200, deadline=None)
@given(_programs())
def test_tableau_agrees_with_density_matrix(program):
    n, ops, bits = program
    rho = np.eye(2**n, dtype=complex) / 2**n
    tab = Tableau(n)
    for k, terms in enumerate(ops):
        x, z = pauli_from_terms(terms)
        P = _dense(x, z, n)
        ev = np.real(np.trace(P @ rho))
        expr, det, _ = tab.measure(x, z, k)
        tab.check()
        assert det == bool(np.isclose(abs(ev), 1.0))
        if det:
            value = expr.evaluate(bits)
            assert np.isclose(ev, (-1) ** value)
        else:
            assert np.isclose(ev, 0.0)
            value = bits[k]
            assert expr.evaluate(bits) == value
        proj = (np.eye(2**n) + (-1) ** value * P) / 2
        rho = proj @ rho @ proj
        rho /= np.trace(rho)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**5 - 1), st.integers(0, 2**5 - 1), st.integers(0, 2**5 - 1), st.integers(0, 2**5 - 1))
def test_product_sign_matches_matrices(x1, z1, x2, z2):
    n = 5
    if anticommutes(x1, z1, x2, z2):
        with pytest.raises(ValueError):
            product_sign(x1, z1, x2, z2)
        return
    a, b, prod = _dense(x1, z1, n), _dense(x2, z2, n), _dense(x1 ^ x2, z1 ^ z2, n)
    sign = (-1) ** product_sign(x1, z1, x2, z2)
    assert np.allclose(a @ b, sign * prod)


@given(st.integers(0, 2**6 - 1), st.integers(0, 2**6 - 1))
def test_terms_round_trip(x, z):
    assert pauli_from_terms(pauli_to_terms(x, z)) == (x, z)


def test_pauli_from_terms_rejects_bad_input():
    with pytest.raises(ValueError):
        pauli_from_terms([(0, "X"), (0, "Z")])
    with pytest.raises(ValueError):
        pauli_from_terms([(0, "W")])
    with pytest.raises(ValueError):
        pauli_from_terms([(-1, "X")])


def test_apply_measurement_rejects_out_of_range():
    with pytest.raises(ValueError):
        apply_measurement(Tableau(2), [(3, "Z")])


def test_repeated_measurement_is_deterministic():
    tab = Tableau(3)
    _, first = apply_measurement(tab, [(0, "Z"), (1, "Z")], 0)
    _, second = apply_measurement(tab, [(0, "Z"), (1, "Z")], 1)
    assert first.random_bits == {0}
    assert second.random_bits == {0} and second.constant == 0


def test_group_rank_and_same_group():
    ops = [pauli_from_terms([(0, "Z"), (1, "Z")]), pauli_from_terms([(1, "Z"), (2, "Z")])]
    derived = ops + [pauli_from_terms([(0, "Z"), (2, "Z")])]
    assert group_rank(derived, 3) == 2
    assert same_group(ops, derived, 3)
    assert not same_group(ops, ops[:1], 3)


def _flips_by_matrices(circuit, fault):
    """Brute force: an error flips a later outcome iff it anticommutes with it."""
    ex, ez = pauli_from_terms(fault.errors)
    out = set()
    for ins in circuit.measurements:
        if ins.step > fault.step:
            x, z = pauli_from_terms(ins.targets)
            if anticommutes(x, z, ex, ez):
                out.add(ins.meas_index)
    return out


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_propagate_fault_flips(data):
    c = generate(build_layout("rotated-good", 3), "standard4", 2)
    step = data.draw(st.integers(0, len(c.steps) - 1))
    q = data.draw(st.integers(0, c.num_qubits - 1))
    pa = data.draw(st.sampled_from("XYZ"))
    fault = PauliFault(step, ((q, pa),))
    assert set(propagate_fault(c, fault)) == _flips_by_matrices(c, fault)


def test_readout_flip_only_flips_itself():
    c = isolated_circuit("Z", "standard4", 1)
    assert propagate_fault(c, PauliFault(2, (), readout=3)) == {3}


def test_hook_equivalent_to_vertical_data_pair():
    # Z_B after step 2 and Z1 Z3 at the same time differ by the ISG element Z1 ZA ZB Z3 ZA
    c = isolated_circuit("Z", "standard4", 2)
    names = label_qubits(c.layout.plaquettes[0], c.schedule)
    run = run_symbolic(c, snapshot_steps=True)
    after_2z = [(x, z) for x, z, _, _ in run.snapshots[2]]
    hook = pauli_from_terms([(names["B"], "Z")])
    pair = pauli_from_terms([(names["1"], "Z"), (names["3"], "Z")])
    diff = (hook[0] ^ pair[0], hook[1] ^ pair[1])
    n = c.num_qubits
    # the difference is the ISG element Z1 ZA ZB times Z3 ZA, the latter fixed one step later
    z3za = _ops("Z3 ZA", names)
    assert group_rank(after_2z + [(diff[0] ^ z3za[0], diff[1] ^ z3za[1])], n) == group_rank(after_2z, n)
