from collections import Counter
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from pairgraft.circuit_gen import memory_circuit
from pairgraft.dem_builder import (
    HIGH,
    LOW,
    analyze,
    dem_text,
    edge_weight,
    enumerate_faults,
    fault_variants,
    split_and_build,
    xor_prob,
)
from pairgraft.geometry import build_layout
from pairgraft.stabilizer_engine import PauliFault, group_rank, propagate_fault


@pytest.fixture(scope="module")
def rg3():
    c = memory_circuit(build_layout("rotated-good", 3), "standard4", 2, "Z")
    model = analyze(c)
    faults = enumerate_faults(c, 1e-3, True, model.detectors, model.observables)
    return model, faults


@pytest.fixture(scope="module")
def hp_torus():
    c = memory_circuit(build_layout("torus", 4), "hook-preventing7", 2, "both", 2)
    model = analyze(c)
    faults = enumerate_faults(c, 1e-3, False, model.detectors, model.observables)
    return model, faults


def test_fault_variant_counts():
    # brute-force count of non-identity (Pauli, flip) combinations
    single = [(p, f) for p in "IXYZ" for f in (0, 1) if (p, f) != ("I", 0)]
    double = [(a, b, f) for a, b in product("IXYZ", repeat=2) for f in (0, 1) if (a, b, f) != ("I", "I", 0)]
    assert len(fault_variants(1)) == len(single) == 7
    assert len(fault_variants(2)) == len(double) == 31


def test_fault_probabilities_per_measurement(rg3):
    model, faults = rg3
    expected = {"meas1": 1e-3 / 7, "meas2": 1e-3 / 31, "idle": 1e-3 / 3}
    seen = set()
    for f in faults:
        assert f.probability == pytest.approx(expected[f.source])
        seen.add(f.source)
    assert seen == set(expected)


def test_detectors_are_deterministic_and_independent(rg3):
    model, _ = rg3
    run = model.run
    for d in model.detectors:
        mask = 0
        for k in d.measurements:
            mask ^= run.outcomes[k].mask
        assert mask == 0
    n = len(model.detectors)
    assert group_rank(((d.mask(), 0) for d in model.detectors), model.circuit.num_measurements) == n


def test_detector_basis_is_complete(rg3):
    model, _ = rg3
    c = model.circuit
    relations = sum(1 for k, det in enumerate(model.run.deterministic) if det and k not in c.terminal)
    assert len(model.detectors) == relations


def test_low_detectors_compare_two_repeats(rg3):
    model, _ = rg3
    meas = model.circuit.measurements
    lows = [d for d in model.detectors if d.kind == LOW]
    assert lows
    for d in lows:
        a, b = sorted(d.measurements)
        assert meas[a].targets == meas[b].targets


def test_observables_deterministic(rg3):
    model, _ = rg3
    assert all(o.deterministic for o in model.observables)


def _syndrome_by_propagation(model, fault):
    c = model.circuit
    step, errors, readout = fault.origin
    flips = propagate_fault(c, PauliFault(step, errors, readout if readout >= 0 else None))
    syn = tuple(d.id for d in model.detectors if len(d.measurements & flips) % 2)
    lm = sum(1 << k for k, o in enumerate(model.observables) if len(o.measurements & flips) % 2)
    return syn, lm


def test_fault_signatures_match_propagation(rg3):
    model, faults = rg3
    for f in faults[::5]:
        assert _syndrome_by_propagation(model, f) == (f.syndrome, f.logical_mask)


def test_faults_stay_inside_noise_window(rg3):
    model, faults = rg3
    lo, hi = model.circuit.noisy_steps
    assert all(lo <= f.origin[0] < hi for f in faults)


def test_enumerate_rejects_bad_p(rg3):
    model, _ = rg3
    with pytest.raises(ValueError):
        enumerate_faults(model.circuit, 0.0, False, model.detectors, model.observables)


def _check_decomposition(graph, faults):
    parts: dict[int, list] = {}
    for e in graph.edges:
        for fid in e.sources:
            parts.setdefault(fid, []).append(e)
    for f in faults:
        if not f.syndrome:
            continue
        syn, lm = set(), 0
        for e in parts[f.id]:
            syn ^= {e.u} if e.v is None else {e.u, e.v}
            lm ^= e.logical_mask
        assert syn == set(f.syndrome) and lm == f.logical_mask


def test_split_reproduces_every_fault(rg3):
    model, faults = rg3
    graph = split_and_build(faults, model.detectors, len(model.observables))
    _check_decomposition(graph, faults)
    assert graph.reweight_rules == []


def test_split_reproduces_every_fault_hook_preventing(hp_torus):
    model, faults = hp_torus
    graph = split_and_build(faults, model.detectors, len(model.observables))
    _check_decomposition(graph, faults)
    assert graph.reweight_rules


def test_hook_preventing_detector_compares_repeated_pair(hp_torus):
    model, _ = hp_torus
    c = model.circuit
    meas = c.measurements
    layout = c.layout
    found = 0
    for d in model.detectors:
        if len(d.measurements) != 2:
            continue
        a, b = (meas[k] for k in sorted(d.measurements))
        if a.plaquette is None or layout.plaquette(a.plaquette).pauli_type != "Z":
            continue
        if (a.key, b.key) == ("2", "4") and a.round == b.round and len(a.targets) == 2:
            assert a.targets == b.targets and {t for _, t in a.targets} == {"X"}
            found += 1
    assert found > 0


def test_readout_fault_on_repeat_splits_with_rule(hp_torus):
    model, faults = hp_torus
    meas = model.circuit.measurements
    graph = split_and_build(faults, model.detectors, len(model.observables))
    f2 = [
        f
        for f in faults
        if f.pure_readout and len(f.syndrome) == 3 and meas[f.origin[2]].key == "4"
    ]
    assert f2
    rules = graph.rules_by_trigger()
    for f in f2:
        used = [e for e in graph.edges if f.id in e.sources]
        dangling = [e for e in used if e.dangling]
        assert len(used) == 3 and len(dangling) == 1
        trigger = dangling[0].u
        assert graph.kinds[trigger] == LOW
        assert {e.id for e in used if not e.dangling} <= set(rules[trigger])


def test_hook_edges_are_directional():
    layout = build_layout("rotated-good", 5)
    c = memory_circuit(layout, "standard4", 3, "both")
    model = analyze(c)
    meas = c.measurements
    faults = enumerate_faults(c, 1e-3, False, model.detectors, model.observables)
    b_aux = {q.index: p.pauli_type for p in layout.plaquettes for n, q in p.aux if n == "B"}

    def home(d):
        return layout.plaquette(meas[model.detectors[d].latest].plaquette)

    seen = Counter()
    for f in faults:
        errs = f.origin[1]
        if len(errs) != 1 or len(f.syndrome) != 2:
            continue
        (q, pa), = errs
        ptype = b_aux.get(q)
        if ptype is None or pa != ptype:
            continue
        if any(model.detectors[d].kind != HIGH for d in f.syndrome):
            continue
        a, b = home(f.syndrome[0]), home(f.syndrome[1])
        dr, dc = b.cell[0] - a.cell[0], b.cell[1] - a.cell[1]
        if ptype == "Z":
            assert a.pauli_type == b.pauli_type == "X" and dc == 0 and abs(dr) == 2
        else:
            assert a.pauli_type == b.pauli_type == "Z" and dr == 0 and abs(dc) == 2
        seen[ptype] += 1
    assert seen["Z"] and seen["X"]


def test_dem_text_format(rg3):
    model, faults = rg3
    graph = split_and_build(faults, model.detectors, len(model.observables))
    text = dem_text(model.detectors, model.observables, faults[:3], graph)
    heads = Counter(line.split()[0] for line in text.splitlines())
    assert heads["DET"] == len(model.detectors)
    assert heads["OBS"] == len(model.observables)
    assert heads["FAULT"] == 3
    assert heads["EDGE"] == len(graph.edges)


@given(st.floats(1e-6, 0.49), st.floats(1e-6, 0.49))
def test_xor_prob_properties(p1, p2):
    q = xor_prob(p1, p2)
    assert q == pytest.approx(xor_prob(p2, p1))
    assert 0 <= q <= 0.5
    assert xor_prob(p1, 0.0) == pytest.approx(p1)


@settings(max_examples=50)
@given(st.floats(1e-9, 0.499))
def test_edge_weight_positive_below_half(p):
    assert edge_weight(p) > 0
