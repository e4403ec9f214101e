import pytest
from hypothesis import given, settings, strategies as st

from pairgraft.circuit_gen import (
    HOOK_LAGS,
    Schedule,
    check_no_conflicts,
    generate,
    generate_hook_preventing,
    isolated_circuit,
    label_qubits,
    memory_circuit,
    parse_text,
    prepared_circuit,
    rail_conflicts,
    readout_plaquette,
    to_text,
)
from pairgraft.geometry import build_layout, isolated_plaquette
from pairgraft.stabilizer_engine import run_symbolic

# Co-scheduled (Z step, X step) pairs in the steady state, copied by hand from
# the pipelining tables.
PIPELINE_PAIRS = {
    "standard4": {("1", "3"), ("2", "4"), ("3", "1"), ("4", "2")},
    "single-rail5": {("1p", "3"), ("2", "4"), ("3", "1"), ("1pp", "2")},
    ("hook-preventing7", 1): {("1", "6"), ("2", "7"), ("3", "1"), ("4", "2"), ("5", "3"), ("6", "4"), ("7", "5")},
    ("hook-preventing7", 2): {("1", "5"), ("2", "6"), ("3", "7"), ("4", "1"), ("5", "2"), ("6", "3"), ("7", "4")},
    ("hook-preventing7", 3): {("1", "4"), ("2", "5"), ("3", "6"), ("4", "7"), ("5", "1"), ("6", "2"), ("7", "3")},
    ("hook-preventing7", 4): {("1", "3"), ("2", "4"), ("3", "5"), ("4", "6"), ("5", "7"), ("6", "1"), ("7", "2")},
}
RAMP = {"0", "5"}
ALL_SCHEDULES = [(s, 1) for s in ("standard4", "single-rail5", "interleaved-sync")] + [
    ("hook-preventing7", o) for o in (1, 2, 3, 4)
]


def _step_keys(circuit):
    layout = circuit.layout
    for step in circuit.steps:
        keys = {"Z": set(), "X": set()}
        for ins in step:
            if ins.kind == "MPP" and ins.plaquette is not None:
                keys[layout.plaquette(ins.plaquette).pauli_type].add(ins.key)
        yield keys


def _pairs(circuit, ramp):
    out = set()
    for keys in _step_keys(circuit):
        for z in keys["Z"] - ramp:
            for x in keys["X"] - ramp:
                out.add((z, x))
    return out


@pytest.mark.parametrize("key", ["standard4", "single-rail5"])
def test_pipeline_pairs(key):
    c = generate(build_layout("torus", 4), key, 4)
    assert _pairs(c, RAMP) == PIPELINE_PAIRS[key]


@pytest.mark.parametrize("option", [1, 2, 3, 4])
def test_hook_preventing_pipeline_options(option):
    c = generate_hook_preventing(build_layout("torus", 4), option, 4)
    assert _pairs(c, {"0"}) == PIPELINE_PAIRS[("hook-preventing7", option)]


@pytest.mark.parametrize("r", [1, 2, 3, 5])
def test_step_counts(r):
    layout = build_layout("rotated-good", 3)
    assert len(generate(layout, "standard4", r).steps) == 4 * r + 4
    assert len(generate(layout, "interleaved-sync", r).steps) == 4 * r + 2


def test_interleaved_runs_both_types_in_lockstep():
    c = generate(build_layout("torus", 4), "interleaved-sync", 2)
    for keys in _step_keys(c):
        assert keys["Z"] == keys["X"]


@pytest.mark.parametrize("schedule,option", ALL_SCHEDULES)
@pytest.mark.parametrize("topology,d", [("rotated-good", 5), ("rotated-bad", 3), ("unrotated", 3), ("torus", 4)])
def test_each_qubit_once_per_step(topology, d, schedule, option):
    layout = build_layout(topology, d)
    c = generate(layout, schedule, 3, option)
    check_no_conflicts(c)
    for step in c.steps:
        touched = sorted(q for ins in step for q, _ in ins.targets)
        assert touched == list(range(layout.num_qubits))


def test_standard4_bulk_has_no_idle_qubits():
    r = 4
    c = generate(build_layout("torus", 6), "standard4", r)
    for step in c.steps[3 : 4 * r + 1]:
        assert all(ins.kind == "MPP" for ins in step)


@pytest.mark.parametrize("schedule", ["standard4", "hook-preventing7", "single-rail5"])
def test_pair_orientation(schedule):
    # XX couples horizontal neighbours, ZZ vertical ones
    layout = build_layout("rotated-good", 5)
    pos = {q.index: q.pos for q in layout.qubits}
    for ins in generate(layout, schedule, 2).measurements:
        if len(ins.targets) != 2:
            continue
        (a, ba), (b, bb) = ins.targets
        assert ba == bb
        (ra, ca), (rb, cb) = pos[a], pos[b]
        assert abs(ra - rb) + abs(ca - cb) == 1
        assert (ra == rb) == (ba == "X")


def test_hook_preventing_repeats_the_hook_pairs():
    c = isolated_circuit("Z", "hook-preventing7", 1)
    names = {q: n for n, q in label_qubits(c.layout.plaquettes[0], c.schedule).items()}
    ops = [tuple(sorted(b + names[q] for q, b in ins.targets)) for ins in c.measurements]
    assert ops.count(("XA", "XB")) == 2
    assert ops.count(("XB", "XC")) == 2


def test_z_readout_is_the_six_z_outcomes():
    c = isolated_circuit("Z", "standard4", 2)
    names = {q: n for n, q in label_qubits(c.layout.plaquettes[0], c.schedule).items()}
    meas = c.measurements
    for r in range(2):
        ops = sorted(tuple(sorted(b + names[q] for q, b in meas[k].targets)) for k in readout_plaquette(c, 0, r))
        assert ops == sorted([("ZB",), ("Z1", "ZA"), ("Z2", "ZC"), ("Z3", "ZA"), ("Z4", "ZC"), ("ZB",)])


@pytest.mark.parametrize("schedule,option", ALL_SCHEDULES)
@pytest.mark.parametrize("ptype", ["Z", "X"])
def test_isolated_readout_deterministic(ptype, schedule, option):
    layout = isolated_plaquette(ptype)
    c = prepared_circuit(layout, schedule, 3, ptype, option)
    run = run_symbolic(c)
    for r in range(3):
        mask = 0
        for k in readout_plaquette(c, 0, r):
            mask ^= run.outcomes[k].mask
        init = 0
        for k in c.init:
            init ^= run.outcomes[k].mask
        assert mask == init


def test_readout_plaquette_rejects_bad_arguments():
    c = generate(build_layout("rotated-good", 3), "standard4", 2)
    with pytest.raises(KeyError):
        readout_plaquette(c, 999, 0)
    with pytest.raises(ValueError):
        readout_plaquette(c, 0, 2)


def test_generate_rejects_bad_arguments():
    layout = build_layout("rotated-good", 3)
    with pytest.raises(ValueError):
        generate(layout, "standard4", 0)
    with pytest.raises(ValueError):
        generate(layout, "hook-preventing7", 2, 5)
    with pytest.raises(ValueError):
        generate(layout, "nonsense", 2)


def test_schedule_aliases():
    assert Schedule.parse("double-rail") is Schedule.Standard4
    assert Schedule.parse("hook_preventing") is Schedule.HookPreventing7
    assert Schedule.parse("SingleRail5") is Schedule.SingleRail5


def test_single_rail_resolves_loop_conflicts():
    layout = build_layout("torus", 4)
    assert rail_conflicts(generate(layout, "standard4", 3))
    assert rail_conflicts(generate(layout, "single-rail5", 3)) == []


@pytest.mark.parametrize("basis,expected", [("Z", 2), ("X", 2), ("both", 4)])
def test_memory_terminal_readouts(basis, expected):
    c = memory_circuit(build_layout("torus", 4), "standard4", 2, basis)
    assert len(c.terminal) == expected
    assert len(c.init) == (0 if basis == "both" else 16)


@pytest.mark.parametrize("schedule,option,period", [("standard4", 1, 4), ("hook-preventing7", 2, 7), ("single-rail5", 1, 5)])
def test_memory_noise_windows(schedule, option, period):
    c = memory_circuit(build_layout("rotated-good", 3), schedule, 3, "Z", option)
    for lo, hi in c.noise_windows.values():
        assert hi - lo == 3 * period
        assert 0 < lo and hi < len(c.steps) - 1


@settings(max_examples=15, deadline=None)
@given(
    st.sampled_from([("rotated-good", 3), ("rotated-bad", 3), ("torus", 4), ("unrotated", 3)]),
    st.sampled_from(ALL_SCHEDULES),
    st.integers(1, 3),
)
def test_text_round_trip(geom, sched, rounds):
    schedule, option = sched
    c = generate(build_layout(*geom), schedule, rounds, option)
    text = to_text(c)
    back, header, dead = parse_text(text)
    assert to_text(back) == text
    assert dead == []
    assert back.num_measurements == c.num_measurements


def test_option_offsets_follow_hook_lags():
    assert HOOK_LAGS == {1: 2, 2: 3, 3: 4, 4: 5}
