"""Measurement circuits for the pairwise-measurement surface code.

A plaquette's circuit is a table of local steps, each a list of one- or
two-qubit Pauli measurements on its data qubits (labels "1".."4") and
auxiliaries ("A", "B", "C").  Tables are written for Z plaquettes; the X
plaquette circuit is the same table with X and Z exchanged.  A schedule
places every local step of every plaquette on a global time step.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .geometry import (
    LABEL_CORNERS,
    Layout,
    Plaquette,
    Topology,
    build_layout,
    isolated_plaquette,
)

Term = tuple[str, str]  # (label or aux name, basis for a Z plaquette)
Op = tuple[Term, ...]


class Schedule(str, enum.Enum):
    Standard4 = "standard4"
    HookPreventing7 = "hook-preventing7"
    SingleRail5 = "single-rail5"
    InterleavedSync = "interleaved-sync"

    @classmethod
    def parse(cls, text: "str | Schedule") -> "Schedule":
        if isinstance(text, Schedule):
            return text
        key = text.strip().lower().replace("_", "-")
        aliases = {
            "standard": cls.Standard4,
            "double-rail": cls.Standard4,
            "hook-preventing": cls.HookPreventing7,
            "single-rail": cls.SingleRail5,
            "interleaved": cls.InterleavedSync,
        }
        for s in cls:
            if key in (s.value, s.name.lower()):
                return s
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown schedule {text!r}")


def _op(*terms: str) -> Op:
    return tuple((t[1:], t[0]) for t in terms)


_STEP1 = [_op("Z1", "ZA"), _op("ZB"), _op("XC")]
_STEP2 = [_op("XA", "XB"), _op("ZC", "Z2")]
_STEP3 = [_op("XB", "XC"), _op("Z3", "ZA")]
_STEP4 = [_op("ZC", "Z4"), _op("ZB"), _op("XA")]

STANDARD_TABLE: dict[str, list[Op]] = {
    "0": [_op("XA")],
    "1": _STEP1,
    "2": _STEP2,
    "3": _STEP3,
    "4": _STEP4,
    "5": [_op("XC")],
}

HOOK_TABLE: dict[str, list[Op]] = {
    "0": [_op("XA"), _op("ZB"), _op("XC")],
    "1": _STEP1,
    "2": _STEP2,
    "3": [_op("XB", "XC")],
    "4": [_op("XA", "XB")],
    "5": [_op("XB", "XC"), _op("Z3", "ZA")],
    "6": _STEP4,
    "7": [_op("XA"), _op("ZB"), _op("XC")],
}

SINGLE_RAIL_Z_TABLE: dict[str, list[Op]] = {
    "0": [_op("XA"), _op("ZB")],
    "1p": [_op("Z1", "ZA"), _op("XC")],
    "1pp": [_op("ZB")],
    "2": _STEP2,
    "3": _STEP3,
    "4": _STEP4,
    "5": [_op("XC")],
}

# Local steps whose plaquette-type outcomes do not enter the round readout.
_NOT_READOUT = {
    "Standard4": {"0", "5"},
    "InterleavedSync": {"0", "5"},
    "SingleRail5": {"5"},
    "HookPreventing7": {"0", "7"},
}

INTERLEAVED_CORNERS: dict[str, dict[int, str]] = {
    "Z": {1: "TL", 2: "TR", 3: "BL", 4: "BR"},
    "X": {1: "TL", 2: "BL", 3: "TR", 4: "BR"},
}

HOOK_LAGS = {1: 2, 2: 3, 3: 4, 4: 5}
PERIODS = {"Standard4": 4, "InterleavedSync": 4, "SingleRail5": 5, "HookPreventing7": 7}


def _swap(basis: str) -> str:
    return {"X": "Z", "Z": "X"}.get(basis, basis)


def table_for(schedule: Schedule, ptype: str) -> dict[str, list[Op]]:
    if schedule is Schedule.HookPreventing7:
        table = HOOK_TABLE
    elif schedule is Schedule.SingleRail5 and ptype == "Z":
        table = SINGLE_RAIL_Z_TABLE
    else:
        table = STANDARD_TABLE
    if ptype == "Z":
        return table
    return {k: [tuple((n, _swap(b)) for n, b in op) for op in ops] for k, ops in table.items()}


def timeline(schedule: Schedule, rounds: int, ptype: str, option: int = 1) -> list[tuple[int, str, int]]:
    """Global placement ``(step, local key, round)`` of one plaquette type."""
    r = rounds
    ev: list[tuple[int, str, int]] = []
    if schedule in (Schedule.Standard4, Schedule.InterleavedSync):
        off = 2 if (schedule is Schedule.Standard4 and ptype == "X") else 0
        ev.append((off, "0", 0))
        for k in range(r):
            ev.extend((off + 4 * k + s, str(s), k) for s in range(1, 5))
        ev.append((off + 4 * r + 1, "5", r - 1))
    elif schedule is Schedule.HookPreventing7:
        off = HOOK_LAGS[option] if ptype == "X" else 0
        ev.append((off, "0", 0))
        for k in range(r):
            ev.extend((off + 7 * k + s, str(s), k) for s in range(1, 8))
    elif ptype == "Z":
        ev.append((0, "0", 0))
        for k in range(r):
            ev.append((5 * k + 1, "1p", k))
            ev.extend((5 * k + s, str(s), k) for s in (2, 3, 4))
            ev.append((5 * k + 5, "1pp", k + 1) if k < r - 1 else (5 * k + 5, "5", k))
    else:
        ev.append((2, "0", 0))
        for k in range(r):
            ev.extend([(5 * k + 3, "1", k), (5 * k + 5, "2", k), (5 * k + 6, "3", k), (5 * k + 7, "4", k)])
        ev.append((5 * r + 3, "5", r - 1))
    return ev


def label_qubits(plaquette: Plaquette, schedule: Schedule) -> dict[str, int]:
    """Map table names ("1".."4", "A".."C") to qubit indices for this plaquette."""
    names: dict[str, int] = {n: q.index for n, q in plaquette.aux}
    t = plaquette.pauli_type
    if schedule is Schedule.InterleavedSync:
        by_corner = {LABEL_CORNERS[t][lab]: q for lab, q in zip(plaquette.labels, plaquette.data_qubits)}
        for lab, corner in INTERLEAVED_CORNERS[t].items():
            if corner in by_corner:
                names[str(lab)] = by_corner[corner].index
    else:
        for lab, q in zip(plaquette.labels, plaquette.data_qubits):
            names[str(lab)] = q.index
    return names


def reduce_op(op: Op, names: dict[str, int], kept_aux: set[str]) -> tuple[tuple[int, str], ...] | None:
    """Apply the n-gon rule to one table entry.

    A missing data qubit turns a pair measurement into a single-qubit one on
    the auxiliary; measurements on auxiliaries the plaquette does not keep
    are dropped, except that a plaquette with no auxiliaries measures its
    data qubit directly.
    """
    data = [(n, b) for n, b in op if n.isdigit()]
    aux = [(n, b) for n, b in op if not n.isdigit()]
    live_data = [(names[n], b) for n, b in data if n in names]
    if any(n not in kept_aux for n, _ in aux):
        if not kept_aux and live_data:
            return tuple(live_data)
        return None
    terms = tuple(live_data) + tuple((names[n], b) for n, b in aux)
    return terms or None


@dataclass(frozen=True)
class Instruction:
    kind: str  # "MPP" or "IDLE"
    targets: tuple[tuple[int, str], ...]
    step: int
    meas_index: int | None = None
    plaquette: int | None = None
    key: str = ""
    round: int = -1
    readout: bool = False

    def text(self) -> str:
        if self.kind == "IDLE":
            return f"IDLE {self.targets[0][0]}"
        return "MPP " + " ".join(f"{b}{q}" for q, b in self.targets)


@dataclass
class Circuit:
    layout: Layout | None
    schedule: Schedule
    rounds: int
    steps: list[list[Instruction]]
    num_qubits: int
    option: int = 1
    round_markers: dict[int, tuple[tuple[int, int], dict[str, int]]] = field(default_factory=dict)
    noisy_steps: tuple[int, int] | None = None  # union of the windows; bounds idle noise
    noise_windows: dict[str, tuple[int, int]] = field(default_factory=dict)
    terminal: list[int] = field(default_factory=list)  # virtual logical readouts
    init: list[int] = field(default_factory=list)
    memory_basis: str | None = None
    data_qubits: frozenset[int] = frozenset()

    @property
    def measurements(self) -> list[Instruction]:
        out = [ins for step in self.steps for ins in step if ins.kind == "MPP"]
        out.sort(key=lambda i: i.meas_index)
        return out

    @property
    def num_measurements(self) -> int:
        return sum(1 for step in self.steps for ins in step if ins.kind == "MPP")

    def schedule_name(self) -> str:
        if self.schedule is Schedule.HookPreventing7:
            return f"{self.schedule.value}:{self.option}"
        return self.schedule.value


def _emit(
    layout: Layout,
    schedule: Schedule,
    rounds: int,
    option: int,
) -> tuple[list[list[tuple]], dict[int, tuple[tuple[int, int], dict[str, int]]], int]:
    """Per-step measurement entries (targets, plaquette, key, round, readout)."""
    per_step: dict[int, list[tuple]] = {}
    skip = _NOT_READOUT[schedule.name]
    for plaq in layout.plaquettes:
        t = plaq.pauli_type
        names = label_qubits(plaq, schedule)
        kept = {n for n, _ in plaq.aux}
        table = table_for(schedule, t)
        for g, key, rnd in timeline(schedule, rounds, t, option):
            for op in table[key]:
                terms = reduce_op(op, names, kept)
                if terms is None:
                    continue
                ro = key not in skip and all(b == t for _, b in terms)
                per_step.setdefault(g, []).append((terms, plaq.id, key, rnd, ro))
    first = min(per_step)
    last = max(per_step)
    steps = [per_step.get(g, []) for g in range(first, last + 1)]
    spans: dict[int, list[int]] = {}
    points: dict[int, dict[str, int]] = {}
    for t in sorted({p.pauli_type for p in layout.plaquettes}):
        for g, key, rnd in timeline(schedule, rounds, t, option):
            if key in skip:
                continue
            g -= first
            lo_hi = spans.setdefault(rnd, [g, g])
            lo_hi[0], lo_hi[1] = min(lo_hi[0], g), max(lo_hi[1], g)
            pts = points.setdefault(rnd, {})
            pts[t] = max(pts.get(t, g), g)
    markers = {k: ((v[0], v[1]), points[k]) for k, v in sorted(spans.items())}
    return steps, markers, first


def _finalize(
    layout: Layout,
    entries: list[list[tuple]],
    schedule: Schedule,
    rounds: int,
    option: int,
    markers,
) -> Circuit:
    steps: list[list[Instruction]] = []
    m = 0
    all_qubits = [q.index for q in layout.qubits]
    for g, ents in enumerate(entries):
        step: list[Instruction] = []
        used: set[int] = set()
        for terms, pid, key, rnd, ro in ents:
            for q, _ in terms:
                if q in used:
                    raise ValueError(f"qubit {q} addressed twice in step {g}")
                used.add(q)
            step.append(Instruction("MPP", terms, g, m, pid, key, rnd, ro))
            m += 1
        step.extend(Instruction("IDLE", ((q, "I"),), g) for q in all_qubits if q not in used)
        steps.append(step)
    return Circuit(
        layout,
        schedule,
        rounds,
        steps,
        layout.num_qubits,
        option,
        markers,
        data_qubits=frozenset(q.index for q in layout.data_qubits),
    )


def generate(layout: Layout, schedule: "Schedule | str", rounds: int, option: int = 1) -> Circuit:
    """Emit the full circuit for ``rounds`` rounds including ramp steps."""
    schedule = Schedule.parse(schedule)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if schedule is Schedule.HookPreventing7 and option not in HOOK_LAGS:
        raise ValueError("pipeline option must be in 1..4")
    entries, markers, _ = _emit(layout, schedule, rounds, option)
    return _finalize(layout, entries, schedule, rounds, option, markers)


def generate_hook_preventing(layout: Layout, pipeline_option: int, rounds: int) -> Circuit:
    if pipeline_option not in HOOK_LAGS:
        raise ValueError("pipeline option must be in 1..4")
    return generate(layout, Schedule.HookPreventing7, rounds, pipeline_option)


def readout_plaquette(circuit: Circuit, plaquette: Plaquette | int, round: int) -> list[int]:
    """Measurements whose joint parity is the plaquette's value in ``round``."""
    pid = plaquette if isinstance(plaquette, int) else plaquette.id
    if circuit.layout is None or all(p.id != pid for p in circuit.layout.plaquettes):
        raise KeyError(f"plaquette {pid} not in layout")
    if not 0 <= round < circuit.rounds:
        raise ValueError(f"round {round} outside circuit")
    return [
        ins.meas_index
        for step in circuit.steps
        for ins in step
        if ins.kind == "MPP" and ins.plaquette == pid and ins.round == round and ins.readout
    ]


# -- memory experiment -------------------------------------------------------


def _clean_cut(schedule: Schedule, ptype: str, option: int, rounds: int, earliest: int) -> int:
    """First step >= ``earliest`` that no chain of repeated aux measurements spans."""
    table = table_for(schedule, ptype)
    events = [(g, op) for g, key, _ in timeline(schedule, rounds, ptype, option) for op in table[key]]
    spans = []
    for i, (g1, op) in enumerate(events):
        names = {n for n, _ in op}
        for g2, other in events[i + 1:]:
            if g2 == g1:
                continue
            if other == op:
                spans.append((g1, g2))
                break
            if names & {n for n, _ in other}:
                break
    s = earliest
    while any(g1 < s <= g2 for g1, g2 in spans):
        s += 1
    return s


def memory_rounds(
    schedule: "Schedule | str", rounds: int, types: Iterable[str], option: int = 1
) -> tuple[int, dict[str, tuple[int, int]]]:
    """Total rounds and per-type noisy windows for ``rounds`` noisy periods.

    One noiseless round of every type precedes the windows and one follows
    them, so every fault is bracketed by clean readouts.  Each window opens
    where no repeated auxiliary measurement straddles its edges.
    Returns (total rounds, {type: (start, end)}) in schedule steps.
    """
    schedule = Schedule.parse(schedule)
    types = sorted(set(types))
    period = PERIODS[schedule.name]
    total = rounds + 1
    while True:
        lines = {t: timeline(schedule, total, t, option) for t in types}
        windows = {}
        ok = True
        for t in types:
            first = 1 + max(g for g, key, k in lines[t] if k == 0 and key not in _NOT_READOUT[schedule.name])
            start = _clean_cut(schedule, t, option, total, first)
            end = start + period * rounds
            windows[t] = (start, end)
            clean = [
                k
                for k in range(total)
                if all(g >= end for g, key, kk in lines[t] if kk == k and key not in _NOT_READOUT[schedule.name])
            ]
            if not clean:
                ok = False
        if ok:
            return total, windows
        total += 1


def memory_circuit(
    layout: Layout,
    schedule: "Schedule | str",
    rounds: int,
    basis: str = "Z",
    option: int = 1,
) -> Circuit:
    """Memory experiment: ideal init, noisy window of ``rounds`` periods, ideal logical readout.

    ``basis`` is "Z", "X" or "both".  The data qubits are prepared by ideal
    single-qubit measurements in ``basis`` (no preparation for "both"); the
    logical strings are read out at the end by virtual ideal measurements.
    """
    schedule = Schedule.parse(schedule)
    types = {p.pauli_type for p in layout.plaquettes}
    total, windows = memory_rounds(schedule, rounds, types, option)
    shift = 0 if basis == "both" else 1
    entries, markers, first = _emit(layout, schedule, total, option)
    if shift:
        init = [(((q.index, basis),), None, "init", -1, False) for q in layout.data_qubits]
        entries = [init] + entries
        markers = {k: ((lo + 1, hi + 1), {t: g + 1 for t, g in pts.items()}) for k, ((lo, hi), pts) in markers.items()}
    final = [
        (tuple((q.index, s.pauli_type) for q in s.path), None, f"L:{s.label}", -2, False)
        for s in layout.logical_observables
        if basis == "both" or s.pauli_type == basis
    ]
    circuit = _finalize(layout, entries + [[]], schedule, total, option, markers)
    # Terminal logical readouts are virtual: one multi-qubit measurement per string.
    m = circuit.num_measurements
    g = len(circuit.steps) - 1
    circuit.steps[g] = [
        Instruction("MPP", terms, g, m + i, None, key, rnd, False)
        for i, (terms, _, key, rnd, _) in enumerate(final)
    ]
    circuit.terminal = [m + i for i in range(len(final))]
    circuit.init = list(range(len(entries[0]))) if shift else []
    offset = shift - first
    circuit.noise_windows = {t: (lo + offset, hi + offset) for t, (lo, hi) in windows.items()}
    circuit.noisy_steps = (
        min(lo for lo, _ in circuit.noise_windows.values()),
        max(hi for _, hi in circuit.noise_windows.values()),
    )
    circuit.memory_basis = basis
    circuit.rounds = total
    return circuit


def prepared_circuit(
    layout: Layout,
    schedule: "Schedule | str",
    rounds: int,
    basis: str,
    option: int = 1,
) -> Circuit:
    """Ideal data preparation in ``basis`` followed by exactly ``rounds`` rounds, no readout."""
    schedule = Schedule.parse(schedule)
    if basis not in ("X", "Z"):
        raise ValueError("basis must be X or Z")
    entries, markers, _ = _emit(layout, schedule, rounds, option)
    init = [(((q.index, basis),), None, "init", -1, False) for q in layout.data_qubits]
    markers = {k: ((lo + 1, hi + 1), {t: g + 1 for t, g in pts.items()}) for k, ((lo, hi), pts) in markers.items()}
    circuit = _finalize(layout, [init] + entries, schedule, rounds, option, markers)
    circuit.init = list(range(len(init)))
    circuit.memory_basis = basis
    return circuit


# -- text format --------------------------------------------------------------


def to_text(circuit: Circuit, dead_lines: Sequence[str] = ()) -> str:
    lines = []
    layout = circuit.layout
    if layout is not None:
        lines.append(f"TOPOLOGY {layout.topology.value}")
        lines.append(f"D {layout.d}")
    lines.append(f"SCHEDULE {circuit.schedule_name()}")
    lines.append(f"ROUNDS {circuit.rounds}")
    lines.extend(f"DEAD {d}" for d in dead_lines)
    for k, step in enumerate(circuit.steps):
        lines.append(f"STEP {k}")
        meas = [i for i in step if i.kind == "MPP"]
        idle = sorted((i for i in step if i.kind == "IDLE"), key=lambda i: i.targets[0][0])
        lines.extend(i.text() for i in meas + idle)
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> tuple[Circuit, dict[str, str], list[str]]:
    """Parse the circuit text format.

    Returns the circuit (whose layout is rebuilt when the header names a
    topology without dead components), the header fields and the DEAD lines.
    """
    header: dict[str, str] = {}
    dead: list[str] = []
    steps: list[list[Instruction]] = []
    m = 0
    max_q = -1
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        word, _, rest = line.partition(" ")
        if word == "STEP":
            k = int(rest)
            if k != len(steps):
                raise ValueError(f"line {lineno}: expected STEP {len(steps)}")
            steps.append([])
        elif word == "MPP":
            terms = []
            for tok in rest.split():
                if tok[0] not in "XYZ":
                    raise ValueError(f"line {lineno}: bad Pauli {tok!r}")
                terms.append((int(tok[1:]), tok[0]))
                max_q = max(max_q, int(tok[1:]))
            steps[-1].append(Instruction("MPP", tuple(terms), len(steps) - 1, m))
            m += 1
        elif word == "IDLE":
            q = int(rest)
            max_q = max(max_q, q)
            steps[-1].append(Instruction("IDLE", ((q, "I"),), len(steps) - 1))
        elif word == "DEAD":
            dead.append(rest)
        elif word in ("TOPOLOGY", "D", "SCHEDULE", "ROUNDS"):
            header[word] = rest
        else:
            raise ValueError(f"line {lineno}: unknown directive {word!r}")
    sched_text, _, opt = header.get("SCHEDULE", "standard4").partition(":")
    layout = None
    if "TOPOLOGY" in header and not dead:
        layout = build_layout(Topology.parse(header["TOPOLOGY"]), int(header["D"]))
    n = layout.num_qubits if layout is not None else max_q + 1
    circuit = Circuit(
        layout,
        Schedule.parse(sched_text),
        int(header.get("ROUNDS", "1")),
        steps,
        n,
        int(opt) if opt else 1,
        data_qubits=frozenset(q.index for q in layout.data_qubits) if layout else frozenset(),
    )
    return circuit, header, dead


def check_no_conflicts(circuit: Circuit) -> None:
    for k, step in enumerate(circuit.steps):
        seen: set[int] = set()
        for ins in step:
            for q, _ in ins.targets:
                if q in seen:
                    raise AssertionError(f"qubit {q} addressed twice in step {k}")
                seen.add(q)


def isolated_circuit(ptype: str = "Z", schedule: "Schedule | str" = Schedule.Standard4, rounds: int = 1, option: int = 1) -> Circuit:
    """Circuit of a single four-body plaquette, used for ISG checks."""
    return generate(isolated_plaquette(ptype), schedule, rounds, option)


# -- single-rail loop conflicts ------------------------------------------------

# Pairs of co-scheduled measurements whose interference loops would share a
# single semiconductor rail: (Z local step, Z-table operator, X local step).
# Loop geometry itself is not modelled; this table lists the colliding pairs.
RAIL_CONFLICTS: frozenset[tuple[str, Op, str]] = frozenset(
    {("1", _op("ZB"), "3")}
    | {("4", op, "2") for op in _STEP4 if op != _op("ZB")}
)


def rail_conflicts(circuit: Circuit) -> list[tuple[int, str, str]]:
    """(step, Z local key, X local key) for every single-rail loop conflict."""
    layout = circuit.layout
    if layout is None:
        return []
    out = []
    for step in circuit.steps:
        z_ops: set[tuple[str, Op]] = set()
        x_keys: set[str] = set()
        for ins in step:
            if ins.kind != "MPP" or ins.plaquette is None:
                continue
            plaq = layout.plaquette(ins.plaquette)
            if plaq.pauli_type == "X":
                x_keys.add(ins.key)
                continue
            names = {q: n for n, q in label_qubits(plaq, circuit.schedule).items()}
            z_ops.add((ins.key, tuple((names[q], b) for q, b in ins.targets)))
        hits = {(zk, xk) for zk, op, xk in RAIL_CONFLICTS if xk in x_keys and (zk, op) in z_ops}
        out.extend((step[0].step if step else -1, zk, xk) for zk, xk in sorted(hits))
    return out
