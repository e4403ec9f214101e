"""Detectors, logical observables, circuit faults and split decoding graphs."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Iterator, Sequence

from .circuit_gen import PERIODS, Circuit, Instruction
from .stabilizer_engine import (
    SymbolicRun,
    anticommutes,
    iter_bits,
    pauli_from_terms,
    popcount,
    run_symbolic,
)

HIGH = "HighWeight"
LOW = "LowWeight"


@dataclass(frozen=True)
class Detector:
    id: int
    measurements: frozenset[int]
    kind: str
    plaquettes: frozenset[int] = frozenset()
    round: int = -1
    parity: int = 0
    latest: int = -1

    def mask(self) -> int:
        m = 0
        for k in self.measurements:
            m |= 1 << k
        return m


@dataclass(frozen=True)
class LogicalObservable:
    label: str
    measurements: frozenset[int]
    init_parity: int = 0
    deterministic: bool = True


@dataclass(frozen=True, slots=True)
class Fault:
    id: int
    origin: tuple[int, tuple[tuple[int, str], ...], int]  # (step, Pauli errors, readout meas or -1)
    probability: float
    syndrome: tuple[int, ...]
    logical_mask: int
    source: str = ""  # "meas1", "meas2" or "idle"

    @property
    def pure_readout(self) -> bool:
        return self.origin[2] >= 0 and not self.origin[1]


# -- detectors -----------------------------------------------------------------


def _mask_of(members: Iterable[int]) -> int:
    mask = 0
    for m in members:
        mask |= 1 << m
    return mask


def _bits(mask: int) -> frozenset[int]:
    return frozenset(iter_bits(mask))


def detector_masks(run: SymbolicRun, skip: set[int]) -> list[tuple[int, int, int]]:
    """(member mask, latest measurement, earliest member) per detector, in time order.

    A deterministic outcome is paired with the measurements that produced
    the stabilizer fixing it, as recorded by the tracker.
    """
    out = []
    for m, det in enumerate(run.deterministic):
        if det and m not in skip:
            mask = (1 << m) ^ run.provenance[m]
            low = mask & -mask
            out.append((mask, m, low.bit_length() - 1))
    return out


def _slim(dets: list[tuple[int, int, int]]) -> list[int]:
    """Greedy weight reduction against earlier detectors in the same window."""
    masks: list[int] = []
    for mask, latest, start in dets:
        improved = True
        while improved:
            improved = False
            w = popcount(mask)
            for prev, (pm, pl, ps) in zip(masks, dets):
                if ps < start or not (mask & prev):
                    continue
                cand = mask ^ prev
                if popcount(cand) < w:
                    mask, w, improved = cand, popcount(cand), True
        masks.append(mask)
    return masks


def _candidates(circuit: Circuit, run: SymbolicRun, skip: set[int]) -> Iterator[int]:
    """Time-local detector candidates: repeated operators and plaquette rounds."""
    meas = circuit.measurements
    last: dict[tuple[int, int], int] = {}
    rounds: dict[tuple[int, int], int] = {}
    for m, ins in enumerate(meas):
        if m in skip:
            continue
        op = run.operators[m]
        if op in last:
            yield (1 << last[op]) | (1 << m)
        last[op] = m
        if ins.readout and ins.plaquette is not None:
            key = (ins.plaquette, ins.round)
            rounds[key] = rounds.get(key, 0) | (1 << m)
    inits: dict[int, int] = {}
    for m, ins in enumerate(meas):
        if ins.key == "init":
            inits[ins.targets[0][0]] = m
    by_plaq: dict[int, list[tuple[int, int]]] = {}
    for (pid, rnd), mask in rounds.items():
        by_plaq.setdefault(pid, []).append((rnd, mask))
    for pid in sorted(by_plaq):
        seq = sorted(by_plaq[pid])
        plaq = circuit.layout.plaquette(pid)
        first = 0
        for q in plaq.data_qubits:
            if q.index in inits:
                first |= 1 << inits[q.index]
        yield seq[0][1] | first
        yield seq[0][1]
        for (_, a), (_, b) in zip(seq, seq[1:]):
            yield a | b


def _latest_repeats(masks: list[int]) -> list[int]:
    """Move wider detectors onto the last outcome of each chain of repeats.

    A readout fault on an earlier repetition then lights only pair detectors.
    """
    pairs = sorted((mk & -mk, mk) for mk in masks if popcount(mk) == 2)
    out = []
    for mk in masks:
        if popcount(mk) > 2:
            for low, pair in pairs:
                if mk & low:
                    mk ^= pair
        out.append(mk)
    return out


def _unique_pivots(masks: list[int]) -> list[int]:
    """Give each pair detector sole ownership of its latest measurement.

    A wide detector ending on the same outcome as a pair is XORed with the
    pair, so a readout fault on that outcome lights the pair and one
    time-neighbour instead of both.
    """
    pair_of = {mk.bit_length(): mk for mk in masks if popcount(mk) == 2}
    out = []
    for mk in masks:
        while popcount(mk) > 2 and mk.bit_length() in pair_of:
            mk ^= pair_of[mk.bit_length()]
        out.append(mk)
    return out


def _earliest(mask: int) -> int:
    return (mask & -mask).bit_length() - 1


def _shorten(mask: int, done: list[int], index: dict[int, list[int]], period_of: Sequence[int]) -> int:
    """XOR in finished detectors while that delays the first round touched, then lowers weight."""

    def score(mk: int) -> tuple[int, int]:
        return -period_of[_earliest(mk)], popcount(mk)

    while True:
        best, best_score = mask, score(mask)
        seen: set[int] = set()
        for m in iter_bits(mask):
            for pos in index.get(m, ()):
                if pos in seen:
                    continue
                seen.add(pos)
                cand = mask ^ done[pos]
                if cand and score(cand) < best_score:
                    best, best_score = cand, score(cand)
        if best == mask:
            return mask
        mask = best


def _localize(masks: list[int], period_of: Sequence[int], extra: Sequence[int] = ()) -> list[int]:
    """Time-localize a detector basis, then reduce the ``extra`` masks against it.

    ``period_of[m]`` is the schedule period containing measurement m.
    Detectors are processed by latest member; each is combined with earlier
    ones so it reaches back as few periods as possible.  Returns the new
    basis followed by the reduced extras.
    """
    order = sorted(range(len(masks)), key=lambda i: (masks[i].bit_length(), masks[i]))
    done: list[int] = []
    index: dict[int, list[int]] = {}
    out = [0] * len(masks)
    for i in order:
        mk = _shorten(masks[i], done, index, period_of)
        out[i] = mk
        for m in iter_bits(mk):
            index.setdefault(m, []).append(len(done))
        done.append(mk)
    return out + [_shorten(mk, done, index, period_of) for mk in extra]


def find_detectors(
    circuit: Circuit,
    memory_basis: str | None = None,
    run: SymbolicRun | None = None,
) -> tuple[list[Detector], list[LogicalObservable]]:
    """Detectors and logical observables of a memory circuit.

    Time-local candidates are kept when the tracker confirms them; the
    tracker's own deterministic relations complete the basis.
    """
    if run is None:
        run = run_symbolic(circuit)
    meas = circuit.measurements
    terminal = set(circuit.terminal)
    raw = detector_masks(run, terminal)
    basis: dict[int, int] = {}
    chosen: list[int] = []

    def take(mask: int) -> None:
        v = mask
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                basis[top] = v
                chosen.append(mask)
                return
            v ^= basis[top]

    for mask in _candidates(circuit, run, terminal):
        rnd = 0
        for m in iter_bits(mask):
            rnd ^= run.outcomes[m].mask
        if rnd == 0:
            take(mask)
    for mask in _slim(raw):
        if len(basis) == len(raw):
            break
        take(mask)
    period = PERIODS[circuit.schedule.name]
    period_of = [ins.step // period for ins in meas]
    chosen = _unique_pivots(_latest_repeats(_localize(chosen, period_of)))
    chosen.sort(key=lambda mk: (mk.bit_length(), mk))
    detectors = []
    data = circuit.data_qubits
    for i, mask in enumerate(chosen):
        members = _bits(mask)
        touches_data = any(q in data for m in members for q, _ in meas[m].targets if meas[m].key != "init")
        plaqs = frozenset(meas[m].plaquette for m in members if meas[m].plaquette is not None)
        parity = 0
        for m in members:
            parity ^= run.outcomes[m].constant
        rnd = max((meas[m].round for m in members if meas[m].plaquette is not None), default=-1)
        detectors.append(
            Detector(i, members, HIGH if touches_data else LOW, plaqs, rnd, parity, mask.bit_length() - 1)
        )
    observables = []
    for t, membrane in zip(circuit.terminal, logical_membranes(circuit, run)):
        if run.deterministic[t]:
            membrane = LogicalObservable(membrane.label, _bits((1 << t) ^ run.provenance[t]), 0, True)
        observables.append(membrane)
    dmasks = [d.mask() for d in detectors]
    local = _localize(dmasks, period_of, [_mask_of(o.measurements) for o in observables])[len(dmasks):]
    for k, (o, mk) in enumerate(zip(observables, local)):
        parity = 0
        for m in iter_bits(mk):
            parity ^= run.outcomes[m].constant
        observables[k] = LogicalObservable(o.label, _bits(mk), parity, o.deterministic)
    return detectors, observables


def logical_membranes(circuit: Circuit, run: SymbolicRun) -> list[LogicalObservable]:
    """Backward membrane pass from each terminal logical readout.

    Crossing a random measurement whose displaced generator anticommutes
    with the membrane multiplies the membrane by the measured operator and
    adds that outcome to the observable.  A Pauli error then flips the
    observable exactly when it anticommutes with the membrane at its time,
    which is what defines a logical failure when the logical readout itself
    is random.
    """
    meas = circuit.measurements
    out = []
    for t in circuit.terminal:
        lx, lz = run.operators[t]
        members = {t}
        for m in range(t - 1, -1, -1):
            if m in circuit.terminal:
                continue
            g0 = run.replaced[m]
            if g0 is not None and anticommutes(lx, lz, g0[0], g0[1]):
                px, pz = run.operators[m]
                lx ^= px
                lz ^= pz
                members.add(m)
        mask = 0
        for m in members:
            mask ^= run.outcomes[m].mask
        parity = 0
        for m in members:
            parity ^= run.outcomes[m].constant
        deterministic = mask == 0
        label = meas[t].key.split(":", 1)[1]
        out.append(LogicalObservable(label, frozenset(members), parity, deterministic))
    return out


# -- faults --------------------------------------------------------------------

_P1 = ("I", "X", "Y", "Z")


def fault_variants(arity: int) -> list[tuple[tuple[str, ...], int]]:
    """Pauli/readout combinations of one measurement, excluding the identity."""
    return [(ps, f) for ps in product(_P1, repeat=arity) for f in (0, 1) if any(p != "I" for p in ps) or f]


class EffectTable:
    """Suffix XOR tables mapping (qubit, step, Pauli) to later measurement flips."""

    def __init__(self, circuit: Circuit, meas_keys: Sequence[int]):
        self.steps_of: dict[int, list[int]] = {}
        self.suf_x: dict[int, list[int]] = {}
        self.suf_z: dict[int, list[int]] = {}
        per_qubit: dict[int, list[tuple[int, str, int]]] = {}
        for ins in circuit.measurements:
            for q, b in ins.targets:
                per_qubit.setdefault(q, []).append((ins.step, b, meas_keys[ins.meas_index]))
        for q, lst in per_qubit.items():
            n = len(lst)
            sx = [0] * (n + 1)
            sz = [0] * (n + 1)
            for i in range(n - 1, -1, -1):
                _, b, key = lst[i]
                sx[i] = sx[i + 1] ^ (key if b in "ZY" else 0)
                sz[i] = sz[i + 1] ^ (key if b in "XY" else 0)
            self.steps_of[q] = [s for s, _, _ in lst]
            self.suf_x[q] = sx
            self.suf_z[q] = sz

    def pauli_after(self, q: int, step: int, p: str) -> int:
        steps = self.steps_of.get(q)
        if not steps:
            return 0
        i = bisect.bisect_right(steps, step)
        out = 0
        if p in "XY":
            out ^= self.suf_x[q][i]
        if p in "ZY":
            out ^= self.suf_z[q][i]
        return out


def _measurement_keys(circuit: Circuit, detectors: Sequence[Detector], observables: Sequence[LogicalObservable]) -> tuple[list[int], int]:
    nobs = len(observables)
    keys = [0] * circuit.num_measurements
    for d in detectors:
        for m in d.measurements:
            keys[m] ^= 1 << (d.id + nobs)
    for k, o in enumerate(observables):
        for m in o.measurements:
            keys[m] ^= 1 << k
    return keys, nobs


def split_key(key: int, nobs: int) -> tuple[tuple[int, ...], int]:
    return tuple(iter_bits(key >> nobs)), key & ((1 << nobs) - 1)


def enumerate_faults(
    circuit: Circuit,
    p: float,
    idle_noise: bool,
    detectors: Sequence[Detector],
    observables: Sequence[LogicalObservable],
) -> list[Fault]:
    """Every circuit fault inside the noisy window, with its detector signature."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    keys, nobs = _measurement_keys(circuit, detectors, observables)
    table = EffectTable(circuit, keys)
    lo, hi = circuit.noisy_steps if circuit.noisy_steps is not None else (0, len(circuit.steps))
    windows = circuit.noise_windows
    ptype: dict[int, str] = {}
    aux_type: dict[int, str] = {}
    if circuit.layout is not None and windows:
        for pl in circuit.layout.plaquettes:
            ptype[pl.id] = pl.pauli_type
            for q in pl.aux_qubits:
                aux_type[q.index] = pl.pauli_type

    def noisy(ins: Instruction) -> bool:
        t = ptype.get(ins.plaquette) if ins.plaquette is not None else aux_type.get(ins.targets[0][0])
        if t is None or t not in windows:
            return True
        a, b = windows[t]
        return a <= ins.step < b

    variants = {1: fault_variants(1), 2: fault_variants(2)}
    faults: list[Fault] = []
    for step in circuit.steps[lo:hi]:
        for ins in step:
            if not noisy(ins):
                continue
            if ins.kind == "IDLE":
                if not idle_noise:
                    continue
                q = ins.targets[0][0]
                for pa in "XYZ":
                    key = table.pauli_after(q, ins.step, pa)
                    syn, lm = split_key(key, nobs)
                    faults.append(Fault(len(faults), (ins.step, ((q, pa),), -1), p / 3, syn, lm, "idle"))
                continue
            arity = len(ins.targets)
            if arity > 2:
                continue
            prob = p / (2 ** (2 * arity + 1) - 1)
            m = ins.meas_index
            pieces = [[table.pauli_after(q, ins.step, pa) if pa != "I" else 0 for pa in _P1] for q, _ in ins.targets]
            for paulis, flip in variants[arity]:
                key = keys[m] if flip else 0
                errs = []
                for (q, _), pa, piece in zip(ins.targets, paulis, pieces):
                    if pa != "I":
                        key ^= piece[_P1.index(pa)]
                        errs.append((q, pa))
                syn, lm = split_key(key, nobs)
                faults.append(
                    Fault(len(faults), (ins.step, tuple(errs), m if flip else -1), prob, syn, lm, f"meas{arity}")
                )
    return faults


# -- decoding graph ----------------------------------------------------------


def edge_weight(p: float) -> float:
    return math.log((1 - p) / p)


def xor_prob(p1: float, p2: float) -> float:
    return p1 * (1 - p2) + p2 * (1 - p1)


@dataclass
class Edge:
    id: int
    u: int
    v: int | None  # None = boundary
    probability: float
    logical_mask: int
    sources: list[int] = field(default_factory=list)

    @property
    def weight(self) -> float:
        return edge_weight(self.probability)

    @property
    def dangling(self) -> bool:
        return self.v is None


@dataclass
class DecodingGraph:
    num_detectors: int
    num_observables: int
    edges: list[Edge]
    reweight_rules: list[tuple[int, tuple[int, ...]]]
    kinds: list[str]
    hyperedges_unsplit: int = 0
    undetectable_logical: float = 0.0

    @property
    def dangling_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.v is None]

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per vertex (neighbour, edge id); the boundary is vertex ``num_detectors``."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_detectors + 1)]
        b = self.num_detectors
        for e in self.edges:
            v = b if e.v is None else e.v
            adj[e.u].append((v, e.id))
            adj[v].append((e.u, e.id))
        return adj

    def rules_by_trigger(self) -> dict[int, tuple[int, ...]]:
        return dict(self.reweight_rules)


class SplitError(ValueError):
    pass


class _Splitter:
    def __init__(self, kinds: Sequence[str]):
        self.kinds = kinds
        self.dangling: dict[int, set[int]] = {}
        self.edges: dict[tuple[int, int], set[int]] = {}
        self.neigh: dict[int, set[int]] = {}

    def add_edge(self, u: int, v: int, lm: int) -> None:
        a, b = min(u, v), max(u, v)
        self.edges.setdefault((a, b), set()).add(lm)
        self.neigh.setdefault(a, set()).add(b)
        self.neigh.setdefault(b, set()).add(a)

    def _edge_masks(self, u: int, v: int) -> set[int]:
        return self.edges.get((min(u, v), max(u, v)), set())

    def decompose(self, syn: tuple[int, ...], lm: int, allow_dangling: bool = True, max_parts: int | None = None):
        """Fewest primitive parts reproducing (syn, lm); ties broken by sorted parts."""
        n = len(syn)
        limit = max_parts if max_parts is not None else n + 2
        for budget in range((n + 1) // 2, limit + 1):
            best = self._search(frozenset(syn), lm, budget, allow_dangling)
            if best is not None:
                return best
        return None

    def _search(self, rest: frozenset[int], lm: int, budget: int, allow_dangling: bool):
        if not rest:
            return () if lm == 0 else None
        if budget <= 0 or (len(rest) + 1) // 2 > budget:
            return None
        u = min(rest)
        options: list[tuple[tuple, frozenset[int], int, int]] = []
        if allow_dangling:
            for a in sorted(self.dangling.get(u, ())):
                options.append(((((u,), a),), rest - {u}, lm ^ a, 1))
        for v in sorted(rest - {u}):
            for a in sorted(self._edge_masks(u, v)):
                options.append(((((u, v), a),), rest - {u, v}, lm ^ a, 1))
        if budget >= 2:
            for w in sorted(self.neigh.get(u, ())):
                if w in rest:
                    continue
                for v in sorted(rest - {u}):
                    for a in sorted(self._edge_masks(u, w)):
                        for b in sorted(self._edge_masks(w, v)):
                            options.append(((((u, w), a), ((w, v), b)), rest - {u, v}, lm ^ a ^ b, 2))
                if allow_dangling:
                    for a in sorted(self._edge_masks(u, w)):
                        for b in sorted(self.dangling.get(w, ())):
                            options.append(((((u, w), a), ((w,), b)), rest - {u}, lm ^ a ^ b, 2))
        best = None
        for parts, nxt, nlm, cost in options:
            sub = self._search(nxt, nlm, budget - cost, allow_dangling)
            if sub is None:
                continue
            cand = tuple(sorted(parts + sub))
            if best is None or (len(cand), cand) < (len(best), best):
                best = cand
        return best


def split_and_build(
    faults: Sequence[Fault],
    detectors: Sequence[Detector],
    num_observables: int,
    rules: bool = True,
) -> DecodingGraph:
    """Split every fault into primitive 1- and 2-faults and combine them into edges."""
    kinds = [d.kind for d in detectors]
    groups: dict[tuple[tuple[int, ...], int], list[int]] = {}
    for f in faults:
        groups.setdefault((f.syndrome, f.logical_mask), []).append(f.id)
    splitter = _Splitter(kinds)
    undetectable = 0.0
    for (syn, lm), ids in groups.items():
        if len(syn) == 1:
            splitter.dangling.setdefault(syn[0], set()).add(lm)
    decomposition: dict[tuple[tuple[int, ...], int], tuple] = {}
    for (syn, lm), ids in groups.items():
        if len(syn) != 2:
            continue
        u, v = syn
        split = next(
            (
                (((u,), a), ((v,), b))
                for a in sorted(splitter.dangling.get(u, ()))
                for b in sorted(splitter.dangling.get(v, ()))
                if a ^ b == lm
            ),
            None,
        )
        if split is None:
            splitter.add_edge(u, v, lm)
            decomposition[(syn, lm)] = (((u, v), lm),)
        else:
            decomposition[(syn, lm)] = split
    rule_edges: dict[int, set[tuple]] = {}
    unsplit = 0
    for (syn, lm), ids in sorted(groups.items()):
        if len(syn) == 0:
            if lm:
                undetectable = xor_prob(undetectable, _group_prob(faults, ids))
            continue
        if len(syn) == 1:
            decomposition[(syn, lm)] = (((syn[0],), lm),)
            continue
        if (syn, lm) in decomposition:
            continue
        parts = None
        if rules and len(syn) == 3 and any(faults[i].pure_readout for i in ids):
            for j in syn:
                if kinds[j] != LOW:
                    continue
                for a in sorted(splitter.dangling.get(j, ())):
                    rest = tuple(x for x in syn if x != j)
                    sub = splitter.decompose(rest, lm ^ a, allow_dangling=False)
                    if sub is not None:
                        parts = (((j,), a),) + sub
                        rule_edges.setdefault(j, set()).update(p for p in sub)
                        break
                if parts is not None:
                    break
        if parts is None:
            parts = splitter.decompose(syn, lm)
        if parts is None:
            unsplit += 1
            origin = faults[ids[0]].origin
            raise SplitError(f"fault at {origin} with syndrome {syn} has no decomposition")
        decomposition[(syn, lm)] = parts
    # Combine probabilities per primitive edge.
    edge_index: dict[tuple[tuple[int, ...], int], Edge] = {}
    edges: list[Edge] = []
    for (syn, lm), ids in sorted(groups.items()):
        parts = decomposition.get((syn, lm))
        if parts is None:
            continue
        for f_id in ids:
            f = faults[f_id]
            for part in parts:
                e = edge_index.get(part)
                if e is None:
                    nodes, mask = part
                    e = Edge(len(edges), nodes[0], nodes[1] if len(nodes) == 2 else None, f.probability, mask, [f_id])
                    edge_index[part] = e
                    edges.append(e)
                else:
                    e.probability = xor_prob(e.probability, f.probability)
                    e.sources.append(f_id)
    rule_list = []
    for j in sorted(rule_edges):
        ids = tuple(sorted(edge_index[p].id for p in rule_edges[j] if p in edge_index))
        if ids:
            rule_list.append((j, ids))
    return DecodingGraph(len(detectors), num_observables, edges, rule_list, kinds, unsplit, undetectable)


def _group_prob(faults: Sequence[Fault], ids: Iterable[int]) -> float:
    p = 0.0
    for i in ids:
        p = xor_prob(p, faults[i].probability)
    return p


# -- text export -------------------------------------------------------------


def dem_text(
    detectors: Sequence[Detector],
    observables: Sequence[LogicalObservable],
    faults: Sequence[Fault] = (),
    graph: DecodingGraph | None = None,
) -> str:
    lines = []
    for d in detectors:
        lines.append(f"DET {d.id} {d.kind} m:{','.join(map(str, sorted(d.measurements)))}")
    for o in observables:
        lines.append(f"OBS {o.label} m:{','.join(map(str, sorted(o.measurements)))}")
    for f in faults:
        lines.append(f"FAULT {f.id} p:{f.probability:.6g} d:{','.join(map(str, f.syndrome))} l:{f.logical_mask}")
    if graph is not None:
        for e in graph.edges:
            v = "B" if e.v is None else str(e.v)
            lines.append(f"EDGE {e.u} {v} {e.weight:.6f} {e.logical_mask}")
        for j, ids in graph.reweight_rules:
            lines.append(f"RULE {j} -> {' '.join(map(str, ids))}")
    return "\n".join(lines) + "\n"


@dataclass
class Model:
    """Everything derived from one memory circuit."""

    circuit: Circuit
    detectors: list[Detector]
    observables: list[LogicalObservable]
    run: SymbolicRun


def analyze(circuit: Circuit) -> Model:
    run = run_symbolic(circuit)
    dets, obs = find_detectors(circuit, circuit.memory_basis, run)
    return Model(circuit, dets, obs, run)
