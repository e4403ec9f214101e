"""Dead-component handling: reduce and split n-gons, then find superplaquettes.

Dead components are given by doubled-grid positions (see ``geometry``), which
stay meaningful when a layout is rebuilt with new qubit indices.  The three
steps run in order: dead data qubits shrink n-gons, dead auxiliaries split
them, dead connections split them again.  A split always uses the fewest
fragments whose circuits avoid every dead element; the candidates are the
same n-gon circuits the generator already emits, so a fragment never needs a
measurement the bulk schedule lacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Iterator, Sequence

from .circuit_gen import (
    INTERLEAVED_CORNERS,
    STANDARD_TABLE,
    Schedule,
    prepared_circuit,
    reduce_op,
)
from .dem_builder import HIGH, find_detectors
from .geometry import (
    LABEL_CORNERS,
    _assemble,
    Layout,
    Plaquette,
    Pos,
    Shape,
    _Spec,
    aux_pos,
    kept_aux,
    label_pos,
    rebuild,
    shape_for,
    specs_of,
)


def _norm_pair(a: Pos, b: Pos) -> tuple[Pos, Pos]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class DeadSet:
    dead_data: frozenset[Pos] = frozenset()
    dead_aux: frozenset[Pos] = frozenset()
    dead_connections: frozenset[tuple[Pos, Pos]] = frozenset()

    @classmethod
    def of(
        cls,
        data: Iterable[Pos] = (),
        aux: Iterable[Pos] = (),
        connections: Iterable[tuple[Pos, Pos]] = (),
    ) -> "DeadSet":
        return cls(
            frozenset(tuple(p) for p in data),
            frozenset(tuple(p) for p in aux),
            frozenset(_norm_pair(tuple(a), tuple(b)) for a, b in connections),
        )

    def __bool__(self) -> bool:
        return bool(self.dead_data or self.dead_aux or self.dead_connections)

    def lines(self) -> list[str]:
        out = [f"DATA {r},{c}" for r, c in sorted(self.dead_data)]
        out += [f"AUX {r},{c}" for r, c in sorted(self.dead_aux)]
        out += [f"CONN {a[0]},{a[1]} {b[0]},{b[1]}" for a, b in sorted(self.dead_connections)]
        return out


def parse_dead(text: str) -> DeadSet:
    """Read ``DATA r,c`` / ``AUX r,c`` / ``CONN r1,c1 r2,c2`` lines; ``#`` starts a comment."""

    def pos(tok: str, lineno: int) -> Pos:
        try:
            r, c = (int(x) for x in tok.split(","))
        except ValueError:
            raise ValueError(f"line {lineno}: bad position {tok!r}") from None
        return (r, c)

    data, aux, conns = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *args = line.split()
        kind = kind.upper()
        if kind in ("DATA", "AUX") and len(args) == 1:
            (data if kind == "DATA" else aux).append(pos(args[0], lineno))
        elif kind == "CONN" and len(args) == 2:
            conns.append((pos(args[0], lineno), pos(args[1], lineno)))
        else:
            raise ValueError(f"line {lineno}: cannot parse {raw.strip()!r}")
    return DeadSet.of(data, aux, conns)


# -- fragment circuits -------------------------------------------------------------


def _names(spec: _Spec, labels: Sequence[int], aux_names: Sequence[str], wrap) -> dict[str, Pos]:
    names = {str(k): wrap(label_pos(spec.cell, spec.ptype, k)) for k in labels}
    names.update({n: wrap(aux_pos(spec.cell, spec.ptype, n)) for n in aux_names})
    return names


def fragment_resources(spec: _Spec, labels: Sequence[int], wrap=lambda p: p) -> tuple[frozenset[Pos], frozenset[tuple[Pos, Pos]]]:
    """Auxiliary positions and pair connections used by the n-gon circuit on ``labels``."""
    aux_names = kept_aux(labels)
    names = _names(spec, labels, aux_names, wrap)
    conns = set()
    for ops in STANDARD_TABLE.values():
        for op in ops:
            terms = reduce_op(op, names, set(aux_names))
            if terms and len(terms) == 2:
                conns.add(_norm_pair(terms[0][0], terms[1][0]))
    return frozenset(names[n] for n in aux_names), frozenset(conns)


def _partitions(items: Sequence[int]) -> Iterator[list[tuple[int, ...]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for k in range(len(rest) + 1):
        for others in combinations(rest, k):
            block = (first,) + others
            remaining = [x for x in rest if x not in others]
            for tail in _partitions(remaining):
                yield [block] + tail


def minimal_split(
    spec: _Spec,
    dead_aux: frozenset[Pos] = frozenset(),
    dead_connections: frozenset[tuple[Pos, Pos]] = frozenset(),
    wrap=lambda p: p,
) -> list[tuple[int, ...]]:
    """Fewest fragments of ``spec`` whose circuits avoid the dead elements.

    Fragments may only use auxiliaries the plaquette already has, and two
    fragments of one cell never share an auxiliary.  Ties, which the layouts
    here never produce, go to the first partition in enumeration order.
    """
    allowed = {wrap(aux_pos(spec.cell, spec.ptype, n)) for n in spec.aux_names}
    best: list[tuple[int, ...]] | None = None
    for part in _partitions(sorted(spec.labels)):
        if best is not None and len(part) >= len(best):
            continue
        used: set[Pos] = set()
        ok = True
        for block in part:
            aux, conns = fragment_resources(spec, block, wrap)
            if not aux <= allowed or aux & dead_aux or conns & dead_connections or aux & used:
                ok = False
                break
            used |= aux
        if ok:
            best = part
    assert best is not None  # all 1-gons always qualify
    return best


def _uses(spec: _Spec, wrap) -> tuple[frozenset[Pos], frozenset[tuple[Pos, Pos]]]:
    return fragment_resources(spec, spec.labels, wrap)


def _replace(spec: _Spec, parts: list[tuple[int, ...]]) -> list[_Spec]:
    if len(parts) == 1 and parts[0] == tuple(sorted(spec.labels)):
        return [spec]
    return [
        _Spec(spec.ptype, spec.cell, block, kept_aux(block), Shape.SplitFragment, spec.parent)
        for block in parts
    ]


def apply_dead(layout: Layout, dead: DeadSet) -> Layout:
    """Layout whose fragments avoid every dead component.

    Unused live auxiliaries disappear with the fragments that needed them,
    and data qubits left without any pair measurement are dropped.
    """
    _validate(layout, dead)
    wrap = layout.wrap
    specs = []
    for p, s in zip(layout.plaquettes, specs_of(layout)):
        s.parent = p.id if s.parent is None else s.parent
        specs.append(s)
    # step 1: dead data
    reduced = []
    for s in specs:
        labels = tuple(k for k in s.labels if wrap(label_pos(s.cell, s.ptype, k)) not in dead.dead_data)
        if not labels:
            continue
        if labels != s.labels:
            s = _Spec(s.ptype, s.cell, labels, kept_aux(labels), shape_for(len(labels)), s.parent)
        reduced.append(s)
    specs = reduced
    # steps 2 and 3, one dead element at a time
    for aux in sorted(dead.dead_aux):
        specs = [f for s in specs for f in (
            _replace(s, minimal_split(s, frozenset({aux}), wrap=wrap)) if aux in _uses(s, wrap)[0] else [s]
        )]
    for conn in sorted(dead.dead_connections):
        specs = [f for s in specs for f in (
            _replace(s, minimal_split(s, dead_connections=frozenset({conn}), wrap=wrap)) if conn in _uses(s, wrap)[1] else [s]
        )]
    covered = {wrap(label_pos(s.cell, s.ptype, k)) for s in specs for k in s.labels}
    data = {q.pos for q in layout.data_qubits if q.pos in covered}
    specs.sort(key=lambda s: (s.parent, s.labels))
    out = rebuild(layout, specs, data)
    return _reroute_logicals(out, layout)


def _validate(layout: Layout, dead: DeadSet) -> None:
    for p in dead.dead_data:
        q = layout.qubit_at(p)
        if q is None or not q.is_data:
            raise ValueError(f"no data qubit at {p}")
    for p in dead.dead_aux:
        q = layout.qubit_at(p)
        if q is None or q.is_data:
            raise ValueError(f"no auxiliary qubit at {p}")
    every = set()
    for s in specs_of(layout):
        every |= _uses(s, layout.wrap)[1]
    for a, b in dead.dead_connections:
        if _norm_pair(layout.wrap(a), layout.wrap(b)) not in every:
            raise ValueError(f"{a}-{b} is not a pair measured by any plaquette")


# -- logical strings on the damaged layout ---------------------------------------------


def _mask(layout: Layout, positions: Iterable[Pos]) -> int:
    m = 0
    for p in positions:
        m |= 1 << layout.qubit_at(p).index
    return m


def _stabilizer_masks(layout: Layout, ptype: str) -> list[int]:
    """Supports of the type-``ptype`` superplaquette group generators."""
    return [g.support_mask for g in _groups(layout) if g.pauli_type == ptype]


def _reroute_logicals(layout: Layout, original: Layout) -> Layout:
    """Move each logical string to the nearest parallel row or column that survives."""
    data = {q.pos for q in layout.data_qubits}
    strings = []
    for s in original.logical_observables:
        path = [q.pos for q in s.path]
        other = "X" if s.pauli_type == "Z" else "Z"
        checks = _stabilizer_masks(layout, other)
        horizontal = len({p[0] for p in path}) == 1
        for shift in sorted(range(-2 * layout.d, 2 * layout.d + 1, 2), key=abs):
            cand = [layout.wrap((r + shift, c) if horizontal else (r, c + shift)) for r, c in path]
            if not all(p in data for p in cand):
                continue
            m = _mask(layout, cand)
            if all(bin(m & c).count("1") % 2 == 0 for c in checks):
                strings.append((s.label, cand, s.pauli_type))
                break
    keep = {q.pos for q in layout.data_qubits}
    return _assemble(layout.topology, layout.d, keep, specs_of(layout), layout.period, strings=strings)


# -- superplaquettes ---------------------------------------------------------------


@dataclass(frozen=True)
class Group:
    pauli_type: str
    members: tuple[int, ...]  # fragment plaquette ids
    boundary: tuple[Pos, ...]  # support of the product
    support_mask: int = field(compare=False, default=0)


@dataclass
class SuperplaquetteReport:
    groups: list[Group]
    layers: dict[frozenset[int], int]  # damaged region (fragment ids) -> l
    rounds: int

    def pipelined_counts(self) -> tuple[int, int]:
        return (self.rounds, self.rounds)

    def interleaved_counts(self, region: frozenset[int]) -> tuple[int, int]:
        return interleaved_counts(self.rounds, self.layers[region])

    def damaged(self) -> list[Group]:
        return [g for g in self.groups if len(g.members) > 1]


def interleaved_counts(rounds: int, layers: int) -> tuple[int, int]:
    return (rounds + 1 - math.ceil((layers - 1) / 2), rounds + 1 - math.ceil(layers / 2))


def _anticommute(a: Plaquette, b: Plaquette) -> bool:
    return a.pauli_type != b.pauli_type and len(a.support() & b.support()) % 2 == 1


def _conflicts(layout: Layout) -> dict[int, list[int]]:
    by_qubit: dict[int, list[Plaquette]] = {}
    for p in layout.plaquettes:
        for q in p.data_qubits:
            by_qubit.setdefault(q.index, []).append(p)
    out: dict[int, set[int]] = {p.id: set() for p in layout.plaquettes}
    for ps in by_qubit.values():
        for a, b in combinations(ps, 2):
            if _anticommute(a, b):
                out[a.id].add(b.id)
                out[b.id].add(a.id)
    return {k: sorted(v) for k, v in out.items()}


def _regions(layout: Layout) -> list[list[int]]:
    """Connected blocks of the anticommutation graph (singletons when undamaged)."""
    adj = _conflicts(layout)
    seen: set[int] = set()
    out = []
    for p in layout.plaquettes:
        if p.id in seen:
            continue
        comp, stack = [], [p.id]
        seen.add(p.id)
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        out.append(sorted(comp))
    return out


def _kernel(vectors: list[int], n: int) -> list[int]:
    """Basis (as index bitmasks) of combinations of ``vectors`` summing to zero."""
    rows = [(v, 1 << i) for i, v in enumerate(vectors)]
    pivots: dict[int, tuple[int, int]] = {}
    out = []
    for v, tag in rows:
        while v:
            top = v.bit_length() - 1
            if top not in pivots:
                pivots[top] = (v, tag)
                break
            pv, pt = pivots[top]
            v ^= pv
            tag ^= pt
        if not v:
            out.append(tag)
    return out


def _groups(layout: Layout) -> list[Group]:
    plaqs = {p.id: p for p in layout.plaquettes}
    adj = _conflicts(layout)
    groups = []
    for comp in _regions(layout):
        for t in ("Z", "X"):
            mine = [i for i in comp if plaqs[i].pauli_type == t]
            others = [i for i in comp if plaqs[i].pauli_type != t]
            col = {j: k for k, j in enumerate(others)}
            vecs = []
            for i in mine:
                v = 0
                for j in adj[i]:
                    v |= 1 << col[j]
                vecs.append(v)
            for tag in _reduced(_kernel(vecs, len(others))):
                members = tuple(mine[k] for k in range(len(mine)) if (tag >> k) & 1)
                support = 0
                for i in members:
                    for q in plaqs[i].data_qubits:
                        support ^= 1 << q.index
                pos = tuple(sorted(layout.qubits[k].pos for k in range(layout.num_qubits) if (support >> k) & 1))
                groups.append(Group(t, members, pos, support))
    groups.sort(key=lambda g: (g.pauli_type, g.members))
    return groups


def _reduced(tags: list[int]) -> list[int]:
    """Fully reduced echelon form, so each group is as small as elimination allows."""
    basis: dict[int, int] = {}
    for t in tags:
        for top in sorted(basis, reverse=True):
            if (t >> top) & 1:
                t ^= basis[top]
        if t:
            top = t.bit_length() - 1
            for k in list(basis):
                if (basis[k] >> top) & 1:
                    basis[k] ^= t
            basis[top] = t
    return [basis[k] for k in sorted(basis)]


def superplaquettes(layout_after: Layout, dead: DeadSet | None = None, rounds: int = 1) -> SuperplaquetteReport:
    """Superplaquette groups of a damaged layout and the layer count of each region."""
    groups = _groups(layout_after)
    return SuperplaquetteReport(groups, _layers(layout_after), rounds)


# -- effective layering ------------------------------------------------------------


def _step(p: Plaquette, q_index: int) -> int:
    """Interleaved-schedule step (1..4) at which ``p`` addresses data qubit ``q_index``."""
    corners = INTERLEAVED_CORNERS[p.pauli_type]
    order = {corner: lab for lab, corner in corners.items()}
    for lab, q in zip(p.labels, p.data_qubits):
        if q.index == q_index:
            return order[LABEL_CORNERS[p.pauli_type][lab]]
    raise KeyError(q_index)


def _layers(layout: Layout) -> dict[frozenset[int], int]:
    """Longest chain of anticommuting checks, ordered by which addresses the shared qubit first."""
    plaqs = {p.id: p for p in layout.plaquettes}
    adj = _conflicts(layout)
    out = {}
    for comp in _regions(layout):
        succ: dict[int, list[int]] = {i: [] for i in comp}
        for a in comp:
            for b in adj[a]:
                if a < b:
                    shared = min(plaqs[a].support() & plaqs[b].support())
                    first, second = (a, b) if _step(plaqs[a], shared) < _step(plaqs[b], shared) else (b, a)
                    succ[first].append(second)
        depth: dict[int, int] = {}

        def longest(u: int) -> int:
            if u not in depth:
                depth[u] = 1 + max((longest(v) for v in succ[u]), default=0)
            return depth[u]

        out[frozenset(comp)] = max(2, max(longest(i) for i in comp))
    return out


def region_layers(layout_before: Layout, dead: DeadSet) -> dict[frozenset[int], int]:
    """Effective layer count l per damaged region (keys are fragment ids after ``apply_dead``).

    Undamaged checks form singleton regions with l = 2.
    """
    return _layers(apply_dead(layout_before, dead))


# -- detectors and distances ---------------------------------------------------------


def superplaquette_detectors(layout_after: Layout, rounds: int, schedule: "Schedule | str" = "standard4") -> dict[Group, int]:
    """Independent wide detectors comparing each superplaquette group.

    Each type runs on its own with the data prepared in that type's
    eigenbasis.  For a group, the count is the rank, on the group's readout
    measurements, of the detector combinations free of every other readout
    of that type.  The finder's choice of basis therefore does not matter.
    Right after preparation each fragment is deterministic on its own; those
    first comparisons count once for the group, as their product.
    """
    groups = _groups(layout_after)
    counts = {g: 0 for g in groups}
    plaqs = {p.id: p for p in layout_after.plaquettes}
    for t in ("Z", "X"):
        circuit = prepared_circuit(layout_after, schedule, rounds, t)
        detectors, _ = find_detectors(circuit, t)
        owner: dict[int, int] = {}
        for m in circuit.measurements:
            if m.readout and plaqs[m.plaquette].pauli_type == t:
                owner[m.meas_index] = m.plaquette
        wide = [d.mask() for d in detectors if d.kind == HIGH]
        for g in groups:
            if g.pauli_type != t:
                continue
            n = _confined_rank(wide, owner, set(g.members))
            if len(g.members) > 1 and all(_confined_rank(wide, owner, {m}) for m in g.members):
                n -= len(g.members) - 1
            counts[g] = n
    return counts


def _confined_rank(masks: list[int], owner: dict[int, int], members: set[int]) -> int:
    """Rank on ``members``' readouts of combinations avoiding all other readouts."""
    own = sorted(k for k, p in owner.items() if p in members)
    foreign = sorted(k for k, p in owner.items() if p not in members)
    col = {k: i for i, k in enumerate(own)}
    col.update({k: len(own) + i for i, k in enumerate(foreign)})
    rows = []
    for mk in masks:
        v = 0
        for k in _bits(mk):
            if k in col:
                v |= 1 << col[k]
        rows.append(v)
    pivots: dict[int, int] = {}
    for v in rows:
        while v:
            top = v.bit_length() - 1
            if top not in pivots:
                pivots[top] = v
                break
            v ^= pivots[top]
    return sum(1 for top in pivots if top < len(own))


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def code_distance(layout: Layout, ptype: str, max_weight: int | None = None) -> int | None:
    """Minimum weight of a type-``ptype`` logical by exhaustive search.

    A logical commutes with every opposite-type superplaquette and lies
    outside the span of same-type checks.  Returns None if nothing up to
    ``max_weight`` (default d) qualifies.
    """
    other = "X" if ptype == "Z" else "Z"
    checks = _stabilizer_masks(layout, other)
    gauge: dict[int, int] = {}
    for p in layout.plaquettes:
        if p.pauli_type != ptype:
            continue
        v = 0
        for q in p.data_qubits:
            v ^= 1 << q.index
        while v:
            top = v.bit_length() - 1
            if top not in gauge:
                gauge[top] = v
                break
            v ^= gauge[top]

    def in_gauge(v: int) -> bool:
        while v:
            top = v.bit_length() - 1
            if top not in gauge:
                return False
            v ^= gauge[top]
        return True

    data = [q.index for q in layout.data_qubits]
    limit = layout.d if max_weight is None else max_weight
    for w in range(1, limit + 1):
        for combo in combinations(data, w):
            v = 0
            for q in combo:
                v |= 1 << q
            if all(bin(v & c).count("1") % 2 == 0 for c in checks) and not in_gauge(v):
                return w
    return None
