"""Lattice layouts for the pairwise-measurement surface code.

Positions are stored on a doubled integer grid (row grows downward): data
qubits sit at (even, even), and the cell whose top-left corner is
``(2i, 2j)`` owns three auxiliary qubits.  For a Z cell they lie on the
horizontal line through the cell centre (A on the left edge, B in the
middle, C on the right edge) so every Z-type pair measurement is vertical.
For an X cell they lie on the vertical line (A on top, C at the bottom) so
every X-type pair is horizontal.  ``QubitId.coord`` reports the
half-integer coordinates, i.e. the doubled grid divided by two.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class Topology(str, enum.Enum):
    RotatedGood = "rotated-good"
    RotatedBad = "rotated-bad"
    Unrotated = "unrotated"
    Torus = "torus"

    @classmethod
    def parse(cls, text: "str | Topology") -> "Topology":
        if isinstance(text, Topology):
            return text
        key = text.strip().lower().replace("_", "-")
        for t in cls:
            if key in (t.value, t.name.lower()):
                return t
        raise ValueError(f"unknown topology {text!r}")


class Role(str, enum.Enum):
    Data = "Data"
    AuxA = "AuxA"
    AuxB = "AuxB"
    AuxC = "AuxC"


class Shape(str, enum.Enum):
    FourGon = "FourGon"
    ThreeGon = "ThreeGon"
    TwoGon = "TwoGon"
    OneGon = "OneGon"
    SplitFragment = "SplitFragment"


Pos = tuple[int, int]

# Addressing order 1..4 expressed as cell corners.
CORNER_OFFSETS: dict[str, Pos] = {"TL": (0, 0), "TR": (0, 2), "BL": (2, 0), "BR": (2, 2)}
LABEL_CORNERS: dict[str, dict[int, str]] = {
    "Z": {1: "TL", 2: "BR", 3: "BL", 4: "TR"},
    "X": {1: "TR", 2: "BL", 3: "TL", 4: "BR"},
}
# Labels 1 and 3 are coupled through A, labels 2 and 4 through C.
LABEL_AUX = {1: "A", 2: "C", 3: "A", 4: "C"}
AUX_OFFSETS: dict[str, dict[str, Pos]] = {
    "Z": {"A": (1, 0), "B": (1, 1), "C": (1, 2)},
    "X": {"A": (0, 1), "B": (1, 1), "C": (2, 1)},
}
ROLE_OF = {"A": Role.AuxA, "B": Role.AuxB, "C": Role.AuxC}


@dataclass(frozen=True)
class QubitId:
    index: int
    pos: Pos
    role: Role

    @property
    def coord(self) -> tuple[float, float]:
        return (self.pos[0] / 2, self.pos[1] / 2)

    @property
    def is_data(self) -> bool:
        return self.role is Role.Data


@dataclass(frozen=True)
class Plaquette:
    """A (possibly reduced) stabilizer check and the qubits its circuit uses.

    ``labels[k]`` is the addressing label (1..4) of ``data_qubits[k]`` in the
    four-body circuit; ``aux`` maps "A"/"B"/"C" to the auxiliaries kept.
    """

    id: int
    pauli_type: str
    cell: Pos
    data_qubits: tuple[QubitId, ...]
    labels: tuple[int, ...]
    aux: tuple[tuple[str, QubitId], ...]
    shape: Shape
    parent: int | None = None

    @property
    def aux_qubits(self) -> tuple[QubitId, ...]:
        return tuple(q for _, q in self.aux)

    @property
    def aux_map(self) -> dict[str, QubitId]:
        return dict(self.aux)

    @property
    def n(self) -> int:
        return len(self.data_qubits)

    def data_by_label(self) -> dict[int, QubitId]:
        return dict(zip(self.labels, self.data_qubits))

    def support(self) -> frozenset[int]:
        return frozenset(q.index for q in self.data_qubits)


@dataclass(frozen=True)
class LogicalString:
    label: str
    path: tuple[QubitId, ...]
    pauli_type: str

    def support(self) -> frozenset[int]:
        return frozenset(q.index for q in self.path)


@dataclass(frozen=True)
class Layout:
    qubits: tuple[QubitId, ...]
    plaquettes: tuple[Plaquette, ...]
    topology: Topology
    d: int
    logical_observables: tuple[LogicalString, ...]
    period: int | None = None  # doubled-grid period for the torus
    by_pos: dict[Pos, QubitId] = field(default_factory=dict, compare=False, repr=False)

    @property
    def num_qubits(self) -> int:
        return len(self.qubits)

    @property
    def data_qubits(self) -> list[QubitId]:
        return [q for q in self.qubits if q.is_data]

    def qubit_at(self, pos: Pos) -> QubitId | None:
        return self.by_pos.get(self.wrap(pos))

    def wrap(self, pos: Pos) -> Pos:
        if self.period is None:
            return pos
        return (pos[0] % self.period, pos[1] % self.period)

    def plaquette(self, pid: int) -> Plaquette:
        for p in self.plaquettes:
            if p.id == pid:
                return p
        raise KeyError(f"plaquette {pid} not in layout")


def cell_type(cell: Pos) -> str:
    return "Z" if (cell[0] + cell[1]) % 2 == 0 else "X"


def corner_pos(cell: Pos, corner: str) -> Pos:
    dr, dc = CORNER_OFFSETS[corner]
    return (2 * cell[0] + dr, 2 * cell[1] + dc)


def aux_pos(cell: Pos, ptype: str, name: str) -> Pos:
    dr, dc = AUX_OFFSETS[ptype][name]
    return (2 * cell[0] + dr, 2 * cell[1] + dc)


def label_pos(cell: Pos, ptype: str, label: int) -> Pos:
    return corner_pos(cell, LABEL_CORNERS[ptype][label])


def kept_aux(labels: Iterable[int]) -> tuple[str, ...]:
    """Auxiliaries an n-gon keeps given its data labels."""
    labels = sorted(labels)
    if len(labels) == 1:
        return ()
    if len(labels) == 2 and len({LABEL_AUX[k] for k in labels}) == 1:
        return (LABEL_AUX[labels[0]],)
    return ("A", "B", "C")


def shape_for(n: int) -> Shape:
    return {4: Shape.FourGon, 3: Shape.ThreeGon, 2: Shape.TwoGon, 1: Shape.OneGon}[n]


@dataclass
class _Spec:
    """Plaquette description before qubit indices exist."""

    ptype: str
    cell: Pos
    labels: tuple[int, ...]
    aux_names: tuple[str, ...]
    shape: Shape | None = None
    parent: int | None = None


def _patch_specs(topology: Topology, d: int) -> tuple[set[Pos], list[_Spec]]:
    if topology is Topology.Unrotated:
        return _unrotated_specs(d)
    data = {(2 * i, 2 * j) for i in range(d) for j in range(d)}
    specs: list[_Spec] = []
    for i in range(-1, d):
        for j in range(-1, d):
            t = cell_type((i, j))
            labels = tuple(
                k for k in range(1, 5) if label_pos((i, j), t, k) in data
            )
            if len(labels) == 4:
                specs.append(_Spec(t, (i, j), labels, ("A", "B", "C")))
                continue
            if len(labels) != 2:
                continue
            vertical_edge = j in (-1, d - 1)
            z_on_vertical = topology is Topology.RotatedGood
            if t == "Z" and vertical_edge != z_on_vertical:
                continue
            if t == "X" and vertical_edge == z_on_vertical:
                continue
            # 2-gons whose two labels share an auxiliary keep it alone; the
            # others keep all three auxiliaries outside the data grid.
            specs.append(_Spec(t, (i, j), labels, kept_aux(labels)))
    return data, specs


def _unrotated_specs(d: int) -> tuple[set[Pos], list[_Spec]]:
    c = 2 * (d - 1)
    data = {
        (r, col)
        for r in range(0, 2 * c + 1, 2)
        for col in range(0, 2 * c + 1, 2)
        if abs(r - c) + abs(col - c) <= c
    }
    specs = []
    for i in range(-1, c + 1):
        for j in range(-1, c + 1):
            cell = (i, j)
            # The plain checkerboard puts the Z 3-gons on the NE and SW sides.
            t = cell_type(cell)
            labels = tuple(k for k in range(1, 5) if label_pos(cell, t, k) in data)
            if len(labels) >= 3:
                specs.append(_Spec(t, cell, labels, ("A", "B", "C")))
    return data, specs


def _torus_specs(L: int) -> tuple[set[Pos], list[_Spec]]:
    data = {(2 * i, 2 * j) for i in range(L) for j in range(L)}
    specs = [
        _Spec(cell_type((i, j)), (i, j), (1, 2, 3, 4), ("A", "B", "C"))
        for i in range(L)
        for j in range(L)
    ]
    return data, specs


def _assemble(
    topology: Topology,
    d: int,
    data: set[Pos],
    specs: Sequence[_Spec],
    period: int | None,
    strings: Sequence[tuple[str, Sequence[Pos], str]] | None = None,
    extra_data: Sequence[QubitId] = (),
) -> Layout:
    def wrap(p: Pos) -> Pos:
        return p if period is None else (p[0] % period, p[1] % period)

    qubits: list[QubitId] = []
    by_pos: dict[Pos, QubitId] = {}
    for p in sorted(data):
        q = QubitId(len(qubits), p, Role.Data)
        qubits.append(q)
        by_pos[p] = q
    aux_entries: list[tuple[Pos, Role]] = []
    seen: set[Pos] = set()
    for s in specs:
        for name in s.aux_names:
            p = wrap(aux_pos(s.cell, s.ptype, name))
            if p in seen or p in by_pos:
                raise ValueError(f"auxiliary position {p} used twice")
            seen.add(p)
            aux_entries.append((p, ROLE_OF[name]))
    for p, role in sorted(aux_entries):
        q = QubitId(len(qubits), p, role)
        qubits.append(q)
        by_pos[p] = q
    plaquettes = []
    for pid, s in enumerate(specs):
        dq = tuple(by_pos[wrap(label_pos(s.cell, s.ptype, k))] for k in s.labels)
        aux = tuple((name, by_pos[wrap(aux_pos(s.cell, s.ptype, name))]) for name in s.aux_names)
        shape = s.shape or shape_for(len(s.labels))
        plaquettes.append(Plaquette(pid, s.ptype, s.cell, dq, s.labels, aux, shape, s.parent))
    layout = Layout(tuple(qubits), tuple(plaquettes), topology, d, (), period, by_pos)
    if strings is None:
        strings = _default_strings(topology, d, data)
    logicals = tuple(
        LogicalString(label, tuple(by_pos[wrap(p)] for p in path), t)
        for label, path, t in strings
    )
    return Layout(layout.qubits, layout.plaquettes, topology, d, logicals, period, by_pos)


def _default_strings(topology: Topology, d: int, data: set[Pos]) -> list[tuple[str, list[Pos], str]]:
    if topology is Topology.Torus:
        row = [(0, 2 * j) for j in range(d)]
        col = [(2 * i, 0) for i in range(d)]
        return [("Zh", row, "Z"), ("Zv", col, "Z"), ("Xh", row, "X"), ("Xv", col, "X")]
    if topology is Topology.Unrotated:
        c = 2 * (d - 1)
        ts = range(-(d - 1), d, 2)
        sw_ne = [(c - t, c + t) for t in ts]
        nw_se = [(c + t, c + t) for t in ts]
        return [("Z", sw_ne, "Z"), ("X", nw_se, "X")]
    row = [(0, 2 * j) for j in range(d)]
    col = [(2 * i, 0) for i in range(d)]
    if topology is Topology.RotatedGood:
        return [("Z", row, "Z"), ("X", col, "X")]
    return [("Z", col, "Z"), ("X", row, "X")]


def build_layout(topology: "Topology | str", d: int) -> Layout:
    """Build a patch of odd distance ``d`` or an ``d`` x ``d`` torus (``d`` even)."""
    topology = Topology.parse(topology)
    if not isinstance(d, int) or d < 3:
        raise ValueError("size must be an integer >= 3")
    if topology is Topology.Torus:
        if d % 2 or d < 4:
            raise ValueError("torus size L must be even and >= 4")
        data, specs = _torus_specs(d)
        return _assemble(topology, d, data, specs, period=2 * d)
    if d % 2 == 0:
        raise ValueError("patch distance must be odd")
    data, specs = _patch_specs(topology, d)
    return _assemble(topology, d, data, specs, period=None)


def isolated_plaquette(ptype: str = "Z") -> Layout:
    """A single four-body plaquette with its three auxiliaries."""
    cell = (0, 0) if ptype == "Z" else (0, 1)
    data = {label_pos(cell, ptype, k) for k in range(1, 5)}
    spec = _Spec(ptype, cell, (1, 2, 3, 4), ("A", "B", "C"))
    return _assemble(Topology.RotatedGood, 1, data, [spec], None, strings=[])


def rebuild(layout: Layout, specs: Sequence[_Spec], data: set[Pos]) -> Layout:
    """Reassemble a layout from plaquette descriptions, keeping its logicals.

    Logical paths that touch removed data qubits are dropped.
    """
    strings = []
    for s in layout.logical_observables:
        if all(q.pos in data for q in s.path):
            strings.append((s.label, [q.pos for q in s.path], s.pauli_type))
    return _assemble(layout.topology, layout.d, data, specs, layout.period, strings=strings)


def specs_of(layout: Layout) -> list[_Spec]:
    return [
        _Spec(p.pauli_type, p.cell, p.labels, tuple(n for n, _ in p.aux), p.shape, p.parent)
        for p in layout.plaquettes
    ]


def pauli_support_mask(qubits: Iterable[QubitId]) -> int:
    m = 0
    for q in qubits:
        m |= 1 << q.index
    return m


def logical_strings(layout: Layout) -> list[tuple[str, list[QubitId], str]]:
    return [(s.label, list(s.path), s.pauli_type) for s in layout.logical_observables]


def commutes(support_a: int, type_a: str, support_b: int, type_b: str) -> bool:
    """Whether two single-type Pauli strings commute, supports as bitmasks."""
    if type_a == type_b:
        return True
    return bin(support_a & support_b).count("1") % 2 == 0


def qubit_counts(topology: "Topology | str", d: int) -> int:
    """Closed-form total qubit count of a layout."""
    topology = Topology.parse(topology)
    if topology is Topology.RotatedGood:
        return 4 * d * d - 4 * d + 1
    if topology is Topology.RotatedBad:
        return 4 * d * d - 3
    if topology is Topology.Unrotated:
        return 8 * d * d - 8 * d + 1
    return 4 * d * d
