"""Instantaneous stabilizer group tracking for measurement-only circuits.

Pauli operators are pairs of Python integers ``(x, z)`` used as bit vectors
over qubit indices.  A generator's sign is an ``OutcomeExpr``: the eigenvalue
is ``(-1) ** (constant XOR parity of the random outcomes in random_bits)``.
Tracking signs symbolically lets one pass over a circuit decide which
outcomes are deterministic and which parity of earlier outcomes they equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

if TYPE_CHECKING:
    from .circuit_gen import Circuit

PauliTerm = tuple[int, str]  # (qubit index, basis letter)


def popcount(v: int) -> int:
    return v.bit_count()


def iter_bits(v: int) -> Iterator[int]:
    while v:
        low = v & -v
        yield low.bit_length() - 1
        v ^= low


def pauli_from_terms(terms: Iterable[PauliTerm]) -> tuple[int, int]:
    x = z = 0
    for q, b in terms:
        if q < 0:
            raise ValueError(f"negative qubit index {q}")
        bit = 1 << q
        if (x | z) & bit:
            raise ValueError(f"qubit {q} appears twice in a Pauli product")
        if b == "X":
            x |= bit
        elif b == "Z":
            z |= bit
        elif b == "Y":
            x |= bit
            z |= bit
        else:
            raise ValueError(f"unknown basis {b!r}")
    return x, z


def pauli_to_terms(x: int, z: int) -> list[PauliTerm]:
    out = []
    for q in sorted(set(iter_bits(x)) | set(iter_bits(z))):
        bx, bz = (x >> q) & 1, (z >> q) & 1
        out.append((q, "Y" if bx and bz else ("X" if bx else "Z")))
    return out


def anticommutes(x1: int, z1: int, x2: int, z2: int) -> bool:
    return popcount((x1 & z2) ^ (z1 & x2)) & 1 == 1


def product_sign(x1: int, z1: int, x2: int, z2: int) -> int:
    """Sign bit of the product of two commuting Hermitian Pauli strings.

    With Y = iXZ each canonical string is i^{|x&z|} X^x Z^z, which gives the
    phase exponent below; for commuting inputs it is even.
    """
    e = popcount(x1 & z1) + popcount(x2 & z2) + 2 * popcount(z1 & x2)
    e -= popcount((x1 ^ x2) & (z1 ^ z2))
    e %= 4
    if e & 1:
        raise ValueError("product of anticommuting Paulis is not Hermitian")
    return e >> 1


@dataclass(frozen=True)
class OutcomeExpr:
    constant: int
    mask: int  # bit k set <=> random outcome of measurement k enters the parity

    @property
    def random_bits(self) -> frozenset[int]:
        return frozenset(iter_bits(self.mask))

    def evaluate(self, random_outcomes: Sequence[int]) -> int:
        v = self.constant
        for k in iter_bits(self.mask):
            v ^= random_outcomes[k]
        return v


def _mul(row: list[int], x: int, z: int, c: int, m: int, p: int) -> None:
    """Multiply a generator record in place by another commuting record."""
    row[2] ^= c ^ product_sign(row[0], row[1], x, z)
    row[3] ^= m
    row[4] ^= p
    row[0] ^= x
    row[1] ^= z


class Tableau:
    """Generators of an abelian Pauli group in reduced row-echelon form.

    Each generator owns a pivot bit of the vector ``x | z << n`` that no other
    generator contains, so membership tests only touch the rows named by the
    bits of the queried operator.
    """

    def __init__(self, num_qubits: int):
        self.num_qubits = num_qubits
        # pivot -> [x, z, constant, random-bit mask, provenance mask]
        self.rows: dict[int, list[int]] = {}
        self.last_provenance = 0

    def copy(self) -> "Tableau":
        t = Tableau(self.num_qubits)
        t.rows = {k: list(v) for k, v in self.rows.items()}
        return t

    @property
    def generators(self) -> list[tuple[int, int, int, int]]:
        """(x, z, constant, random-bit mask) per generator, by pivot."""
        return [tuple(self.rows[k][:4]) for k in sorted(self.rows)]  # type: ignore[misc]

    def _vec(self, x: int, z: int) -> int:
        return x | (z << self.num_qubits)

    def reduce(self, x: int, z: int) -> tuple[int, int, int, int, int]:
        """Multiply (x, z) by the generators sharing its pivot bits.

        Returns the residual operator and the sign record of the product of
        the generators used (including the phase of reordering).
        """
        v = self._vec(x, z)
        rx, rz, c, m, p = x, z, 0, 0, 0
        for b in iter_bits(v):
            row = self.rows.get(b)
            if row is None:
                continue
            gx, gz, gc, gm, gp = row
            c ^= gc ^ product_sign(rx, rz, gx, gz)
            m ^= gm
            p ^= gp
            rx ^= gx
            rz ^= gz
        return rx, rz, c, m, p

    def contains(self, x: int, z: int) -> bool:
        rx, rz = self.reduce(x, z)[:2]
        return rx == 0 and rz == 0

    def _insert(self, x: int, z: int, c: int, m: int, p: int) -> None:
        """Insert an operator that commutes with every generator and is new."""
        v = self._vec(x, z)
        for b in iter_bits(v):
            row = self.rows.get(b)
            if row is None:
                continue
            gx, gz, gc, gm, gp = row
            c ^= gc ^ product_sign(x, z, gx, gz)
            m ^= gm
            p ^= gp
            x ^= gx
            z ^= gz
        v = self._vec(x, z)
        if v == 0:
            raise ValueError("operator already in the group")
        pivot = v.bit_length() - 1
        for row in self.rows.values():
            if (self._vec(row[0], row[1]) >> pivot) & 1:
                _mul(row, x, z, c, m, p)
        self.rows[pivot] = [x, z, c, m, p]

    def measure(self, x: int, z: int, fresh: int) -> tuple[OutcomeExpr, bool, tuple[int, int] | None]:
        """Measure the Hermitian Pauli (x, z).

        ``fresh`` names the random bit allocated if the outcome is random.
        Returns (outcome, deterministic, replaced generator or None).  After
        the call ``last_provenance`` holds the measurements whose outcomes
        multiply to the sign of the group element that fixed a deterministic
        outcome.
        """
        anti = [k for k, row in self.rows.items() if anticommutes(row[0], row[1], x, z)]
        if not anti:
            rx, rz, c, m, p = self.reduce(x, z)
            if rx == 0 and rz == 0:
                self.last_provenance = p
                self._refresh(x, z, p ^ (1 << fresh))
                return OutcomeExpr(c, m), True, None
        replaced = None
        if anti:
            anti.sort()
            k0 = anti[0]
            g0 = self.rows.pop(k0)
            replaced = (g0[0], g0[1])
            for k in anti[1:]:
                _mul(self.rows[k], *g0)
        bit = 1 << fresh
        self._insert(x, z, 0, bit, bit)
        self.last_provenance = bit
        return OutcomeExpr(0, bit), False, replaced

    def _refresh(self, x: int, z: int, delta: int) -> None:
        """Re-attribute the sign of the measured element to the newest outcome.

        One generator used in the product absorbs the change, so later
        deterministic outcomes refer back to the latest repetition.
        """
        used = [b for b in iter_bits(self._vec(x, z)) if b in self.rows]
        if used:
            self.rows[max(used)][4] ^= delta

    def check(self) -> None:
        """Assert commutation and independence of the generators."""
        gens = list(self.rows.items())
        for i, (ki, a) in enumerate(gens):
            for kj, b in gens[i + 1:]:
                if anticommutes(a[0], a[1], b[0], b[1]):
                    raise AssertionError("generators anticommute")
                if (self._vec(b[0], b[1]) >> ki) & 1 or (self._vec(a[0], a[1]) >> kj) & 1:
                    raise AssertionError("pivot shared between generators")


def apply_measurement(tableau: Tableau, pauli: Iterable[PauliTerm], fresh: int = 0) -> tuple[Tableau, OutcomeExpr]:
    """Measure a Pauli product given as (qubit, basis) terms; updates in place."""
    x, z = pauli_from_terms(pauli)
    if (x | z) >> tableau.num_qubits:
        raise ValueError("Pauli acts outside the tableau")
    expr, _, _ = tableau.measure(x, z, fresh)
    return tableau, expr


def group_rank(ops: Iterable[tuple[int, int]], n: int) -> int:
    basis: dict[int, int] = {}
    for x, z in ops:
        v = x | (z << n)
        while v:
            top = v.bit_length() - 1
            if top not in basis:
                basis[top] = v
                break
            v ^= basis[top]
    return len(basis)


def same_group(a: Iterable[tuple[int, int]], b: Iterable[tuple[int, int]], n: int) -> bool:
    """Equality of the GF(2) spans of two operator lists, signs ignored."""
    a, b = list(a), list(b)
    ra, rb = group_rank(a, n), group_rank(b, n)
    return ra == rb == group_rank(a + b, n)


@dataclass
class SymbolicRun:
    """Outcome of running a circuit through the tracker."""

    outcomes: list[OutcomeExpr]
    deterministic: list[bool]
    replaced: list[tuple[int, int] | None]
    operators: list[tuple[int, int]]
    steps: list[int]
    provenance: list[int] = field(default_factory=list)
    snapshots: list[list[tuple[int, int, int, int]]] = field(default_factory=list)


def run_symbolic(circuit: "Circuit", snapshot_steps: bool = False, verify: bool = False) -> SymbolicRun:
    tab = Tableau(circuit.num_qubits)
    run = SymbolicRun([], [], [], [], [])
    for step in circuit.steps:
        for ins in step:
            if ins.meas_index is None:
                continue
            x, z = pauli_from_terms(ins.targets)
            expr, det, rep = tab.measure(x, z, ins.meas_index)
            run.outcomes.append(expr)
            run.deterministic.append(det)
            run.replaced.append(rep)
            run.operators.append((x, z))
            run.steps.append(ins.step)
            run.provenance.append(tab.last_provenance)
        if verify:
            tab.check()
        if snapshot_steps:
            run.snapshots.append(tab.generators)
    return run


@dataclass(frozen=True)
class PauliFault:
    """Pauli errors applied right after step ``step`` plus optional readout flip."""

    step: int
    errors: tuple[PauliTerm, ...] = ()
    readout: int | None = None


def propagate_fault(circuit: "Circuit", fault: PauliFault) -> frozenset[int]:
    """Measurement indices whose outcomes flip because of ``fault``.

    In a measurement-only circuit a Pauli error is never transformed, it only
    flips every later measurement it anticommutes with.
    """
    ex, ez = pauli_from_terms(fault.errors) if fault.errors else (0, 0)
    flips: set[int] = set()
    if fault.readout is not None:
        flips.add(fault.readout)
    if ex | ez:
        for step in circuit.steps[fault.step + 1:]:
            for ins in step:
                if ins.meas_index is None:
                    continue
                x, z = pauli_from_terms(ins.targets)
                if anticommutes(x, z, ex, ez):
                    flips ^= {ins.meas_index}
    return frozenset(flips)
