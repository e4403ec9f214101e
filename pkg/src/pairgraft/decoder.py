"""Matching decoder with per-syndrome re-weighting, plus exact oracles.

``decode`` is the reference matcher: Dijkstra distances between defects
(and to the virtual boundary), then an exact blossom perfect matching on the
derived complete graph.  ``decode_exact`` sums fault-set probabilities per
logical class for small syndromes.  ``fault_distance`` searches for the
smallest undetectable logical fault combination.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, Sequence

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .dem_builder import DecodingGraph, Detector, Fault

_SCALE = 10**6  # matching objective is solved on integer-scaled weights


class InvalidSyndrome(ValueError):
    pass


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Syndrome:
    triggered: frozenset[int]

    @classmethod
    def of(cls, dets: Iterable[int]) -> "Syndrome":
        return cls(frozenset(dets))


@dataclass
class MatchResult:
    matched_edges: list[int]
    predicted_logical: int
    total_weight: float


def _as_set(syndrome: "Syndrome | Iterable[int]") -> frozenset[int]:
    if isinstance(syndrome, Syndrome):
        return syndrome.triggered
    return frozenset(syndrome)


class Matcher:
    """Reusable reference matcher for one graph.

    The shared graph is never mutated; rule effects live in a per-call
    weight overlay.
    """

    def __init__(self, graph: DecodingGraph, rules: bool = True):
        self.graph = graph
        self.rules = graph.rules_by_trigger() if rules else {}
        self.adj = graph.adjacency()
        self.base = [e.weight for e in graph.edges]
        self.boundary = graph.num_detectors
        self.has_boundary = any(e.v is None for e in graph.edges)
        self.dangling: dict[int, list[int]] = {}
        for e in graph.edges:
            if e.v is None:
                self.dangling.setdefault(e.u, []).append(e.id)

    def _dijkstra(
        self, src: int, targets: set[int], w: Sequence[float]
    ) -> tuple[dict[int, float], dict[int, tuple[int, int]]]:
        dist = {src: 0.0}
        pred: dict[int, tuple[int, int]] = {}
        heap = [(0.0, src)]
        left = set(targets) - {src}
        done: set[int] = set()
        while heap and left:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            left.discard(u)
            if u == self.boundary and u != src:
                continue  # paths never pass through the boundary
            for v, eid in self.adj[u]:
                nd = d + w[eid]
                old = dist.get(v)
                if old is None or nd < old or (nd == old and eid < pred.get(v, (0, eid))[1]):
                    if v in done:
                        continue
                    dist[v] = nd
                    pred[v] = (u, eid)
                    heapq.heappush(heap, (nd, v))
        return dist, pred

    @staticmethod
    def _path(pred: dict[int, tuple[int, int]], src: int, dst: int) -> list[int]:
        out = []
        v = dst
        while v != src:
            u, eid = pred[v]
            out.append(eid)
            v = u
        return out

    def decode(self, syndrome: "Syndrome | Iterable[int]") -> MatchResult:
        trig = _as_set(syndrome)
        n = self.graph.num_detectors
        if any(not 0 <= t < n for t in trig):
            raise InvalidSyndrome("syndrome names a detector outside the graph")
        w = self.base
        absorbed: list[int] = []
        active = [j for j in sorted(trig) if j in self.rules]
        if active:
            w = list(w)
            for j in active:
                for eid in self.rules[j]:
                    w[eid] = 0.0
            for j in active:
                if self.dangling.get(j):
                    absorbed.append(min(self.dangling[j], key=lambda e: (w[e], e)))
        defects = sorted(trig - {self.graph.edges[e].u for e in absorbed})
        matched = list(absorbed)
        if defects:
            matched += self._match(defects, w)
        logical = 0
        total = 0.0
        for eid in matched:
            logical ^= self.graph.edges[eid].logical_mask
            total += w[eid]
        return MatchResult(matched, logical, total)

    def _match(self, defects: list[int], w: Sequence[float]) -> list[int]:
        targets = set(defects) | ({self.boundary} if self.has_boundary else set())
        trees = {a: self._dijkstra(a, targets, w) for a in defects}
        g = nx.Graph()
        big = 0
        pair_w: dict[tuple, int] = {}
        for a, b in combinations(defects, 2):
            d = trees[a][0].get(b)
            if d is not None:
                pair_w[(a, b)] = round(d * _SCALE)
        if self.has_boundary:
            for a in defects:
                d = trees[a][0].get(self.boundary)
                if d is not None:
                    pair_w[(a, ("B", a))] = round(d * _SCALE)
            for a, b in combinations(defects, 2):
                pair_w[(("B", a), ("B", b))] = 0
        if pair_w:
            big = max(pair_w.values()) + 1
        for (a, b), x in pair_w.items():
            g.add_edge(a, b, weight=big - x)
        mate = nx.max_weight_matching(g, maxcardinality=True)
        covered = {v for e in mate for v in e}
        if any(a not in covered for a in defects):
            raise InvalidSyndrome("no perfect matching: odd defect count without a boundary or a disconnected defect")
        edges: list[int] = []
        for u, v in sorted(mate, key=repr):
            if isinstance(u, tuple) and isinstance(v, tuple):
                continue
            a, b = (v, u) if isinstance(u, tuple) else (u, v)
            if isinstance(b, tuple):
                edges += self._path(trees[a][1], a, self.boundary)
            else:
                a, b = min(a, b), max(a, b)
                edges += self._path(trees[a][1], a, b)
        return edges


def decode(graph: DecodingGraph, syndrome: "Syndrome | Iterable[int]", rules: bool = True) -> MatchResult:
    """Minimum-weight matching of the syndrome after applying re-weighting rules."""
    return Matcher(graph, rules).decode(syndrome)


def syndrome_parity_ok(graph: DecodingGraph, syndrome: "Syndrome | Iterable[int]", result: MatchResult) -> bool:
    """XOR of matched-edge endpoints equals the syndrome."""
    acc: set[int] = set()
    for eid in result.matched_edges:
        e = graph.edges[eid]
        acc ^= {e.u}
        if e.v is not None:
            acc ^= {e.v}
    return acc == set(_as_set(syndrome))


# -- exact oracles ---------------------------------------------------------------


def _syn_int(dets: Iterable[int]) -> int:
    v = 0
    for d in dets:
        v |= 1 << d
    return v


def _pick(weights: dict[int, float]) -> int:
    """Lowest-weight class; ties within 1e-9 go to the smallest mask."""
    best = min(weights.values())
    return min(lm for lm, w in weights.items() if w <= best + 1e-9 * max(1.0, abs(best)))


def _odds(p: float) -> float:
    return p / (1 - p)


class ExactDecoder:
    """Most probable fault set (or class) by enumerating small fault sets.

    Faults with identical (syndrome, logical) effect are merged first.  With
    at most ``EXHAUSTIVE`` merged faults every subset is visited; otherwise
    consistent sets of up to ``min size + slack`` merged faults are visited
    (never more than four).  ``mode="set"`` scores a class by its single
    most probable set, ``mode="sum"`` by the total probability of its sets.
    """

    EXHAUSTIVE = 20

    def __init__(self, faults: Sequence[Fault], max_weight: int = 4, slack: int = 1, mode: str = "set"):
        if mode not in ("set", "sum"):
            raise ValueError("mode must be 'set' or 'sum'")
        merged: dict[tuple[int, int], float] = {}
        for f in faults:
            key = (_syn_int(f.syndrome), f.logical_mask)
            if key == (0, 0):
                continue
            q = merged.get(key, 0.0)
            merged[key] = q * (1 - f.probability) + f.probability * (1 - q)
        self.classes = sorted(merged)
        self.odds = [_odds(merged[k]) for k in self.classes]
        self.max_weight = max_weight
        self.slack = slack
        self.mode = mode
        self.support = 0
        self.singles: dict[int, list[int]] = {}
        for i, (s, _) in enumerate(self.classes):
            self.support |= s
            self.singles.setdefault(s, []).append(i)
        self._pairs: dict[int, list[tuple[int, int]]] | None = None

    @property
    def pairs(self) -> dict[int, list[tuple[int, int]]]:
        if self._pairs is None:
            out: dict[int, list[tuple[int, int]]] = {}
            cls = self.classes
            for i in range(len(cls)):
                si = cls[i][0]
                for j in range(i + 1, len(cls)):
                    out.setdefault(si ^ cls[j][0], []).append((i, j))
            self._pairs = out
        return self._pairs

    def _sets(self, target: int, k: int) -> Iterator[tuple[int, ...]]:
        cls = self.classes
        if k == 0:
            if target == 0:
                yield ()
        elif k == 1:
            for i in self.singles.get(target, ()):
                yield (i,)
        elif k == 2:
            for i, (s, _) in enumerate(cls):
                for j in self.singles.get(target ^ s, ()):
                    if j > i:
                        yield (i, j)
        elif k == 3:
            pairs = self.pairs
            for i, (s, _) in enumerate(cls):
                for a, b in pairs.get(target ^ s, ()):
                    if a > i:
                        yield (i, a, b)
        elif k == 4:
            pairs = self.pairs
            for x, lst in pairs.items():
                other = pairs.get(target ^ x)
                if not other:
                    continue
                for a, b in lst:
                    for c, d in other:
                        if b < c:
                            yield (a, b, c, d)
        else:
            raise InstanceTooLarge(f"enumeration beyond weight 4 (asked {k})")

    def class_scores(self, syndrome: "Syndrome | Iterable[int]") -> dict[int, float]:
        """Relative probability of each logical class (odds products)."""
        target = _syn_int(_as_set(syndrome))
        if target & ~self.support:
            raise InvalidSyndrome("syndrome touches detectors no fault can flip")
        totals: dict[int, float] = {}
        if len(self.classes) <= self.EXHAUSTIVE:
            for k in range(len(self.classes) + 1):
                for subset in combinations(range(len(self.classes)), k):
                    self._add(totals, subset, target)
            if not totals:
                raise InvalidSyndrome("no fault set reproduces the syndrome")
            return totals
        first = None
        for k in range(self.max_weight + 1):
            if first is not None and k > first + self.slack:
                break
            for subset in self._sets(target, k):
                self._add(totals, subset, None)
                if first is None:
                    first = k
        if first is None:
            raise InstanceTooLarge(f"no consistent fault set of weight <= {self.max_weight}")
        return totals

    def _add(self, totals: dict[int, float], subset: tuple[int, ...], target: int | None) -> None:
        s = lm = 0
        odds = 1.0
        for i in subset:
            s ^= self.classes[i][0]
            lm ^= self.classes[i][1]
            odds *= self.odds[i]
        if target is not None and s != target:
            return
        if self.mode == "sum":
            totals[lm] = totals.get(lm, 0.0) + odds
        else:
            totals[lm] = max(totals.get(lm, 0.0), odds)

    def decode(self, syndrome: "Syndrome | Iterable[int]") -> int:
        scores = self.class_scores(syndrome)
        return _pick({lm: -math.log(v) for lm, v in scores.items() if v > 0})


class GraphOracle:
    """Most probable fault set per logical class for faults flipping <= 2 detectors.

    Works on the class-lifted graph whose vertices are (detector, logical
    mask so far); all shortest distances come from scipy, and defects are
    paired by exhaustive recursion rather than by a matching algorithm.
    Logical cycles not attached to any defect are added through a closure
    over classes.
    """

    MAX_DEFECTS = 14

    def __init__(self, faults: Sequence[Fault], num_detectors: int):
        if any(len(f.syndrome) > 2 for f in faults):
            raise InstanceTooLarge("faults flipping more than two detectors are not graph-like")
        self.n = num_detectors
        self.boundary = num_detectors
        nobs = max((f.logical_mask.bit_length() for f in faults), default=0)
        self.nclass = 1 << nobs
        # equal-effect faults merge into one with the odd-parity probability
        merged: dict[tuple[int, int, int], float] = {}
        for f in faults:
            if not f.syndrome:
                key = (-1, -1, f.logical_mask)
            else:
                u = f.syndrome[0]
                v = f.syndrome[1] if len(f.syndrome) == 2 else self.boundary
                key = (min(u, v), max(u, v), f.logical_mask)
            q = merged.get(key, 0.0)
            merged[key] = q * (1 - f.probability) + f.probability * (1 - q)
        best: dict[tuple[int, int, int], float] = {}
        self.free = {0: 0.0}  # syndrome-free logical faults
        for key, p in merged.items():
            w = math.log(1 / _odds(p))
            if key[0] >= 0:
                best[key] = w
            elif key[2]:
                self.free[key[2]] = w
        rows, cols, vals = [], [], []
        size = (self.n + 1) * self.nclass
        for (u, v, lm), w in best.items():
            for c in range(self.nclass):
                rows.append(u * self.nclass + c)
                cols.append(v * self.nclass + (c ^ lm))
                vals.append(w)
        # Explicit zeros would count as edges; weights are positive for p < 1/2.
        self.matrix = csr_matrix((vals, (rows, cols)), shape=(size, size))
        self._cycles: list[float] | None = None

    def _dist(self, sources: list[int]) -> np.ndarray:
        idx = [v * self.nclass for v in sources]
        return shortest_path(self.matrix, method="D", directed=False, indices=idx)

    def _closure(self, base: dict[int, float]) -> list[float]:
        out = [math.inf] * self.nclass
        out[0] = 0.0
        changed = True
        while changed:
            changed = False
            for c in range(self.nclass):
                if out[c] == math.inf:
                    continue
                for lm, w in base.items():
                    if out[c] + w < out[c ^ lm] - 1e-12:
                        out[c ^ lm] = out[c] + w
                        changed = True
        return out

    @property
    def cycles(self) -> list[float]:
        """Cheapest defect-free fault set realizing each logical class."""
        if self._cycles is None:
            base = {lm: w for lm, w in self.free.items() if lm}
            dist = self._dist(list(range(self.n + 1)))
            for v in range(self.n + 1):
                for c in range(1, self.nclass):
                    w = dist[v, v * self.nclass + c]
                    if w < base.get(c, math.inf):
                        base[c] = float(w)
            self._cycles = self._closure(base)
        return self._cycles

    def class_weights(self, syndrome: "Syndrome | Iterable[int]") -> dict[int, float]:
        """Minimum total weight (negative log odds) of a consistent set, per class."""
        defects = sorted(_as_set(syndrome))
        if len(defects) > self.MAX_DEFECTS:
            raise InstanceTooLarge(f"more than {self.MAX_DEFECTS} defects")
        if any(not 0 <= d < self.n for d in defects):
            raise InvalidSyndrome("syndrome names an unknown detector")
        nc = self.nclass
        dist = self._dist(defects + [self.boundary]) if defects else None
        pos = {d: i for i, d in enumerate(defects)}

        def pair(a: int, b: int) -> list[float]:
            row = dist[pos[a]]
            return [float(row[b * nc + c]) for c in range(nc)]

        memo: dict[tuple[int, ...], list[float]] = {}

        def solve(rest: tuple[int, ...]) -> list[float]:
            if not rest:
                return [0.0] + [math.inf] * (nc - 1)
            if rest in memo:
                return memo[rest]
            a = rest[0]
            out = [math.inf] * nc
            options = [(pair(a, b), rest[1:i] + rest[i + 1:]) for i, b in enumerate(rest) if i > 0]
            options.append((pair(a, self.boundary), rest[1:]))
            for link, tail in options:
                sub = solve(tail)
                for c1, w1 in enumerate(link):
                    if w1 == math.inf:
                        continue
                    for c2, w2 in enumerate(sub):
                        if w1 + w2 < out[c1 ^ c2]:
                            out[c1 ^ c2] = w1 + w2
            memo[rest] = out
            return out

        paths = solve(tuple(defects))
        loops = self.cycles
        final = {}
        for c in range(nc):
            w = min(paths[c1] + loops[c ^ c1] for c1 in range(nc))
            if w < math.inf:
                final[c] = w
        if not final:
            raise InvalidSyndrome("no fault set reproduces the syndrome")
        return final

    def decode(self, syndrome: "Syndrome | Iterable[int]") -> int:
        return _pick(self.class_weights(syndrome))


def graph_faults(graph: DecodingGraph) -> list[Fault]:
    """The decoding graph's edges as independent primitive faults."""
    out = []
    for e in graph.edges:
        syn = (e.u,) if e.v is None else (min(e.u, e.v), max(e.u, e.v))
        out.append(Fault(e.id, (-1, (), -1), e.probability, syn, e.logical_mask, "edge"))
    return out


def decode_exact(
    faults: Sequence[Fault], detectors: Sequence[Detector], syndrome: "Syndrome | Iterable[int]"
) -> int:
    """Logical mask of the most probable fault set consistent with ``syndrome``.

    Graph-like fault lists (each fault flips at most two detectors) are
    solved exactly; others by bounded enumeration.  Ties go to the smallest
    mask.
    """
    trig = _as_set(syndrome)
    if any(not 0 <= t < len(detectors) for t in trig):
        raise InvalidSyndrome("syndrome names an unknown detector")
    if all(len(f.syndrome) <= 2 for f in faults):
        return GraphOracle(faults, len(detectors)).decode(trig)
    return ExactDecoder(faults).decode(trig)


# -- fault distance --------------------------------------------------------------


def fault_distance(faults: Sequence[Fault], max_k: int = 3) -> int | None:
    """Smallest k <= max_k such that k faults flip a logical silently, else None."""
    if max_k > 3:
        raise InstanceTooLarge("brute force limited to k <= 3")
    effects: dict[int, set[int]] = {}
    for f in faults:
        effects.setdefault(_syn_int(f.syndrome), set()).add(f.logical_mask)
    if any(lm for lm in effects.get(0, ())):
        return 1
    if max_k < 2:
        return None
    if any(len(lms) > 1 for lms in effects.values()):
        return 2
    if max_k < 3:
        return None
    # Each syndrome now carries one logical mask.
    single = {s: next(iter(lms)) for s, lms in effects.items() if s}
    items = sorted(single.items())
    for i, (s1, l1) in enumerate(items):
        for s2, l2 in items[i + 1:]:
            l3 = single.get(s1 ^ s2)
            if l3 is not None and l3 != l1 ^ l2:
                return 3
    return None

