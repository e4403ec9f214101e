"""Sampling, batch decoding, failure statistics, thresholds and resource fits.

Randomness is drawn per chunk of ``CHUNK`` shots from a Philox stream keyed
by (seed, chunk index), so results do not depend on the number of worker
threads.  Batch decoding uses one static PyMatching graph per decoding
graph; re-weighting rules are carried by small gadgets whose nodes a shot
lights when it lights the rule's trigger, which reproduces ``decoder.Matcher``.
"""

from __future__ import annotations

import json
import math
import os
import threading
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np
import pymatching
from scipy import stats

from .circuit_gen import Circuit, memory_circuit
from .dem_builder import DecodingGraph, Edge, Fault, Model, analyze, enumerate_faults, split_and_build
from .geometry import Layout, Topology, build_layout

CHUNK = 2048
THREADS_ENV = "PAIRGRAFT_THREADS"
CSV_HEADER = "topology,schedule,d,p,shots,failures,median,lo95,hi95"


def default_grid(n: int = 12, lo: float = 1e-4, hi: float = 1.5e-2) -> list[float]:
    """Logarithmic grid of physical error rates, rounded to 4 significant digits."""
    return [float(f"{v:.4g}") for v in np.geomspace(lo, hi, n)]


def thread_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


# -- sampling --------------------------------------------------------------------


class FaultSampler:
    """Draws independent fault activations and returns syndromes and true logicals.

    Faults with the same (syndrome, logical) effect are merged: an XOR of
    independent Bernoulli variables with a common effect is itself one
    Bernoulli variable, so the shot distribution is unchanged.
    """

    def __init__(self, faults: Sequence[Fault], num_detectors: int):
        merged: dict[tuple[tuple[int, ...], int], float] = {}
        for f in faults:
            key = (f.syndrome, f.logical_mask)
            q = merged.get(key, 0.0)
            merged[key] = q * (1 - f.probability) + f.probability * (1 - q)
        keys = sorted(k for k in merged if k != ((), 0))
        self.num_detectors = num_detectors
        self.q = np.array([merged[k] for k in keys], dtype=np.float64)
        self.lm = np.array([k[1] for k in keys], dtype=np.uint64)
        lengths = np.array([len(k[0]) for k in keys], dtype=np.int64)
        self.ptr = np.concatenate([[0], np.cumsum(lengths)])
        self.len = lengths
        self.idx = np.array([d for k in keys for d in k[0]], dtype=np.int64)

    def activations(self, shots: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """(class, shot) pairs of every activated fault class."""
        counts = rng.binomial(shots, self.q)
        cls = np.repeat(np.arange(len(self.q)), counts)
        shot = rng.integers(0, shots, size=len(cls))
        # A class fires at most once per shot: redraw repeated (class, shot) pairs.
        while len(cls):
            key = cls * shots + shot
            order = np.argsort(key, kind="stable")
            dup = np.zeros(len(key), dtype=bool)
            dup[order[1:]] = key[order[1:]] == key[order[:-1]]
            if not dup.any():
                break
            shot[dup] = rng.integers(0, shots, size=int(dup.sum()))
        return cls, shot

    def sample(self, shots: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        cls, shot = self.activations(shots, rng)
        dets = np.zeros((shots, self.num_detectors), dtype=np.uint8)
        obs = np.zeros(shots, dtype=np.uint64)
        if len(cls):
            lens = self.len[cls]
            rows = np.repeat(shot, lens)
            starts = np.repeat(self.ptr[cls], lens)
            offs = np.arange(len(rows)) - np.repeat(np.cumsum(lens) - lens, lens)
            cols = self.idx[starts + offs]
            np.bitwise_xor.at(dets, (rows, cols), 1)
            np.bitwise_xor.at(obs, shot, self.lm[cls])
        return dets, obs


# -- batch decoding -----------------------------------------------------------------


def _ids(mask: int, nobs: int) -> set[int]:
    return {k for k in range(nobs) if (mask >> k) & 1}


class BatchDecoder:
    """PyMatching over the decoding graph plus the re-weighting overlay.

    Parallel edges keep the lightest (then lowest id) representative.  Each
    rule edge e = (x, w) also gets a gadget x -p- -q- w with weights w_e/4,
    w_e/2, w_e/4 and e's logical mask on x-p.  With p, q unlit the gadget is
    a parallel copy of e and changes nothing; lighting both turns it into an
    optional zero-cost x-w edge plus the constant w_e/2 (p, q pair either with
    each other or through x and w).  A shot that lights trigger j therefore
    gets j absorbed by its dangling edge and the gadget nodes of j's rule
    edges lit, and one static matcher decodes every shot.
    """

    def __init__(self, graph: DecodingGraph, rules: bool = True):
        self.graph = graph
        self.nobs = nobs = graph.num_observables
        self.rules = graph.rules_by_trigger() if rules else {}
        m = pymatching.Matching()
        kept: dict[tuple[int, int], Edge] = {}
        boundary: dict[int, Edge] = {}
        for e in sorted(graph.edges, key=lambda e: (e.weight, e.id)):
            if e.v is None:
                boundary.setdefault(e.u, e)
            else:
                kept.setdefault((min(e.u, e.v), max(e.u, e.v)), e)
        for (u, v), e in kept.items():
            m.add_edge(u, v, fault_ids=_ids(e.logical_mask, nobs), weight=e.weight)
        for u, e in boundary.items():
            m.add_boundary_edge(u, fault_ids=_ids(e.logical_mask, nobs), weight=e.weight)
        n = graph.num_detectors
        self.triggers = np.array(sorted(self.rules), dtype=np.int64)
        self.gadget: dict[int, np.ndarray] = {}
        self.offset: dict[int, float] = {}
        for j in self.triggers.tolist():
            nodes = []
            off = 0.0
            for eid in self.rules[j]:
                e = graph.edges[eid]
                if e.v is None:
                    raise ValueError("re-weighting rules act on two-detector edges only")
                p, q, w = n, n + 1, e.weight
                n += 2
                m.add_edge(e.u, p, fault_ids=_ids(e.logical_mask, nobs), weight=w / 4)
                m.add_edge(p, q, fault_ids=set(), weight=w / 2)
                m.add_edge(q, e.v, fault_ids=set(), weight=w / 4)
                nodes += [p, q]
                off += w / 2
            self.gadget[j] = np.array(nodes, dtype=np.int64)
            self.offset[j] = off
        self.absorb = {j: boundary[j] for j in self.rules if j in boundary}
        m.ensure_num_fault_ids(nobs)
        self.matching = m
        self.width = max(n, m.num_detectors)

    def _pack(self, pred: np.ndarray) -> np.ndarray:
        out = np.zeros(pred.shape[0], dtype=np.uint64)
        for k in range(self.nobs):
            out |= pred[:, k].astype(np.uint64) << np.uint64(k)
        return out

    def special_rows(self, dets: np.ndarray) -> np.ndarray:
        """Boolean mask of rows lighting at least one rule trigger."""
        if not len(self.triggers):
            return np.zeros(dets.shape[0], dtype=bool)
        return dets[:, self.triggers].any(axis=1)

    def lit_triggers(self, row: np.ndarray) -> tuple[int, ...]:
        return tuple(int(j) for j in self.triggers[row[self.triggers] != 0])

    def augment(self, dets: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(matcher syndrome, absorbed logical masks, weight offsets) per row."""
        n = dets.shape[0]
        num = self.graph.num_detectors
        if dets.shape[1] != num:
            raise ValueError("syndrome width differs from the graph")
        syn = np.zeros((n, self.width), dtype=np.uint8)
        syn[:, :num] = dets
        base = np.zeros(n, dtype=np.uint64)
        offset = np.zeros(n)
        if not len(self.triggers):
            return syn, base, offset
        lit_rows, lit_cols = np.nonzero(dets[:, self.triggers])
        for r, c in zip(lit_rows.tolist(), lit_cols.tolist()):
            j = int(self.triggers[c])
            syn[r, self.gadget[j]] = 1
            offset[r] -= self.offset[j]
            e = self.absorb.get(j)
            if e is not None:
                syn[r, j] = 0
                base[r] ^= np.uint64(e.logical_mask)
                offset[r] += e.weight
        return syn, base, offset

    def decode_batch(self, dets: np.ndarray) -> np.ndarray:
        """Predicted logical masks, one per row of ``dets``."""
        return self._decode(dets, weights=False)[0]

    def _decode(self, dets: np.ndarray, weights: bool) -> tuple[np.ndarray, np.ndarray]:
        syn, base, offset = self.augment(np.asarray(dets, dtype=np.uint8))
        if syn.shape[1] > self.matching.num_detectors and syn[:, self.matching.num_detectors:].any():
            raise ValueError("syndrome lights a detector with no incident edge")
        syn = syn[:, : self.matching.num_detectors]
        if weights:
            pred, w = self.matching.decode_batch(syn, return_weights=True)
            return self._pack(pred) ^ base, np.asarray(w, dtype=float) + offset
        return self._pack(self.matching.decode_batch(syn)) ^ base, offset

    def decode_one(self, det_row: np.ndarray) -> int:
        return self.decode_weighted(det_row)[0]

    def decode_weighted(self, det_row: np.ndarray) -> tuple[int, float]:
        """(predicted logical mask, total matched weight) for one shot."""
        pred, w = self._decode(np.asarray(det_row, dtype=np.uint8)[None, :], weights=True)
        return int(pred[0]), float(w[0])


# -- trials ------------------------------------------------------------------------


@dataclass
class TrialBatch:
    p_physical: float
    shots: int
    failures: int
    failures_per_observable: list[int]
    seed: int

    @property
    def rate(self) -> float:
        return self.failures / self.shots


def chunk_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1), index])))


def sample_and_decode(
    graph: DecodingGraph,
    faults: Sequence[Fault],
    p: float,
    shots: int,
    seed: int,
    rules: bool = True,
    threads: int | None = None,
) -> TrialBatch:
    """Sample ``shots`` noisy runs, decode them, count logical failures."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if shots < 0:
        raise ValueError("shots must be non-negative")
    sampler = FaultSampler(faults, graph.num_detectors)
    nobs = graph.num_observables
    local = threading.local()

    def run(index: int) -> np.ndarray:
        dec = getattr(local, "decoder", None)
        if dec is None:
            dec = local.decoder = BatchDecoder(graph, rules)
        n = min(CHUNK, shots - index * CHUNK)
        dets, truth = sampler.sample(n, chunk_rng(seed, index))
        diff = dec.decode_batch(dets) ^ truth
        return np.array([int(((diff >> np.uint64(k)) & np.uint64(1)).sum()) for k in range(nobs)] + [int((diff != 0).sum())])

    chunks = range((shots + CHUNK - 1) // CHUNK)
    workers = min(thread_count(threads), max(1, len(chunks)))
    if workers == 1:
        results = [run(i) for i in chunks]
    else:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, chunks))
    counts = sum(results, np.zeros(nobs + 1, dtype=np.int64))
    return TrialBatch(p, shots, int(counts[nobs]), [int(c) for c in counts[:nobs]], seed)


def inject_single(graph: DecodingGraph, fault: Fault, rules: bool = True) -> bool:
    """Decode the syndrome of one forced fault; True when the decoder fails."""
    dec = BatchDecoder(graph, rules)
    row = np.zeros(graph.num_detectors, dtype=np.uint8)
    row[list(fault.syndrome)] = 1
    return dec.decode_one(row) != fault.logical_mask


# -- statistics ----------------------------------------------------------------------


def credible_interval(failures: int, shots: int) -> tuple[float, float, float]:
    """Median and 95% interval of the Beta(failures+1, shots-failures+1) posterior.

    The interval is central, except that at 0 or ``shots`` failures it is
    one-sided and reaches the boundary (0 or 1) with 95% mass.
    """
    if shots < 1 or not 0 <= failures <= shots:
        raise ValueError("need shots >= 1 and 0 <= failures <= shots")
    post = stats.beta(failures + 1, shots - failures + 1)
    median = float(post.median())
    if failures == shots:
        return median, float(post.ppf(0.05)), 1.0
    if failures == 0:
        return median, 0.0, float(post.ppf(0.95))
    return median, float(post.ppf(0.025)), float(post.ppf(0.975))


class NoCrossing(ValueError):
    pass


def _loglog(curve: Iterable[tuple[float, float]]) -> tuple[np.ndarray, np.ndarray]:
    pts = sorted((p, pl) for p, pl in curve if p > 0 and pl > 0)
    if len(pts) < 2:
        raise NoCrossing("need at least two positive points per curve")
    arr = np.log(np.array(pts))
    return arr[:, 0], arr[:, 1]


def _crossing(x: np.ndarray, diff: np.ndarray) -> float:
    """Highest point where ``diff`` turns from negative to non-negative.

    Scanning down from the largest p keeps sampling noise in the sparse
    low-p tail from producing a spurious early crossing.
    """
    for i in range(len(x) - 1, 0, -1):
        a, b = diff[i - 1], diff[i]
        if b >= 0 > a:
            if b == 0:
                return float(math.exp(x[i]))
            t = a / (a - b)
            return float(math.exp(x[i - 1] + t * (x[i] - x[i - 1])))
    raise NoCrossing("curves do not cross inside the sampled range")


def threshold(curves: Mapping[int, Iterable[tuple[float, float]]]) -> float:
    """Crossing of the two largest sizes, linear interpolation in log-log space."""
    if len(curves) < 2:
        raise NoCrossing("need at least two sizes")
    big, second = sorted(curves)[-1], sorted(curves)[-2]
    xa, ya = _loglog(curves[big])
    xb, yb = _loglog(curves[second])
    lo, hi = max(xa[0], xb[0]), min(xa[-1], xb[-1])
    if lo >= hi:
        raise NoCrossing("curves share no p range")
    x = np.unique(np.concatenate([xa, xb]))
    x = x[(x >= lo) & (x <= hi)]
    return _crossing(x, np.interp(x, xa, ya) - np.interp(x, xb, yb))


def pseudo_threshold(curve: Iterable[tuple[float, float]]) -> float:
    """Physical rate where p_logical = p_physical, interpolated in log-log space."""
    x, y = _loglog(curve)
    return _crossing(x, y - x)


def loglog_slope(curve: Iterable[tuple[float, float]], lo: float, hi: float) -> float:
    """Least-squares slope of log p_logical against log p over [lo, hi]."""
    pts = [(p, pl) for p, pl in curve if lo * (1 - 1e-9) <= p <= hi * (1 + 1e-9) and pl > 0]
    if len(pts) < 2:
        raise ValueError("need two points in the window")
    arr = np.log(np.array(pts))
    return float(np.polyfit(arr[:, 0], arr[:, 1], 1)[0])


# -- resource estimates ---------------------------------------------------------------


def qubits_ours(d: int) -> int:
    return 4 * d * d - 4 * d + 1


def depth_ours(d: int) -> int:
    return 4 * d


def qubits_488(d: int) -> int:
    return 4 * d * d + 8 * (d - 1)


def depth_488(d: int) -> int:
    return 6 * math.ceil(d / 2)


FORMULAS: dict[str, tuple[Callable[[int], int], Callable[[int], int]]] = {
    "ours": (qubits_ours, depth_ours),
    "4.8.8": (qubits_488, depth_488),
}


@dataclass
class FitResult:
    """Per-size reference points and the scaling exponent attached to each size."""

    refs: dict[int, tuple[float, float]]
    exponents: dict[int, float] = field(default_factory=dict)

    def extrapolate(self, d_f: int, p: float) -> float:
        p_ref, pl_ref = self.refs[d_f]
        return pl_ref * (p / p_ref) ** self.exponents.get(d_f, (d_f + 1) / 2)

    def alpha_beta(self, p: float) -> tuple[float, float]:
        sizes = sorted(d for d in self.refs if d > 3)
        if len(sizes) < 2:
            raise ValueError("fit window needs at least two sizes with d_f > 3")
        x = np.array(sizes, dtype=float)
        y = np.log([self.extrapolate(d, p) for d in sizes])
        slope, icpt = np.polyfit(x, y, 1)
        return float(math.exp(icpt)), float(-slope)

    def predict(self, p: float, d_f: float) -> float:
        a, b = self.alpha_beta(p)
        return a * math.exp(-b * d_f)


def choose_reference(points: Iterable[tuple[float, int, int]], min_failures: int = 100) -> tuple[float, float]:
    """Lowest p with at least ``min_failures`` failures; returns (p, posterior median)."""
    ok = sorted((p, k, n) for p, k, n in points if k >= min_failures)
    if not ok:
        raise ValueError(f"no point with >= {min_failures} failures")
    p, k, n = ok[0]
    return p, credible_interval(k, n)[0]


def fit_scaling(data: Mapping[int, Iterable[tuple[float, int, int]]], min_failures: int = 100) -> FitResult:
    """Reference points per fault distance from (p, failures, shots) data."""
    refs = {}
    for d_f, pts in data.items():
        try:
            refs[d_f] = choose_reference(pts, min_failures)
        except ValueError:
            continue
    return FitResult(refs, {d: (d + 1) / 2 for d in refs})


@dataclass
class Resources:
    d_f: int
    qubits: int
    depth: int
    spacetime: int


def required_distance(fit: FitResult, p: float, p_target: float, d_max: int = 201) -> int:
    a, b = fit.alpha_beta(p)
    if b <= 0:
        raise ValueError("fitted beta is not positive; p is above threshold for this fit")
    for d in range(3, d_max + 1, 2):
        if a * math.exp(-b * d) <= p_target:
            return d
    raise ValueError("target not reached below d_max")


def resources(fit: FitResult | None, p: float, p_target: float, code: str = "ours", d_f: int | None = None) -> Resources:
    """Smallest odd d_f meeting ``p_target`` and its qubit/depth footprint.

    With ``d_f`` given the fit is skipped (formula-only mode).
    """
    if d_f is None:
        if fit is None:
            raise ValueError("need a fit or an explicit d_f")
        d_f = required_distance(fit, p, p_target)
    nq, dep = FORMULAS[code]
    q, t = nq(d_f), dep(d_f)
    return Resources(d_f, q, t, q * t)


# -- experiments and scans ---------------------------------------------------------


@dataclass
class Experiment:
    """A memory circuit with its detectors; faults and graphs are made per p."""

    topology: str
    schedule: str
    d: int
    rounds: int
    circuit: Circuit
    model: Model
    idle_noise: bool = False

    def faults(self, p: float) -> list[Fault]:
        return enumerate_faults(self.circuit, p, self.idle_noise, self.model.detectors, self.model.observables)

    def graph(self, faults: Sequence[Fault], rules: bool = True) -> DecodingGraph:
        return split_and_build(faults, self.model.detectors, len(self.model.observables), rules)


def default_basis(topology: "Topology | str") -> str:
    return "both" if Topology.parse(topology) is Topology.Torus else "Z"


def build_experiment(
    topology: "Topology | str",
    d: int,
    schedule: str = "standard4",
    rounds: int | None = None,
    idle_noise: bool = False,
    basis: str | None = None,
    option: int = 2,
    layout: Layout | None = None,
) -> Experiment:
    """Memory experiment with ``rounds`` noisy rounds (default d)."""
    topo = Topology.parse(topology)
    layout = layout if layout is not None else build_layout(topo, d)
    r = d if rounds is None else rounds
    circuit = memory_circuit(layout, schedule, r, basis or default_basis(topo), option)
    return Experiment(topo.value, circuit.schedule_name(), d, r, circuit, analyze(circuit), idle_noise)


@dataclass
class ScanRow:
    topology: str
    schedule: str
    d: int
    p: float
    shots: int
    failures: int
    median: float
    lo95: float
    hi95: float

    def csv(self) -> str:
        return (
            f"{self.topology},{self.schedule},{self.d},{self.p:.6g},{self.shots},{self.failures},"
            f"{self.median:.6e},{self.lo95:.6e},{self.hi95:.6e}"
        )


@dataclass
class ScanResult:
    rows: list[ScanRow]
    threshold: float | None
    pseudo_thresholds: dict[int, float | None]

    def curves(self, min_failures: int = 0) -> dict[int, list[tuple[float, float]]]:
        out: dict[int, list[tuple[float, float]]] = {}
        for r in self.rows:
            if r.failures >= min_failures:
                out.setdefault(r.d, []).append((r.p, r.median))
        return out

    def points(self) -> dict[int, list[tuple[float, int, int]]]:
        out: dict[int, list[tuple[float, int, int]]] = {}
        for r in self.rows:
            out.setdefault(r.d, []).append((r.p, r.failures, r.shots))
        return out

    def csv_text(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv() for r in self.rows]) + "\n"

    def summary(self) -> dict:
        return {
            "threshold": self.threshold,
            "pseudo_thresholds": {str(k): v for k, v in sorted(self.pseudo_thresholds.items())},
        }


def point_seed(seed: int, d: int, index: int) -> int:
    return int(np.random.SeedSequence([seed & (2**64 - 1), d, index]).generate_state(1, np.uint64)[0])


def scan(
    topology: str,
    schedule: str,
    sizes: Sequence[int],
    ps: Sequence[float],
    shots: int,
    seed: int,
    idle_noise: bool = False,
    rounds: int | None = None,
    option: int = 2,
    rules: bool = True,
    threads: int | None = None,
    progress: Callable[[ScanRow], None] | None = None,
) -> ScanResult:
    """Sample every (size, p) point and locate threshold and pseudo-thresholds."""
    rows = []
    for d in sizes:
        exp = build_experiment(topology, d, schedule, rounds, idle_noise, option=option)
        for i, p in enumerate(ps):
            faults = exp.faults(p)
            graph = exp.graph(faults, rules)
            batch = sample_and_decode(graph, faults, p, shots, point_seed(seed, d, i), rules, threads)
            med, lo, hi = credible_interval(batch.failures, shots)
            row = ScanRow(exp.topology, exp.schedule, d, p, shots, batch.failures, med, lo, hi)
            rows.append(row)
            if progress is not None:
                progress(row)
    res = ScanResult(rows, None, {})
    # zero-failure points carry only the prior and would tie every size
    curves = res.curves(min_failures=1)
    try:
        res.threshold = threshold(curves)
    except NoCrossing:
        res.threshold = None
    for d, c in curves.items():
        try:
            res.pseudo_thresholds[d] = pseudo_threshold(c)
        except NoCrossing:
            res.pseudo_thresholds[d] = None
    return res


def summary_json(result: ScanResult, fit: FitResult | None = None, extra: Mapping | None = None) -> str:
    out = result.summary()
    if fit is not None:
        out["references"] = {str(k): list(v) for k, v in sorted(fit.refs.items())}
    if extra:
        out.update(extra)
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def resources_table(fit: FitResult, ps: Sequence[float], targets: Sequence[float]) -> list[dict]:
    rows = []
    for p in ps:
        for t in targets:
            ours = resources(fit, p, t)
            rows.append({"p": p, "target": t, **{f"ours_{k}": v for k, v in asdict(ours).items()}})
    return rows
