"""Command-line interface.

Every command reads a ``RunConfig``: built-in defaults, then an optional
``--config`` file, then explicit flags, each overriding the previous one.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .circuit_gen import Schedule, generate, isolated_circuit, label_qubits, parse_text, to_text
from .dead_components import (
    DeadSet,
    apply_dead,
    code_distance,
    interleaved_counts,
    parse_dead,
    superplaquettes,
)
from .decoder import InvalidSyndrome, Matcher, decode_exact, graph_faults
from .geometry import Layout, Topology, build_layout
from .montecarlo import (
    CSV_HEADER,
    THREADS_ENV,
    FORMULAS,
    build_experiment,
    default_grid,
    fit_scaling,
    resources,
    scan,
    summary_json,
)
from .stabilizer_engine import pauli_from_terms, run_symbolic, same_group

EXIT_CHECK = 1
EXIT_INVARIANT = 3

# Expected ISG of the isolated Z 4-gon after each local step, as generator names.
ISOLATED_Z_ISG: tuple[tuple[str, ...], ...] = (
    ("XA",),
    ("Z1 ZA", "ZB", "XC"),
    ("XA XB", "ZC Z2", "Z1 ZA ZB"),
    ("Z3 ZA", "XB XC", "Z1 ZA ZB ZC Z2"),
    ("XA", "ZB", "ZC Z4", "Z1 ZB ZC Z2 Z3"),
    ("XC", "XA", "ZB", "Z1 Z2 Z3 Z4"),
)


@dataclass
class RunConfig:
    topology: str = "rotated-good"
    schedule: str = "standard4"
    sizes: list[int] = field(default_factory=lambda: [3])
    rounds: str = "d"  # an integer, or "d" for as many rounds as the distance
    ps: list[float] = field(default_factory=default_grid)
    shots: int = 10_000
    seed: int = 0
    idle_noise: bool = False
    rules: bool = True
    option: int = 2
    basis: str = ""
    dead: str = ""
    out: str = ""
    csv: str = ""
    json: str = ""
    threads: int = 0

    def validate(self) -> None:
        topo = Topology.parse(self.topology)
        Schedule.parse(self.schedule)
        if not self.sizes:
            raise ValueError("no sizes given")
        for d in self.sizes:
            if topo is Topology.Torus and (d < 4 or d % 2):
                raise ValueError(f"torus size must be even and >= 4, got {d}")
            if topo is not Topology.Torus and (d < 3 or d % 2 == 0):
                raise ValueError(f"patch distance must be odd and >= 3, got {d}")
        if self.rounds != "d" and not (self.rounds.isdigit() and int(self.rounds) >= 1):
            raise ValueError(f"rounds must be a positive integer or 'd', got {self.rounds!r}")
        if self.shots < 1:
            raise ValueError("shots must be positive")
        if not self.ps or any(not 0 < p < 0.5 for p in self.ps):
            raise ValueError("every p must lie in (0, 0.5)")
        if self.option not in (1, 2, 3, 4):
            raise ValueError("pipeline option must be 1, 2, 3 or 4")
        if self.basis not in ("", "X", "Z", "both"):
            raise ValueError("basis must be X, Z or both")
        if self.threads < 0:
            raise ValueError("threads must be >= 0")

    def rounds_for(self, d: int) -> int:
        return d if self.rounds == "d" else int(self.rounds)

    def worker_count(self) -> int | None:
        cap = os.environ.get(THREADS_ENV)
        want = self.threads or None
        if cap and want:
            return min(want, max(1, int(cap)))
        return want

    def dead_set(self) -> DeadSet:
        return parse_dead(Path(self.dead).read_text()) if self.dead else DeadSet()

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["run"] = {f.name: _format(getattr(self, f.name)) for f in fields(self)}
        lines = ["[run]"] + [f"{k} = {v}" for k, v in cp["run"].items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        if not cp.has_section("run"):
            raise ValueError("config file needs a [run] section")
        cfg = base or cls()
        known = {f.name: f for f in fields(cls)}
        updates = {}
        for key, raw in cp["run"].items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            updates[key] = _coerce(key, raw)
        return replace(cfg, **updates)


def _format(value) -> str:
    if isinstance(value, list):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key == "sizes":
        return [int(x) for x in raw.split(",") if x.strip()]
    if key == "ps":
        return [float(x) for x in raw.split(",") if x.strip()]
    if key in ("shots", "seed", "option", "threads"):
        return int(raw)
    if key in ("idle_noise", "rules"):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key} must be a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    return raw


# -- argument handling ------------------------------------------------------------------


def _csv_list(kind):
    def parse(text: str):
        return [kind(x) for x in text.split(",") if x.strip()]

    return parse


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="plain-text config file with a [run] section")
    p.add_argument("--topology")
    p.add_argument("--schedule")
    p.add_argument("--d", dest="sizes", type=_csv_list(int), help="distance or comma-separated list")
    p.add_argument("--rounds", help="integer, or 'd'")
    p.add_argument("--option", type=int, help="pipelining option of the hook-preventing schedule")
    p.add_argument("--basis", help="memory basis: X, Z or both")
    p.add_argument("--dead", help="dead-component file (DATA/AUX/CONN lines)")
    p.add_argument("--out", help="output file (default stdout)")


def _sampling(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p", dest="ps", type=_csv_list(float), help="comma-separated error rates")
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--idle-noise", dest="idle_noise", action="store_const", const=True)
    p.add_argument("--no-rules", dest="rules", action="store_const", const=False)
    p.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairgraft", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="write a circuit in the text format", allow_abbrev=False)
    _common(b)
    b.add_argument("--from", dest="source", help="rebuild from the header of an existing circuit file")
    b.add_argument("--verify-isg", action="store_true", help="replay the isolated-plaquette ISG check")

    d = sub.add_parser("detectors", help="list detectors and logical observables", allow_abbrev=False)
    _common(d)

    dp = sub.add_parser("dead-plan", help="fragments, superplaquettes and layer counts", allow_abbrev=False)
    _common(dp)
    dp.add_argument("--distance", action="store_true", help="also search code distances (small layouts)")

    one = sub.add_parser("decode-one", help="decode a single syndrome", allow_abbrev=False)
    _common(one)
    _sampling(one)
    one.add_argument("--syndrome", required=True, type=_csv_list(int), help="lit detector ids")
    one.add_argument("--exact", action="store_true", help="also run the exact oracle")

    s = sub.add_parser("scan", help="threshold scan to CSV and JSON", allow_abbrev=False)
    _common(s)
    _sampling(s)
    s.add_argument("--csv", help="CSV output (default stdout)")
    s.add_argument("--json", help="JSON summary output")

    r = sub.add_parser("resources", help="fault distance and footprint tables", allow_abbrev=False)
    r.add_argument("--config")
    r.add_argument("--code", choices=sorted(FORMULAS), default="ours")
    r.add_argument("--d-f", dest="d_f", type=int, help="formula-only mode for this fault distance")
    r.add_argument("--from-csv", dest="from_csv", help="scan CSV to fit")
    r.add_argument("--p", dest="ps", type=_csv_list(float))
    r.add_argument("--target", type=_csv_list(float), default=[1e-8, 1e-12, 1e-15])
    r.add_argument("--min-failures", dest="min_failures", type=int, default=100)
    r.add_argument("--out")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_text(Path(args.config).read_text(), cfg)
    updates = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            updates[f.name] = v
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def _emit(text: str, path: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _layout(cfg: RunConfig, d: int) -> Layout:
    layout = build_layout(cfg.topology, d)
    dead = cfg.dead_set()
    return apply_dead(layout, dead) if dead else layout


# -- commands ----------------------------------------------------------------------------


def isg_report(ptype: str = "Z") -> tuple[bool, list[str]]:
    """Replay the isolated 4-gon and compare each step's ISG with the expected one."""
    circuit = isolated_circuit(ptype)
    names = label_qubits(circuit.layout.plaquettes[0], circuit.schedule)
    swap = {"X": "Z", "Z": "X"}
    run = run_symbolic(circuit, snapshot_steps=True)
    ok = True
    lines = []
    for k, (expected, snap) in enumerate(zip(ISOLATED_Z_ISG, run.snapshots)):
        want = []
        for gen in expected:
            terms = [(names[t[1:]], t[0] if ptype == "Z" else swap[t[0]]) for t in gen.split()]
            want.append(pauli_from_terms(terms))
        got = [(x, z) for x, z, _, _ in snap]
        match = same_group(want, got, circuit.num_qubits)
        ok &= match
        shown = ", ".join(gen if ptype == "Z" else _swap_text(gen) for gen in expected)
        lines.append(f"{k}{ptype}: <{shown}> {'ok' if match else 'MISMATCH'}")
    return ok and len(run.snapshots) == len(ISOLATED_Z_ISG), lines


def _swap_text(gen: str) -> str:
    return " ".join({"X": "Z", "Z": "X"}[t[0]] + t[1:] for t in gen.split())


def build_text(cfg: RunConfig) -> str:
    d = cfg.sizes[0]
    layout = _layout(cfg, d)
    circuit = generate(layout, cfg.schedule, cfg.rounds_for(d), cfg.option)
    return to_text(circuit, cfg.dead_set().lines())


def config_from_circuit(text: str, base: RunConfig | None = None) -> tuple[RunConfig, DeadSet]:
    """Recover the build settings recorded in a circuit file's header."""
    _, header, dead_lines = parse_text(text)
    if "TOPOLOGY" not in header:
        raise ValueError("circuit file has no TOPOLOGY header")
    sched, _, opt = header["SCHEDULE"].partition(":")
    cfg = replace(
        base or RunConfig(),
        topology=header["TOPOLOGY"],
        sizes=[int(header["D"])],
        schedule=sched,
        rounds=header["ROUNDS"],
        option=int(opt) if opt else 1,
    )
    return cfg, parse_dead("\n".join(dead_lines))


def _layout_with_dead(cfg: RunConfig, dead: DeadSet) -> Layout:
    layout = build_layout(cfg.topology, cfg.sizes[0])
    return apply_dead(layout, dead) if dead else layout


def cmd_build(args: argparse.Namespace) -> int:
    status = 0
    if args.verify_isg:
        ok, lines = isg_report("Z")
        print("\n".join(lines))
        status = 0 if ok else EXIT_CHECK
    if args.source:
        cfg, dead = config_from_circuit(Path(args.source).read_text())
        args_out = args.out or ""
        layout = _layout_with_dead(cfg, dead)
        d = cfg.sizes[0]
        text = to_text(generate(layout, cfg.schedule, cfg.rounds_for(d), cfg.option), dead.lines())
        _emit(text, args_out)
        return status
    cfg = resolve_config(args)
    if args.verify_isg and not cfg.out:
        return status
    _emit(build_text(cfg), cfg.out)
    return status


def cmd_detectors(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    d = cfg.sizes[0]
    exp = build_experiment(cfg.topology, d, cfg.schedule, cfg.rounds_for(d), cfg.idle_noise, cfg.basis or None, cfg.option, _layout(cfg, d))
    lines = []
    for det in exp.model.detectors:
        meas = " ".join(map(str, sorted(det.measurements)))
        lines.append(f"DET {det.id} {det.kind} round={det.round} plaquettes={','.join(map(str, sorted(det.plaquettes)))} : {meas}")
    for k, obs in enumerate(exp.model.observables):
        lines.append(f"OBS {k} {obs.label} : {' '.join(map(str, sorted(obs.measurements)))}")
    _emit("\n".join(lines) + "\n", cfg.out)
    return 0


def cmd_dead_plan(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg.dead:
        raise ValueError("dead-plan needs --dead")
    d = cfg.sizes[0]
    before = build_layout(cfg.topology, d)
    dead = cfg.dead_set()
    after = apply_dead(before, dead)
    r = cfg.rounds_for(d)
    report = superplaquettes(after, dead, r)
    lines = [f"# {len(before.plaquettes)} plaquettes -> {len(after.plaquettes)} fragments, {before.num_qubits} -> {after.num_qubits} qubits"]
    original = {p.id: p.labels for p in before.plaquettes}
    for p in after.plaquettes:
        if p.labels != original[p.parent]:
            lines.append(f"FRAGMENT {p.id} {p.pauli_type} cell={p.cell} labels={','.join(map(str, p.labels))} parent={p.parent} shape={p.shape.value}")
    for g in report.damaged():
        lines.append(f"GROUP {g.pauli_type} members={','.join(map(str, g.members))} support={' '.join(f'{a},{b}' for a, b in g.boundary)}")
    for region, l in sorted(report.layers.items(), key=lambda kv: min(kv[0])):
        if len(region) > 1:
            z, x = interleaved_counts(r, l)
            lines.append(f"REGION {','.join(map(str, sorted(region)))} l={l} pipelined={r},{r} interleaved={z},{x}")
    lines.append(f"LOGICALS {' '.join(s.label for s in after.logical_observables)}")
    if args.distance:
        for t in ("Z", "X"):
            lines.append(f"DISTANCE {t} {code_distance(after, t)}")
    _emit("\n".join(lines) + "\n", cfg.out)
    return 0


def cmd_decode_one(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    d = cfg.sizes[0]
    p = cfg.ps[0]
    exp = build_experiment(cfg.topology, d, cfg.schedule, cfg.rounds_for(d), cfg.idle_noise, cfg.basis or None, cfg.option, _layout(cfg, d))
    graph = exp.graph(exp.faults(p), cfg.rules)
    result = Matcher(graph, cfg.rules).decode(args.syndrome)
    out = {
        "syndrome": sorted(args.syndrome),
        "matched_edges": sorted(result.matched_edges),
        "predicted_logical": result.predicted_logical,
        "total_weight": round(result.total_weight, 9),
    }
    if args.exact:
        out["exact_logical"] = decode_exact(graph_faults(graph), exp.model.detectors, args.syndrome)
    _emit(json.dumps(out, sort_keys=True) + "\n", cfg.out)
    return 0


def cmd_scan(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    rounds = None if cfg.rounds == "d" else int(cfg.rounds)
    result = scan(
        cfg.topology, cfg.schedule, cfg.sizes, cfg.ps, cfg.shots, cfg.seed,
        idle_noise=cfg.idle_noise, rounds=rounds, option=cfg.option, rules=cfg.rules,
        threads=cfg.worker_count(),
    )
    for row in result.rows:
        if not 0 <= row.failures <= row.shots or not row.lo95 <= row.median <= row.hi95:
            raise AssertionError(f"inconsistent row {row.csv()}")
    _emit(result.csv_text(), cfg.csv)
    if cfg.json:
        Path(cfg.json).write_text(summary_json(result, extra={"config": cfg.to_text()}))
    return 0


def read_scan_csv(text: str) -> dict[int, list[tuple[float, int, int]]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not a scan CSV")
    data: dict[int, list[tuple[float, int, int]]] = {}
    for ln in lines[1:]:
        _, _, d, p, shots, failures, *_ = ln.split(",")
        data.setdefault(int(d), []).append((float(p), int(failures), int(shots)))
    return data


def cmd_resources(args: argparse.Namespace) -> int:
    lines = []
    if args.d_f is not None:
        res = resources(None, 0.0, 0.0, args.code, args.d_f)
        lines.append("code,d_f,qubits,depth,spacetime")
        lines.append(f"{args.code},{res.d_f},{res.qubits},{res.depth},{res.spacetime}")
    else:
        if not args.from_csv or not args.ps:
            raise ValueError("resources needs --d-f, or --from-csv with --p")
        fit = fit_scaling(read_scan_csv(Path(args.from_csv).read_text()), args.min_failures)
        lines.append("p,target,code,d_f,qubits,depth,spacetime")
        for p in args.ps:
            for t in args.target:
                res = resources(fit, p, t, args.code)
                lines.append(f"{p:g},{t:g},{args.code},{res.d_f},{res.qubits},{res.depth},{res.spacetime}")
    _emit("\n".join(lines) + "\n", args.out or "")
    return 0


COMMANDS = {
    "build": cmd_build,
    "detectors": cmd_detectors,
    "dead-plan": cmd_dead_plan,
    "decode-one": cmd_decode_one,
    "scan": cmd_scan,
    "resources": cmd_resources,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except AssertionError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, InvalidSyndrome, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
