import json

import pytest

from pairgraft.circuit_gen import generate, parse_text, to_text
from pairgraft.cli import RunConfig, main, read_scan_csv
from pairgraft.dead_components import DeadSet, apply_dead
from pairgraft.geometry import build_layout
from pairgraft.montecarlo import build_experiment


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_build_step_count(capsys):
    code, out, _ = _run(capsys, "build", "--topology", "rotated-good", "--d", "3", "--schedule", "standard4", "--rounds", "3")
    assert code == 0
    assert sum(line.startswith("STEP ") for line in out.splitlines()) == 16


def test_build_verify_isg_prints_six_steps(capsys):
    code, out, _ = _run(capsys, "build", "--verify-isg")
    lines = out.splitlines()
    assert code == 0 and len(lines) == 6
    assert lines[0].startswith("0Z: <XA>") and all(line.endswith("ok") for line in lines)
    assert "Z1 Z2 Z3 Z4" in lines[5]


def test_build_round_trip_is_byte_identical(tmp_path, capsys):
    first = tmp_path / "c.txt"
    again = tmp_path / "c2.txt"
    assert main(["build", "--topology", "torus", "--d", "4", "--schedule", "hook-preventing7", "--option", "3", "--rounds", "2", "--out", str(first)]) == 0
    assert main(["build", "--from", str(first), "--out", str(again)]) == 0
    assert first.read_bytes() == again.read_bytes()


def test_build_with_dead_components(tmp_path, capsys):
    dead = tmp_path / "dead.txt"
    dead.write_text("AUX 3,3\nDATA 6,6\n")
    out = tmp_path / "c.txt"
    assert main(["build", "--d", "5", "--rounds", "2", "--dead", str(dead), "--out", str(out)]) == 0
    text = out.read_text()
    dead_set = DeadSet.of(data=[(6, 6)], aux=[(3, 3)])
    after = apply_dead(build_layout("rotated-good", 5), dead_set)
    assert text == to_text(generate(after, "standard4", 2), dead_set.lines())
    circuit, _, dead_lines = parse_text(text)
    assert circuit.num_qubits == after.num_qubits
    assert dead_lines == ["DATA 6,6", "AUX 3,3"]
    again = tmp_path / "c2.txt"
    assert main(["build", "--from", str(out), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_dead_plan_reports_fragments_and_layers(tmp_path, capsys):
    dead = tmp_path / "dead.txt"
    dead.write_text("DATA 4,4\n")
    code, out, _ = _run(capsys, "dead-plan", "--d", "5", "--rounds", "4", "--dead", str(dead), "--distance")
    assert code == 0
    lines = out.splitlines()
    assert sum(ln.startswith("FRAGMENT ") for ln in lines) == 4
    region = [ln for ln in lines if ln.startswith("REGION ")]
    assert len(region) == 1 and "l=3" in region[0] and "pipelined=4,4" in region[0] and "interleaved=4,3" in region[0]
    assert "DISTANCE Z 4" in lines and "DISTANCE X 4" in lines


def test_dead_plan_needs_dead_file(capsys):
    code, _, err = _run(capsys, "dead-plan", "--d", "3")
    assert code == 2 and "dead" in err


def test_detectors_lists_every_detector(capsys):
    code, out, _ = _run(capsys, "detectors", "--d", "3", "--rounds", "2")
    assert code == 0
    dets = [ln for ln in out.splitlines() if ln.startswith("DET ")]
    obs = [ln for ln in out.splitlines() if ln.startswith("OBS ")]
    assert dets and len(obs) == 1
    assert [int(ln.split()[1]) for ln in dets] == list(range(len(dets)))


def test_decode_one_with_exact(capsys):
    exp = build_experiment("rotated-good", 3, rounds=3)
    edge = next(e for e in exp.graph(exp.faults(1e-3)).edges if e.v is not None)
    syn = f"{edge.u},{edge.v}"
    code, out, _ = _run(capsys, "decode-one", "--d", "3", "--rounds", "3", "--p", "0.001", "--syndrome", syn, "--exact")
    assert code == 0
    res = json.loads(out)
    assert res["syndrome"] == sorted([edge.u, edge.v])
    assert res["predicted_logical"] == res["exact_logical"] == edge.logical_mask


def test_decode_one_rejects_unmatchable_syndrome(capsys):
    code, _, err = _run(capsys, "decode-one", "--d", "3", "--rounds", "3", "--p", "0.001", "--syndrome", "10000")
    assert code == 2 and err.startswith("error:")


def test_scan_is_reproducible(tmp_path, capsys):
    args = ["scan", "--d", "3", "--p", "0.002,0.006", "--shots", "3000", "--seed", "4"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    js = tmp_path / "a.json"
    assert main(args + ["--csv", str(a), "--json", str(js), "--threads", "1"]) == 0
    assert main(args + ["--csv", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    summary = json.loads(js.read_text())
    assert "threshold" in summary and "3" in summary["pseudo_thresholds"]
    data = read_scan_csv(a.read_text())
    assert [p for p, _, _ in data[3]] == [0.002, 0.006]


def test_resources_formula_only(capsys):
    code, out, _ = _run(capsys, "resources", "--code", "4.8.8", "--d-f", "7")
    assert code == 0
    assert out.splitlines()[1] == "4.8.8,7,244,24,5856"


def test_resources_from_csv(tmp_path, capsys):
    # power laws with a common crossing at 1.3% give exact reference points
    rows = ["topology,schedule,d,p,shots,failures,median,lo95,hi95"]
    for d in (3, 5, 7):
        for p in (1e-3, 2e-3, 4e-3):
            shots = 10**7
            k = round(shots * (p / 1.3e-2) ** ((d + 1) / 2))
            rows.append(f"rotated-good,standard4,{d},{p},{shots},{k},0,0,0")
    path = tmp_path / "scan.csv"
    path.write_text("\n".join(rows) + "\n")
    code, out, _ = _run(capsys, "resources", "--from-csv", str(path), "--p", "1e-6,1e-5", "--target", "2e-8,1e-12")
    assert code == 0

    def smallest(p, target):
        return next(d for d in range(3, 99, 2) if (p / 1.3e-2) ** ((d + 1) / 2) <= target)

    table = [ln.split(",") for ln in out.splitlines()[1:]]
    want = [(p, t, smallest(p, t)) for p in (1e-6, 1e-5) for t in (2e-8, 1e-12)]
    assert [(float(r[0]), float(r[1]), int(r[3])) for r in table] == want


def test_resources_needs_inputs(capsys):
    code, _, err = _run(capsys, "resources")
    assert code == 2 and "resources needs" in err


def test_config_file_then_flags(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\ntopology = rotated-bad\nsizes = 5\nrounds = 2\n")
    code, out, _ = _run(capsys, "build", "--config", str(cfg), "--d", "3")
    assert code == 0
    head = out.splitlines()[:4]
    assert head == ["TOPOLOGY rotated-bad", "D 3", "SCHEDULE standard4", "ROUNDS 2"]


def test_run_config_text_round_trip():
    cfg = RunConfig(topology="torus", sizes=[4, 6], ps=[1e-3, 2.5e-3], shots=123, idle_noise=True, rounds="3")
    assert RunConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize(
    "text",
    ["[run]\nbogus = 1\n", "[other]\nshots = 1\n", "[run]\nidle_noise = maybe\n"],
)
def test_config_rejects_bad_files(text):
    with pytest.raises(ValueError):
        RunConfig.from_text(text)


@pytest.mark.parametrize(
    "argv",
    [
        ["build", "--d", "4"],
        ["build", "--topology", "torus", "--d", "5"],
        ["build", "--rounds", "zero"],
        ["build", "--schedule", "nonsense"],
        ["build", "--option", "7"],
        ["scan", "--p", "0.7"],
        ["scan", "--shots", "0"],
    ],
)
def test_invalid_configs_exit_nonzero(argv, capsys):
    code, _, err = _run(capsys, *argv)
    assert code == 2 and err.startswith("error:")


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv("PAIRGRAFT_THREADS", "2")
    assert RunConfig(threads=8).worker_count() == 2
    assert RunConfig().worker_count() is None
