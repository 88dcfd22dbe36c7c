import csv
import json

import pytest

from etconsensus.cli import main

TINY = """\
graph:
  n: 3
  edges: [[1, 2, 1.0], [2, 3, 1.0], [3, 1, 1.0]]
output: saturation(1.0)
x0: [0.5, -0.2, 0.1]
alpha: 1.0
beta: 1.0
horizon: 1.0
"""


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def test_reference_fig2(tmp_path, capsys):
    out = tmp_path / "fig2"
    assert main(["run", "--scenario", "paper_fig2", "--out", str(out)]) == 0
    assert "achieved=True" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdict"]["achieved"] is True
    assert summary["verdict"]["consensus_value"][0] == pytest.approx(0.7345, abs=5e-4)
    assert len(summary["event_counts"]) == 7
    assert summary["lyapunov"]["nonincreasing_after_T1"] is True
    traj = read_rows(out / "trajectory.csv")
    assert traj[0] == ["t"] + [f"x_{i}_1" for i in range(1, 8)]
    events = read_rows(out / "events.csv")
    assert events[0] == ["agent", "k", "t"] and events[1] == ["1", "1", "0"]
    assert len(events) - 1 == sum(summary["event_counts"])
    assert read_rows(out / "lyapunov.csv")[0] == ["t", "V1", "V2", "Wr"]


def test_reference_fig3_completes_without_consensus(tmp_path):
    out = tmp_path / "fig3"
    assert main(["run", "--scenario", "paper_fig3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["verdict"]["achieved"] is False
    assert summary["verdict"]["necessary_condition_holds"] is False


def test_byte_identical_outputs(tmp_path, tiny):
    for name in ("a", "b"):
        assert main(["run", "--scenario", str(tiny), "--out", str(tmp_path / name)]) == 0
    for f in ("trajectory.csv", "events.csv", "lyapunov.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_strong_graph_lyapunov_columns(tmp_path, tiny):
    assert main(["run", "--scenario", str(tiny), "--out", str(tmp_path / "o"), "--stride", "0.1"]) == 0
    rows = read_rows(tmp_path / "o" / "lyapunov.csv")
    assert rows[0] == ["t", "V", "W"] and len(rows) == 12


def test_no_lyapunov_flag(tmp_path, tiny):
    assert main(["run", "--scenario", str(tiny), "--out", str(tmp_path / "o"), "--no-emit-lyapunov"]) == 0
    assert not (tmp_path / "o" / "lyapunov.csv").exists()


def test_deep_condensation_skips_lyapunov(tmp_path):
    path = tmp_path / "chain.yaml"
    path.write_text(TINY.replace("[[1, 2, 1.0], [2, 3, 1.0], [3, 1, 1.0]]", "[[2, 1, 1.0], [3, 2, 1.0]]"))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert any("at most two" in w for w in summary["warnings"])
    assert not (tmp_path / "o" / "lyapunov.csv").exists()


def test_graph_without_spanning_tree(tmp_path):
    path = tmp_path / "split.yaml"
    path.write_text(TINY.replace("[[1, 2, 1.0], [2, 3, 1.0], [3, 1, 1.0]]", "[[1, 3, 1.0], [2, 3, 1.0]]"))
    with pytest.warns(RuntimeWarning):
        assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["verdict"] is None


def test_sweep(tmp_path, tiny):
    out = tmp_path / "sw"
    code = main(["run", "--scenario", str(tiny), "--out", str(out), "--sweep", "alpha=0.5,2", "beta=1"])
    assert code == 0
    rows = read_rows(out / "sweep.csv")
    assert rows[0][:3] == ["alpha", "beta", "total_events"]
    assert [r[:2] for r in rows[1:]] == [["0.5", "1.0"], ["2.0", "1.0"]]
    assert (out / "sweep" / "alpha=0.5_beta=1" / "events.csv").exists()


def test_bad_sweep_spec(tmp_path, tiny):
    assert main(["run", "--scenario", str(tiny), "--out", str(tmp_path), "--sweep", "gamma=1"]) == 2


def test_invalid_alpha_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(TINY.replace("alpha: 1.0", "alpha: 0"))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "field 'alpha', line 6" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "absent.yaml")]) == 2


def test_event_budget_exit_code(tmp_path):
    code = main(["run", "--scenario", "paper_fig2", "--out", str(tmp_path / "o"),
                 "--threshold-floor", "0", "--max-events", "200"])
    assert code == 3


def test_generate_then_run(tmp_path, capsys):
    path = tmp_path / "g.yaml"
    assert main(["generate", "--n", "4", "--seed", "2", "--connectivity", "spanning-tree", "-o", str(path)]) == 0
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o"), "--horizon", "0.5"]) == 0
    assert (tmp_path / "o" / "summary.json").exists()


def test_generate_stdout(capsys):
    assert main(["generate", "--n", "2", "--seed", "1"]) == 0
    assert "edges" in capsys.readouterr().out


def test_list(capsys):
    assert main(["list"]) == 0
    assert capsys.readouterr().out.split() == ["paper_fig2", "paper_fig3"]
