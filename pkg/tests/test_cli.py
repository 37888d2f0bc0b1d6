import json
import subprocess
import sys
import time
from collections import defaultdict

import pytest

from agcluster.cli import main
from agcluster.netmodel import spec_to_dict
from agcluster.scenario import example_three_server
from agcluster.timing import REPORT_LABELS, parse_profile_report


def run(*argv):
    return main(list(argv))


def test_fig1_summary(capsys):
    assert run("generate", "--preset", "fig1") == 0
    out = capsys.readouterr().out
    assert out.startswith("states: 7, edges: 10, serialized bytes: ")
    report = "".join(line + "\n" for line in out.splitlines()[1:])
    assert tuple(parse_profile_report(report)) == REPORT_LABELS


def test_edges_export_to_stdout(capsys):
    assert run("generate", "--preset", "fig1", "--workers", "2", "--threshold", "1", "--export", "edges") == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 10
    assert all(len(line.split()) == 3 for line in lines)


def test_dot_db_only_via_web_or_file(tmp_path, capsys):
    out = tmp_path / "g.dot"
    assert run("generate", "--preset", "fig1", "--export", "dot", "--out", str(out)) == 0
    text = out.read_text()
    assert text.startswith("digraph")
    labels, edges = {}, defaultdict(list)
    for line in text.splitlines():
        line = line.strip()
        if "->" in line:
            s, rest = line.split(" -> ")
            edges[s].append(rest.split(" ")[0])
        elif line.startswith("s") and "label=" in line:
            labels[line.split(" ")[0]] = line.split('label="')[1].split('"')[0].split("\\n")
    root = next(line.strip().split(" ")[0] for line in text.splitlines() if "peripheries=2" in line)

    def paths(node, acc):
        if not edges[node]:
            yield acc
        for nxt in edges[node]:
            yield from paths(nxt, acc + [nxt])

    for p in paths(root, [root]):
        for i, n in enumerate(p):
            if "root(db)" in labels[n]:
                before = set().union(*(labels[m] for m in p[: i + 1]))
                assert "root(web)" in before or "root(file)" in before


def test_predict_only_paper150(capsys):
    t0 = time.perf_counter()
    assert run("generate", "--preset", "paper-150", "--predict-only") == 0
    assert time.perf_counter() - t0 < 1.0
    out = capsys.readouterr().out
    assert "predicted states: 5,859,375" in out
    assert "predicted edges: 56,640,625" in out


def test_predict_only_non_tree(capsys):
    assert run("generate", "--preset", "fig1", "--predict-only") == 2


def test_bad_spec_exit_2(tmp_path, capsys):
    doc = spec_to_dict(example_three_server())
    doc["exploits"][0]["post"] = []
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert run("generate", "--spec", str(path)) == 2
    assert "empty postconditions" in capsys.readouterr().err


def test_unknown_preset_and_bad_config(capsys):
    assert run("generate", "--preset", "bogus") == 2
    assert run("generate", "--preset", "fig1", "--workers", "0") == 2
    assert run("generate", "--preset", "fig1", "--deployment", "processes") == 2


def test_capacity_exit_3(capsys):
    assert run("generate", "--preset", "tree:3x2:all", "--max-states", "5") == 3
    assert "rank 0 failed in phase 1" in capsys.readouterr().err


def test_check_oracle_spec_file(tmp_path, capsys):
    path = tmp_path / "fig1.json"
    path.write_text(json.dumps(spec_to_dict(example_three_server())))
    argv = ["generate", "--spec", str(path), "--workers", "2", "--threads", "2", "--threshold", "1"]
    assert run(*argv, "--strategy", "multi", "--check-oracle") == 0
    assert "oracle check: ok" in capsys.readouterr().out


def test_manifest_and_profile(tmp_path, capsys):
    man, prof = tmp_path / "m.json", tmp_path / "p.txt"
    argv = ["generate", "--preset", "tree:3x2:all", "--workers", "2", "--strategy", "pipeline"]
    assert run(*argv, "--manifest", str(man), "--profile", str(prof)) == 0
    m = json.loads(man.read_text())
    assert m["strategy"] == "pipeline"
    assert m["config"]["comm_sz"] == 2
    assert m["spec_source"] == "preset:tree:3x2:all"
    assert m["profile"]["states"] == 125
    assert m["outputs"]["profile"] == str(prof)
    # 26 header + 4 * (125 counts + 725 fact ids) + 8 + 375 * 20
    assert m["graph_size"]["serialized_bytes"] == 10934
    assert m["graph_size"]["in_memory_bytes_estimate"] > 10934
    assert tuple(parse_profile_report(prof.read_text())) == REPORT_LABELS


def test_strategy_none_dumps(tmp_path, capsys):
    argv = ["generate", "--preset", "tree:3x2:all", "--workers", "3", "--threshold", "8"]
    assert run(*argv, "--strategy", "none", "--dump-dir", str(tmp_path), "--check-oracle") == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["partial-r0.agpg", "partial-r1.agpg", "partial-r2.agpg"]


@pytest.mark.parametrize("entry", [["-m", "agcluster"], ["-m", "agcluster.cli"]])
def test_module_entry(entry):
    out = subprocess.run(
        [sys.executable, *entry, "generate", "--preset", "fig1", "--sequential"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert out.returncode == 0
    assert out.stdout.startswith("states: 7, edges: 10")


def test_socket_processes_cli(capsys):
    argv = ["generate", "--preset", "tree:3x2:all", "--workers", "2", "--transport", "socket"]
    assert run(*argv, "--strategy", "hier", "--threshold", "8", "--check-oracle") == 0


def test_no_command(capsys):
    assert run() == 2
