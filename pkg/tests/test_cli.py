import csv
import json
import os

import numpy as np
import pytest

from qtbias import cli
from qtbias.cli import main, parse_s, run_experiment
from qtbias.config import apply_overrides, config_hash, dump_config, parse_config
from qtbias.errors import ConfigError
from qtbias.report import Bundle, Check, Table, emit_report, render_artifacts


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def files(out):
    return {f: (out / f).read_bytes() for f in sorted(os.listdir(out))}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def checks_of(out):
    return {r["name"]: r for r in read_csv(out / "checks.csv")}


def results_of(out):
    return {r["key"]: r["value"] for r in read_csv(out / "results.csv")}


# ---------------------------------------------------------------------------
# configuration


def test_empty_document_gives_reference_defaults():
    cfg = parse_config("")
    m, e = cfg.model, cfg.estimation
    assert (m.omega, m.gamma, m.dt, m.n_collisions, m.psi0) == (10.0, 1.0, 1.0, 20, "g")
    assert (e.n_traj, e.n_batches, e.seed) == (10_000, 10, 0)
    assert cfg.bias.mode == "none" and cfg.sweep.s_values == [0.5 * k for k in range(11)]
    assert parse_config({}) == cfg == parse_config(b"  ")


@pytest.mark.parametrize("doc, path", [
    ({"bias": {"mode": "explicit", "s": 1.0}}, "bias"),
    ({"bias": {"mode": "global", "b": [1.0] * 20}}, "bias"),
    ({"bias": {"mode": "explicit", "b": [1.0, -1.0]}}, "bias.b"),
    ({"model": {"omgea": 3}}, "model.omgea"),
    ({"model": {"gamma": -1}}, "model.gamma"),
    ({"estimation": {"n_traj": 5, "n_batches": 10}}, "estimation"),
    ({"model": {"psi0": [[1, 0], [1, 0]]}}, "model.psi0"),
    ({"outputs": {"formats": ["xml"]}}, "outputs.formats.0"),
])
def test_schema_violations_name_the_field(doc, path):
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert path in [p for p, _ in err.value.problems]


def test_malformed_documents():
    for doc in ("{", "[1, 2]"):
        with pytest.raises(ConfigError):
            parse_config(doc)


def test_round_trip_and_hash():
    doc = {"experiment": "sweep", "model": {"omega": 5.0, "psi0": "+"},
           "bias": {"mode": "explicit", "s": 2.0, "b": [1.0, -1.0] * 10},
           "sweep": {"s_values": [0, 1, 2]}}
    cfg = parse_config(json.dumps(doc))
    again = parse_config(dump_config(cfg))
    assert again == cfg and dump_config(again) == dump_config(cfg)
    assert config_hash(again) == config_hash(cfg)
    moved = apply_overrides(cfg, {"outputs.directory": "elsewhere"})
    assert config_hash(moved) == config_hash(cfg)
    assert config_hash(apply_overrides(cfg, {"estimation.seed": 1})) != config_hash(cfg)
    assert apply_overrides(cfg, {"model.omega": None}) == cfg


def test_parse_s():
    assert parse_s("0:0.5:5") == [0.5 * k for k in range(11)]
    assert parse_s("0.1:0.1:0.3") == [0.1, 0.2, 0.3]
    assert parse_s("1,2.5") == [1.0, 2.5] and parse_s("3") == [3.0]
    for bad in ("1:0:2", "2:1:1", "1:2", "x"):
        with pytest.raises(Exception):
            parse_s(bad)


# ---------------------------------------------------------------------------
# experiments through the command line


def test_fi_without_decay_reports_zero(tmp_path, capsys):
    code, out = run(tmp_path, "fi", "fi", "--gamma", "0", "--n-traj", "2000")
    assert code == 0
    res = results_of(out)
    assert float(res["fi.mean"]) == 0.0 and float(res["fi.stderr"]) == 0.0
    assert all(c["status"] in ("PASS", "INFO") for c in checks_of(out).values())
    assert checks_of(out)["kraus_completeness"]["status"] == "PASS"
    summary = capsys.readouterr().out
    assert summary.endswith("status: OK\n") and "FAIL" not in summary


def test_global_sweep_has_interior_maximum(tmp_path):
    code, out = run(tmp_path, "sweep", "sweep", "--strategy", "global", "--s", "0:0.5:5")
    assert code == 0
    rows = read_csv(out / "sweep.csv")
    assert [float(r["s"]) for r in rows] == [0.5 * k for k in range(11)]
    means = [float(r["fi_mean"]) for r in rows]
    best = int(np.argmax(means))
    assert 0 < best < len(rows) - 1
    assert results_of(out)["interior_maximum"] == "true"
    assert len(read_csv(out / "patterns.csv")) == 11


def test_enumeration_agrees_with_sampling(tmp_path):
    code, enum_out = run(tmp_path, "enum", "enumerate", "--n", "8")
    assert code == 0
    exact = float(results_of(enum_out)["fi"])
    assert checks_of(enum_out)["probability_mass"]["status"] == "PASS"
    fi_vs_n = read_csv(enum_out / "fi_vs_n.csv")
    assert [int(r["n"]) for r in fi_vs_n] == list(range(1, 9))
    assert float(fi_vs_n[-1]["fi"]) == exact

    code, fi_out = run(tmp_path, "fi", "fi", "--n", "8", "--n-traj", "100000")
    assert code == 0
    res = results_of(fi_out)
    assert float(res["fi_exact"]) == exact
    check = checks_of(fi_out)["enumeration_agreement"]
    assert check["status"] == "PASS"
    assert abs(float(res["fi.mean"]) - exact) <= 3 * float(res["fi.stderr"])


@pytest.mark.parametrize("argv", [
    ["fi", "--n", "10", "--n-traj", "5000", "--seed", "7"],
    ["bias-global", "--n", "10", "--s", "2", "--n-traj", "3000"],
    ["bias-local", "--n", "10", "--s", "1", "--n-traj", "3000", "--format", "json"],
    ["sweep", "--n", "8", "--s", "0,1,2", "--n-traj", "3000", "--strategy", "local"],
    ["sse", "--n-traj", "500", "--t-final", "0.2", "--dt-int", "1e-3"],
])
def test_reruns_are_byte_identical_across_threads(tmp_path, argv):
    _, a = run(tmp_path, "a", *argv, "--threads", "1")
    _, b = run(tmp_path, "b", *argv, "--threads", "1")
    _, c = run(tmp_path, "c", *argv, "--threads", "3")
    assert files(a) == files(b) == files(c)


def test_every_artifact_carries_header(tmp_path):
    for fmt in ("csv", "json"):
        code, out = run(tmp_path, fmt, "bias-global", "--n", "8", "--s", "1", "--n-traj", "2000",
                        "--seed", "12345", "--format", fmt)
        assert code == 0
        names = set(os.listdir(out))
        assert {"config.json", "summary.txt", f"results.{fmt}", f"checks.{fmt}",
                f"trajectories.{fmt}", f"histogram.{fmt}", f"convergence.{fmt}",
                f"pattern.{fmt}"} <= names
        for name in names:
            text = (out / name).read_text()
            assert "12345" in text, name
            if name.endswith(".csv"):
                head = text.splitlines()[:3]
                assert head[0] == "# experiment=bias-global" and head[2] == "# seed=12345"
                assert head[1].startswith("# config_hash=")
            elif name != "config.json" and name.endswith(".json"):
                assert json.loads(text)["header"]["seed"] == 12345
            assert "/root" not in text and str(tmp_path) not in text


def test_threads_environment_fallback(tmp_path, monkeypatch):
    argv = ["fi", "--n", "6", "--n-traj", "5000"]
    _, a = run(tmp_path, "a", *argv)
    monkeypatch.setenv("QTBIAS_THREADS", "4")
    _, b = run(tmp_path, "b", *argv)
    assert files(a) == files(b)
    monkeypatch.setenv("QTBIAS_THREADS", "many")
    code, _ = run(tmp_path, "c", *argv)
    assert code == 2


def test_config_file_with_flag_override(tmp_path):
    doc = {"model": {"n_collisions": 4, "omega": 3.0},
           "bias": {"mode": "explicit", "s": 1.0, "b": [1, -1, 1, -1]},
           "estimation": {"n_traj": 1000, "seed": 3}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    code, out = run(tmp_path, "out", "enumerate", "--config", str(path), "--omega", "2")
    assert code == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["model"]["omega"] == 2.0 and cfg["bias"]["b"] == [1, -1, 1, -1]
    assert results_of(out)["b"] == "1.0 -1.0 1.0 -1.0"


def test_module_error_exits_with_json(tmp_path, capsys):
    doc = {"model": {"omega": 0.0, "gamma": float(np.pi ** 2 / 4), "n_collisions": 2},
           "bias": {"mode": "explicit", "s": 40.0, "b": [1.0, 1.0]}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    code, out = run(tmp_path, "out", "fi", "--config", str(path))
    assert code == 2
    payload = json.loads(capsys.readouterr().out)
    assert payload["error"] == "DegenerateScheduleError" and payload["step"] == 2
    assert json.loads((out / "error.json").read_text()) == payload


def test_config_error_exits_with_json(tmp_path, capsys):
    code, _ = run(tmp_path, "out", "fi", "--n-batches", "1")
    assert code == 2
    payload = json.loads(capsys.readouterr().out)
    assert payload["error"] == "ConfigError"
    assert "estimation.n_batches" in json.dumps(payload)
    code, _ = run(tmp_path, "out2", "collapse")
    assert code == 2
    assert "collapse.input" in capsys.readouterr().out


def test_failed_check_sets_exit_status(tmp_path, monkeypatch, capsys):
    def broken(cfg, threads):
        return {"x": 1.0}, {}, [Check("kraus_completeness", "FAIL", 3.5e-9, "limit 1e-12")]
    monkeypatch.setitem(cli.RUNNERS, "fi", broken)
    code, out = run(tmp_path, "out", "fi")
    assert code == 1
    summary = capsys.readouterr().out
    assert "FAIL kraus_completeness value=3.5e-09" in summary
    assert summary.endswith("status: FAILED (1 check(s))\n")
    assert (out / "summary.txt").read_text() == summary


def test_limit_check_and_sse(tmp_path):
    code, out = run(tmp_path, "lim", "limit-check")
    assert code == 0
    rows = read_csv(out / "limit.csv")
    assert [float(r["dt"]) for r in rows] == [1e-2, 5e-3, 2.5e-3]
    assert all(0.4 <= float(r["ratio"]) <= 0.6 for r in rows[1:])
    code, out = run(tmp_path, "sse", "sse", "--n-traj", "2000", "--t-final", "0.5")
    assert code == 0
    assert checks_of(out)["sse_vs_lme_population"]["status"] == "PASS"
    trace = read_csv(out / "trace.csv")
    assert float(trace[0]["t"]) == 0.0 and float(trace[-1]["t"]) == pytest.approx(0.5)


def test_collapse_command(tmp_path):
    h = np.linspace(1, 3, 30)
    lines = ["L,h,A"] + [f"{size!r},{x!r},{float(x ** 1.5 * (x / size ** 0.8) * np.exp(-x / size ** 0.8))!r}"
                         for size in (1.0, 1.25, 1.5, 2.0) for x in h.tolist()]
    data = tmp_path / "data.csv"
    data.write_text("\n".join(lines) + "\n")
    code, out = run(tmp_path, "out", "collapse", "--input", str(data), "--format", "json")
    assert code == 0
    res = json.loads((out / "results.json").read_text())["results"]
    assert set(res) >= {"a", "b", "m_value", "excluded_points", "evaluations"}
    assert abs(res["a"] - 1.5) <= 0.05 and abs(res["b"] - 0.8) <= 0.05
    assert str(tmp_path) not in (out / "config.json").read_text().replace(str(data), "")


# ---------------------------------------------------------------------------
# report rendering


def _bundle(checks):
    return Bundle("fi", {"k": 1}, "abc", 9, {"fi": {"mean": np.float64(0.1)}, "b": [1.0, -1.0]},
                  {"t": Table(("x", "y"), [(np.int64(1), 0.1 + 0.2)])}, checks)


def test_summary_is_deterministic_and_lists_checks():
    b = _bundle([Check("kraus_completeness", "FAIL", 2e-9, "limit 1e-12"),
                 Check("note", "INFO", None, "hello")])
    text = emit_report(b)
    assert text == emit_report(_bundle(list(b.checks)))
    assert "  FAIL kraus_completeness value=2e-09 (limit 1e-12)" in text
    assert "  INFO note (hello)" in text and "fi.mean = 0.1" in text
    files = render_artifacts(b, ["csv", "json"])
    assert "1,0.30000000000000004" in files["t.csv"]
    assert json.loads(files["t.json"])["rows"] == [[1, 0.30000000000000004]]


def test_incomplete_bundle_rejected():
    with pytest.raises(ValueError):
        emit_report(_bundle([]))
    with pytest.raises(ValueError):
        Check("x", "MAYBE")


def test_run_experiment_returns_bundle_without_writing(tmp_path):
    cfg = parse_config({"experiment": "enumerate", "model": {"n_collisions": 3},
                        "outputs": {"directory": str(tmp_path / "never")}})
    bundle = run_experiment(cfg)
    assert bundle.results["fi"] > 0 and not bundle.failed
    assert not (tmp_path / "never").exists()


def test_version(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0 and "qtbias" in capsys.readouterr().out
