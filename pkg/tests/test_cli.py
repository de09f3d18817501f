# tests/test_cli.py
import orjson
import pytest
from typer.testing import CliRunner

from src import cli
from src.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, BackendKind, ConfigError, app, build_run_config, read_ndjson
from src.settings import settings

runner = CliRunner()

EXACT = ["--epsilon", "0", "--p-fail", "0", "--no-timestamps"]


def _invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


# ---------- configuration ----------
def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("scene: lift_bucket\nk: 2\nepsilon: 0.3\n", encoding="utf-8")
    rc = build_run_config({"k": 5, "seed": None}, cfg)
    assert rc.scene == "lift_bucket"
    assert rc.planner.k_candidates == 5
    assert rc.planner.epsilon == 0.3
    assert rc.backend is BackendKind.scripted


def test_config_file_problems(tmp_path):
    with pytest.raises(ConfigError):
        build_run_config({}, tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("colour: red\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="colour"):
        build_run_config({}, bad)
    with pytest.raises(ConfigError):
        build_run_config({"k": 0})


def test_remote_backend_needs_endpoint(monkeypatch):
    monkeypatch.setattr(settings, "LLM_BASE_URL", "")
    with pytest.raises(ConfigError):
        build_run_config({"backend": "remote"})


# ---------- run / replay ----------
def test_run_writes_trace_and_replays(tmp_path):
    out = tmp_path / "run"
    result = _invoke("run", "--scene", "place_box", "--out", out, *EXACT)
    assert result.exit_code == EXIT_OK, result.output
    records = read_ndjson(out / "trace.ndjson")
    assert records[0]["kind"] == "episode"
    assert records[-1]["kind"] == "summary" and records[-1]["success"] is True
    assert (out / "summary.json").is_file()
    assert (out / "run.log").is_file()
    assert orjson.loads((out / "manifest.json").read_bytes())["trace"] == "trace.ndjson"
    assert list((out / "problems").glob("*.pddl"))

    replay = _invoke("replay", out / "trace.ndjson")
    assert replay.exit_code == EXIT_OK, replay.output
    assert "1 episode(s), gate violations: 0" in replay.output


def test_run_unknown_scene_is_config_error(tmp_path):
    result = _invoke("run", "--scene", "nosuch", "--out", tmp_path)
    assert result.exit_code == EXIT_CONFIG


def test_run_remote_without_endpoint(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "LLM_BASE_URL", "")
    result = _invoke("run", "--backend", "remote", "--out", tmp_path)
    assert result.exit_code == EXIT_CONFIG


def test_run_truncated_episode_exits_one(tmp_path):
    result = _invoke("run", "--scene", "place_box", "--horizon", "1", "--out", tmp_path, *EXACT)
    assert result.exit_code == EXIT_FAILED


def test_replay_flags_forged_dispatch(tmp_path):
    problem = "(define (problem p) (:domain room) (:objects cup - locatable) (:init) (:goal (and)))"
    trace = tmp_path / "trace.ndjson"
    cli.append_ndjson(trace, [
        {"kind": "episode", "scene": "x", "config": {"seed": 0, "name": "full", "ablate_feasibility": False}},
        {"kind": "step", "t": 1, "chosen": "(grasp cup)", "reward": 0, "problem": problem},
        {"kind": "summary", "success": False},
    ])
    result = _invoke("replay", trace)
    assert result.exit_code == EXIT_FAILED
    assert _invoke("replay", tmp_path / "nope.ndjson").exit_code == EXIT_CONFIG


# ---------- validate ----------
def test_validate_domain():
    result = _invoke("validate", settings.domain_path)
    assert result.exit_code == EXIT_OK, result.output
    assert "13 actions, 10 predicates" in result.output


def test_validate_problem_and_errors(tmp_path):
    ok = _invoke("validate", settings.data_path / "problems" / "place_box.pddl")
    assert ok.exit_code == EXIT_OK, ok.output
    assert "problem" in ok.output

    bad = tmp_path / "bad.pddl"
    bad.write_text("(define (problem bad) (:domain room)\n  (:objects a - locatable)\n  (:init (on a))\n"
                   "  (:goal (and)))\n", encoding="utf-8")
    assert _invoke("validate", bad).exit_code == EXIT_FAILED
    assert _invoke("validate", tmp_path / "missing.pddl").exit_code == EXIT_CONFIG


# ---------- map ----------
def test_map_build_locate_path(tmp_path):
    path = tmp_path / "place_box.json"
    built = _invoke("map", "build", "--scene", "place_box", "--out", path)
    assert built.exit_code == EXIT_OK, built.output
    assert path.is_file()

    hit = _invoke("map", "locate", "--query", "paper box", "--map", path)
    assert hit.exit_code == EXIT_OK, hit.output
    assert "object=paper_box" in hit.output

    route = _invoke("map", "path", "--start", "1.0,2.5", "--goal", "5.0,2.5", "--map", path)
    assert route.exit_code == EXIT_OK, route.output
    assert "cost=" in route.output

    assert _invoke("map", "path", "--start", "1;2", "--goal", "5,2.5", "--map", path).exit_code == EXIT_CONFIG


def test_map_missing_file(tmp_path):
    result = _invoke("map", "locate", "--query", "paper box", "--map", tmp_path / "none.json")
    assert result.exit_code == EXIT_CONFIG


# ---------- benchmark ----------
def test_benchmark_single_task(tmp_path):
    result = _invoke("benchmark", "--seeds", "1", "--tasks", "place_box", "--out", tmp_path, *EXACT)
    assert result.exit_code == EXIT_OK, result.output
    metrics = read_ndjson(tmp_path / "metrics.ndjson")
    assert [(m["config"], m["task"], m["success_rate"]) for m in metrics] == [("full", "place_box", 1.0)]
    traces = read_ndjson(tmp_path / "traces.ndjson")
    assert sum(1 for r in traces if r["kind"] == "episode") == 1


def test_benchmark_observation_sets(tmp_path):
    result = _invoke("benchmark", "--seeds", "1", "--tasks", "place_box", "--ablate", "feasibility",
                     "--observation-sets", "5", "--out", tmp_path, *EXACT)
    assert result.exit_code in (EXIT_OK, EXIT_FAILED)
    rates = orjson.loads((tmp_path / "observation_ablation.json").read_bytes())
    assert set(rates["place_box"]) == {"full", "feasibility"}


def test_benchmark_unknown_task(tmp_path):
    assert _invoke("benchmark", "--seeds", "1", "--tasks", "nosuch", "--out", tmp_path).exit_code == EXIT_CONFIG
