# src/cli.py
# -*- coding: utf-8 -*-
"""
Командная строка планировщика.

Коды выхода: 0 - успех; 1 - эпизод/бенчмарк не прошёл или внутренняя
ошибка; 2 - ошибка конфигурации (флаги, файлы, сцена).
Приоритет настроек: флаги > файл --config (YAML) > src.settings.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import orjson
import typer
import yaml
from rich.console import Console
from rich.table import Table

from src import grounding, planner, worldsim
from src.logging_setup import attach_run_log, detach_run_log, setup_logging
from src.oracle import Endpoint, RemoteBackend, ScriptedBackend
from src.pddl import PddlError, load_domain, parse_domain, parse_problem
from src.settings import settings

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
SUCCESS_BOUND = 0.80

app = typer.Typer(help="Closed-loop PDDL task planner over a simulated room.", no_args_is_help=True,
                  add_completion=False)
map_app = typer.Typer(help="Semantic voxel map tools.", no_args_is_help=True)
app.add_typer(map_app, name="map")

console = Console()
err_console = Console(stderr=True)


class ConfigError(Exception):
    pass


class BackendKind(str, Enum):
    scripted = "scripted"
    remote = "remote"


class Ablate(str, Enum):
    none = "none"
    feasibility = "feasibility"
    optimal = "optimal"
    all = "all"


# ===============================
# Run configuration
# ===============================
@dataclass(frozen=True)
class RunConfig:
    scene: str
    instruction: Optional[str]
    backend: BackendKind
    endpoint: str
    model: str
    planner: planner.PlannerConfig
    out: Path


_FILE_KEYS = {"scene", "instruction", "backend", "endpoint", "model", "seed", "k", "horizon", "epsilon",
              "p_fail", "out"}


def _read_config_file(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"config file is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config file must be a mapping")
    doc = {str(k).replace("-", "_"): v for k, v in doc.items()}
    unknown = sorted(set(doc) - _FILE_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return doc


def build_run_config(flags: Dict[str, Any], config_file: Optional[Path] = None) -> RunConfig:
    """Слить флаги, файл и settings; проверить диапазоны."""
    merged = _read_config_file(config_file)
    merged.update({k: v for k, v in flags.items() if v is not None})

    scene = merged.get("scene") or "place_box"
    try:
        backend = BackendKind(merged.get("backend") or BackendKind.scripted)
    except ValueError as e:
        raise ConfigError(f"unknown backend: {merged.get('backend')}") from e
    endpoint = merged.get("endpoint") or settings.LLM_BASE_URL
    if backend is BackendKind.remote and not endpoint:
        raise ConfigError("remote backend requires --endpoint or LLM_BASE_URL")
    try:
        cfg = planner.PlannerConfig.from_settings(
            k_candidates=merged.get("k"), horizon=merged.get("horizon"), epsilon=merged.get("epsilon"),
            p_fail=merged.get("p_fail"), seed=merged.get("seed"),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if merged.get("no_timestamps"):
        cfg = replace(cfg, timestamps=False)
    return RunConfig(
        scene=scene,
        instruction=merged.get("instruction"),
        backend=backend,
        endpoint=endpoint or "",
        model=merged.get("model") or settings.LLM_MODEL,
        planner=cfg,
        out=Path(merged.get("out") or "runs"),
    )


def _read_scene(name: str) -> worldsim.SceneSpec:
    try:
        return worldsim.read_scene(name)
    except worldsim.SceneError as e:
        raise ConfigError(str(e)) from e


def make_backend(rc: RunConfig, spec: worldsim.SceneSpec, cfg: planner.PlannerConfig, domain):
    if rc.backend is BackendKind.remote:
        return RemoteBackend(Endpoint.from_settings(base_url=rc.endpoint, model=rc.model))
    return ScriptedBackend(spec, domain, epsilon=cfg.epsilon, seed=cfg.seed)


# ===============================
# Output files
# ===============================
def _dump(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(doc, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))


def append_ndjson(path: Path, records: List[Dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("ab") as fh:
        for rec in records:
            fh.write(orjson.dumps(rec, option=orjson.OPT_SORT_KEYS))
            fh.write(b"\n")


def read_ndjson(path: Path) -> List[Dict]:
    out = []
    for n, line in enumerate(path.read_bytes().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(orjson.loads(line))
        except orjson.JSONDecodeError as e:
            raise ConfigError(f"{path}:{n}: not a JSON record: {e}") from e
    return out


def write_episode(out: Path, trace: planner.ExecutionTrace) -> Path:
    """trace.ndjson (дописывается), problems/<t>.pddl, summary.json, manifest.json."""
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / "trace.ndjson"
    append_ndjson(trace_path, trace.records())
    for step in trace.steps:
        if step.problem_text:
            p = out / "problems" / f"{trace.scene}_s{trace.config.seed}_t{step.t:02d}.pddl"
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(step.problem_text, encoding="utf-8")
    _dump(out / "summary.json", trace.summary() | {"scene": trace.scene, "seed": trace.config.seed})
    _dump(out / "manifest.json", {"schema": planner.TRACE_SCHEMA_VERSION, "trace": trace_path.name,
                                  "problems": "problems", "summary": "summary.json"})
    return trace_path


def _steps_table(trace: planner.ExecutionTrace) -> Table:
    t = Table(title=f"{trace.scene}: {trace.instruction}")
    for col in ("t", "chosen", "r", "reason", "category", "candidates"):
        t.add_column(col)
    for s in trace.steps:
        cands = ", ".join(f"{c.raw_text.strip()}={c.logprob_sum:.2f}" for c in s.candidates)
        t.add_row(str(s.t), str(s.chosen), str(s.outcome.reward),
                  s.outcome.failure_reason.value if s.outcome.failure_reason else "",
                  s.failure_category or "", cands)
    return t


def _fail_config(e: Exception) -> None:
    err_console.print(f"[red]config error:[/] {e}")
    raise typer.Exit(EXIT_CONFIG)


# ===============================
# Commands
# ===============================
@app.callback()
def _main(log_level: Optional[str] = typer.Option(None, "--log-level", help="Override LOG_LEVEL.")):
    setup_logging(log_level)


@app.command("run")
def cmd_run(
    scene: Optional[str] = typer.Option(None, "--scene", help="Scene name or YAML path."),
    instruction: Optional[str] = typer.Option(None, "--instruction", help="Defaults to the scene instruction."),
    backend: Optional[BackendKind] = typer.Option(None, "--backend"),
    endpoint: Optional[str] = typer.Option(None, "--endpoint", help="Chat-completions base URL."),
    model: Optional[str] = typer.Option(None, "--model"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    k: Optional[int] = typer.Option(None, "--k", help="Candidates per step."),
    horizon: Optional[int] = typer.Option(None, "--horizon"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon", help="Promptable answer noise."),
    p_fail: Optional[float] = typer.Option(None, "--p-fail", help="Primitive failure probability."),
    out: Optional[Path] = typer.Option(None, "--out", help="Run directory."),
    config: Optional[Path] = typer.Option(None, "--config", help="YAML run configuration."),
    no_timestamps: bool = typer.Option(False, "--no-timestamps", help="Zero wall-clock durations."),
):
    """Один эпизод. Выход 0 только при успехе."""
    try:
        rc = build_run_config(dict(scene=scene, instruction=instruction,
                                   backend=backend.value if backend else None, endpoint=endpoint,
                                   model=model, seed=seed, k=k, horizon=horizon, epsilon=epsilon,
                                   p_fail=p_fail, out=out, no_timestamps=no_timestamps or None), config)
        spec = _read_scene(rc.scene)
        domain = load_domain()
    except (ConfigError, PddlError) as e:
        _fail_config(e)
        return

    handler = attach_run_log(rc.out)
    try:
        trace = planner.run_episode(spec, rc.instruction, rc.planner, make_backend(rc, spec, rc.planner, domain),
                                    domain)
        path = write_episode(rc.out, trace)
    except Exception:
        log.exception("run failed")
        raise typer.Exit(EXIT_FAILED)
    finally:
        detach_run_log(handler)

    console.print(_steps_table(trace))
    colour = "green" if trace.success else "red"
    console.print(f"[{colour}]success={trace.success}[/] steps={trace.step_count} "
                  f"end={trace.terminated_by} trace={path}")
    raise typer.Exit(EXIT_OK if trace.success else EXIT_FAILED)


def _ablations(ablate: Ablate) -> List[str]:
    if ablate is Ablate.all:
        return ["full", "feasibility", "optimal"]
    if ablate is Ablate.none:
        return settings.get_ablations()
    return ["full", ablate.value]


def metrics_table(metrics) -> Table:
    t = Table(title="success rate by configuration")
    t.add_column("config")
    tasks = sorted({task for per in metrics.values() for task in per})
    for task in tasks:
        t.add_column(task, justify="right")
    t.add_column("mean", justify="right")
    for name, per in metrics.items():
        rates = [per[task].success_rate for task in tasks if task in per]
        t.add_row(name, *[f"{per[task].success_rate:.2f}" if task in per else "-" for task in tasks],
                  f"{sum(rates) / len(rates):.2f}" if rates else "-")
    return t


def taxonomy_table(metrics) -> Table:
    t = Table(title="failure taxonomy")
    t.add_column("config")
    for c in planner.CATEGORIES:
        t.add_column(c, justify="right")
    for name, counts in planner.failure_taxonomy(metrics).items():
        t.add_row(name, *[str(counts[c]) for c in planner.CATEGORIES])
    return t


@app.command("benchmark")
def cmd_benchmark(
    seeds: int = typer.Option(100, "--seeds", min=1, help="Episodes per task and configuration."),
    ablate: Ablate = typer.Option(Ablate.none, "--ablate", help="Extra configurations to compare."),
    tasks: Optional[str] = typer.Option(None, "--tasks", help="Comma-separated scenes (default: all)."),
    backend: Optional[BackendKind] = typer.Option(None, "--backend"),
    endpoint: Optional[str] = typer.Option(None, "--endpoint"),
    model: Optional[str] = typer.Option(None, "--model"),
    seed: Optional[int] = typer.Option(None, "--seed", help="First episode seed."),
    k: Optional[int] = typer.Option(None, "--k"),
    horizon: Optional[int] = typer.Option(None, "--horizon"),
    epsilon: Optional[float] = typer.Option(None, "--epsilon"),
    p_fail: Optional[float] = typer.Option(None, "--p-fail"),
    workers: int = typer.Option(1, "--workers", min=1),
    observation_sets: int = typer.Option(0, "--observation-sets", min=0,
                                         help="Random observation sets per task (0 disables)."),
    db: bool = typer.Option(False, "--db", help="Store metrics in DB_URL."),
    out: Optional[Path] = typer.Option(None, "--out"),
    config: Optional[Path] = typer.Option(None, "--config"),
    no_timestamps: bool = typer.Option(False, "--no-timestamps"),
):
    """Бенчмарк по сценам. Выход 0, если полная конфигурация держит 80% на каждой задаче."""
    try:
        rc = build_run_config(dict(backend=backend.value if backend else None, endpoint=endpoint, model=model,
                                   seed=seed, k=k, horizon=horizon, epsilon=epsilon, p_fail=p_fail, out=out,
                                   no_timestamps=no_timestamps or None), config)
        names = [t.strip() for t in tasks.split(",") if t.strip()] if tasks else worldsim.scene_names()
        for name in names:
            _read_scene(name)
    except ConfigError as e:
        _fail_config(e)
        return

    configs = [rc.planner.ablation(a) for a in _ablations(ablate)]
    trace_path = rc.out / "traces.ndjson"

    def factory(spec, cfg, domain):
        return make_backend(rc, spec, cfg, domain)

    handler = attach_run_log(rc.out)
    try:
        metrics = planner.run_benchmark(names, seeds, configs, backend_factory=factory, workers=workers,
                                        on_trace=lambda tr: append_ndjson(trace_path, tr.records()))
        records = planner.metrics_records(metrics)
        append_ndjson(rc.out / "metrics.ndjson", records)
        obs_rates: Dict[str, Dict[str, float]] = {}
        if observation_sets:
            for name in names:
                obs_rates[name] = planner.run_observation_ablation(name, observation_sets, configs,
                                                                   seed=rc.planner.seed)
            _dump(rc.out / "observation_ablation.json", obs_rates)
        if db:
            from src.database import SessionLocal, init_db
            from src.models import store_benchmark

            init_db()
            with SessionLocal() as session:
                run_id = store_benchmark(session, metrics, seeds=seeds, base=rc.planner)
            log.info("benchmark stored as run %s", run_id)
    except Exception:
        log.exception("benchmark failed")
        raise typer.Exit(EXIT_FAILED)
    finally:
        detach_run_log(handler)

    console.print(metrics_table(metrics))
    console.print(taxonomy_table(metrics))
    if obs_rates:
        t = Table(title="executable actions on random observations")
        t.add_column("task")
        for c in configs:
            t.add_column(c.name, justify="right")
        for name, rates in obs_rates.items():
            t.add_row(name, *[f"{rates[c.name]:.2f}" for c in configs])
        console.print(t)

    gate = sum(tm.gate_violations for per in metrics.values() for tm in per.values())
    full = metrics.get("full", {})
    ok = bool(full) and all(tm.success_rate >= SUCCESS_BOUND for tm in full.values()) and gate == 0
    raise typer.Exit(EXIT_OK if ok else EXIT_FAILED)


@map_app.command("build")
def cmd_map_build(
    scene: str = typer.Option(..., "--scene"),
    out: Optional[Path] = typer.Option(None, "--out", help="Map file (default runs/maps/<scene>.json)."),
):
    try:
        spec = _read_scene(scene)
    except ConfigError as e:
        _fail_config(e)
        return
    m = planner.scene_map(spec)
    path = out or Path("runs") / "maps" / f"{spec.name}.json"
    grounding.save_map(m, path)
    console.print(f"map with {len(m.embedded())} labelled cells written to {path}")


def _load_map(path: Path) -> grounding.SemanticVoxelMap:
    if not path.is_file():
        raise ConfigError(f"map file not found: {path}")
    try:
        return grounding.load_map(path)
    except (grounding.GroundingError, orjson.JSONDecodeError, KeyError) as e:
        raise ConfigError(f"cannot read map {path}: {e}") from e


def _xy(text: str) -> tuple:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError as e:
        raise ConfigError(f"expected 'x,y', got '{text}'") from e
    return x, y


@map_app.command("locate")
def cmd_map_locate(
    query: str = typer.Option(..., "--query"),
    map_file: Path = typer.Option(..., "--map", help="Map file written by 'map build'."),
):
    try:
        m = _load_map(map_file)
    except ConfigError as e:
        _fail_config(e)
        return
    hit = grounding.locate(m, query)
    if hit is None:
        console.print(f"'{query}': not found")
        raise typer.Exit(EXIT_FAILED)
    x, y, z = hit.position
    console.print(f"'{query}': ({x:.3f}, {y:.3f}, {z:.3f}) similarity={hit.similarity:.3f} object={hit.object_id}")


@map_app.command("path")
def cmd_map_path(
    start: str = typer.Option(..., "--start", help="x,y in meters."),
    goal: str = typer.Option(..., "--goal", help="x,y in meters."),
    map_file: Path = typer.Option(..., "--map"),
):
    try:
        m = _load_map(map_file)
        s, g = _xy(start), _xy(goal)
    except ConfigError as e:
        _fail_config(e)
        return
    plan = grounding.plan_path(m, s, g)
    if plan is None:
        console.print("no path")
        raise typer.Exit(EXIT_FAILED)
    console.print(f"cost={plan.cost:.4f} length={plan.length(m.resolution):.3f}m cells={len(plan.cells)}")
    console.print(" ".join(f"{i},{j}" for i, j in plan.cells))


@app.command("replay")
def cmd_replay(trace_file: Path = typer.Argument(..., help="trace.ndjson or traces.ndjson")):
    """Показать трассу и заново проверить, что недопустимые действия не отправлялись."""
    try:
        if not trace_file.is_file():
            raise ConfigError(f"trace file not found: {trace_file}")
        records = read_ndjson(trace_file)
    except ConfigError as e:
        _fail_config(e)
        return

    domain = load_domain()
    episodes: List[Dict[str, Any]] = []
    for rec in records:
        kind = rec.get("kind")
        if kind == "episode":
            episodes.append({"header": rec, "steps": [], "summary": None})
        elif kind == "step" and episodes:
            episodes[-1]["steps"].append(rec)
        elif kind == "summary" and episodes:
            episodes[-1]["summary"] = rec

    bad_total = 0
    for ep in episodes:
        h = ep["header"]
        t = Table(title=f"{h['scene']} seed={h['config']['seed']} config={h['config']['name']}")
        for col in ("t", "chosen", "r", "category", "spread"):
            t.add_column(col)
        for s in ep["steps"]:
            t.add_row(str(s["t"]), s["chosen"], str(s["reward"]), s.get("failure_category") or "",
                      f"{s.get('logprob_spread', 0.0):.2f}")
        console.print(t)
        if h["config"].get("ablate_feasibility"):
            continue
        bad = planner.gate_violations(ep["steps"], domain)
        if bad:
            bad_total += len(bad)
            console.print(f"[red]precondition gate violated at steps {bad}[/]")
    console.print(f"{len(episodes)} episode(s), gate violations: {bad_total}")
    raise typer.Exit(EXIT_OK if bad_total == 0 else EXIT_FAILED)


@app.command("validate")
def cmd_validate(
    pddl_file: Path = typer.Argument(...),
    domain_file: Optional[Path] = typer.Option(None, "--domain", help="Domain for problem files."),
):
    """Разобрать домен или задачу и вывести сводку."""
    if not pddl_file.is_file():
        _fail_config(ConfigError(f"file not found: {pddl_file}"))
        return
    text = pddl_file.read_text(encoding="utf-8")
    try:
        if "(domain " in text.split("(:", 1)[0]:
            d = parse_domain(text)
            console.print(f"domain {d.name}: {len(d.actions)} actions, {len(d.predicates)} predicates")
        else:
            domain = load_domain(str(domain_file) if domain_file else None)
            p = parse_problem(text, domain)
            console.print(f"problem {p.name}: {len(p.objects)} objects, {len(p.init)} init atoms")
    except PddlError as e:
        err_console.print(f"[red]{pddl_file}:[/] {e}")
        raise typer.Exit(EXIT_FAILED)


@app.command("serve-mock")
def cmd_serve_mock(
    scene: Optional[str] = typer.Option(None, "--scene"),
    host: str = typer.Option("127.0.0.1", "--host"),
    port: int = typer.Option(8089, "--port"),
    epsilon: float = typer.Option(0.0, "--epsilon"),
    seed: int = typer.Option(0, "--seed"),
):
    """Локальный chat-completions сервер для удалённого бэкенда."""
    from src.mock_llm import serve

    serve(host, port, scene, epsilon, seed)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
