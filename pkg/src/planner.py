# src/planner.py
# -*- coding: utf-8 -*-
"""
Замкнутый цикл планирования.

Каждый шаг: наблюдение -> init -> PDDL-задача -> K кандидатов от модели ->
осуществимость (предусловия в init) + оптимальность (сумма logprob) ->
выбор -> исполнение в симуляторе. Отказы пишутся в трассу, исключения
наружу из run_episode не выходят.
"""
from __future__ import annotations

import logging
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src import augment, grounding, worldsim
from src.logging_setup import EpisodeAdapter
from src.oracle import (
    Backend, BackendError, BackendRequest, MissingLogprobsError, PromptContext, ScriptedBackend,
    planner_messages,
)
from src.pddl import (
    And, Atom, DomainModel, Formula, GroundAction, GroundAtom, PddlError, ProblemModel, RECOVERY_ACTIONS,
    applicable, apply, forward_search, ground_actions, iter_atoms, load_domain, missing_preconditions,
    parse_formula, parse_problem,
)

log = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1
FEASIBILITY_PREDICATES = frozenset({"find", "graspable", "reachable", "placeable"})
ADJUSTABLE = frozenset({"reachable", "graspable", "placeable"})
CATEGORIES = ("planning", "promptable", "grounding")
_SEXPR_RE = re.compile(r"\(([^()]*)\)")


# ===============================
# Types
# ===============================
@dataclass(frozen=True)
class PlannerConfig:
    k_candidates: int = 4
    horizon: int = 20
    ablate_feasibility: bool = False
    ablate_optimal_selection: bool = False
    epsilon: float = 0.05
    p_fail: Optional[float] = 0.05   # None - брать вероятности из сцены
    seed: int = 0
    max_adjusts: int = 3
    temperature: float = 0.7
    timestamps: bool = True

    def __post_init__(self):
        if self.k_candidates < 1:
            raise ValueError("k_candidates must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must be within [0, 1]")
        if self.p_fail is not None and not 0.0 <= self.p_fail <= 1.0:
            raise ValueError("p_fail must be within [0, 1]")

    @property
    def name(self) -> str:
        if self.ablate_feasibility:
            return "feasibility"
        if self.ablate_optimal_selection:
            return "optimal"
        return "full"

    def ablation(self, name: str) -> "PlannerConfig":
        """full | feasibility | optimal -> копия с нужными флагами."""
        if name not in ("full", "feasibility", "optimal"):
            raise ValueError(f"unknown ablation '{name}'")
        return replace(self, ablate_feasibility=(name == "feasibility"),
                       ablate_optimal_selection=(name == "optimal"))

    @classmethod
    def from_settings(cls, **overrides) -> "PlannerConfig":
        from src.settings import settings

        base = dict(k_candidates=settings.PLANNER_K, horizon=settings.PLANNER_HORIZON,
                    epsilon=settings.PLANNER_EPSILON, p_fail=settings.PLANNER_P_FAIL,
                    temperature=settings.LLM_TEMPERATURE)
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class Candidate:
    raw_text: str
    action: Optional[GroundAction]
    logprob_sum: float
    feasible: Optional[bool] = None
    missing: Tuple[Tuple[bool, GroundAtom], ...] = ()

    def to_dict(self) -> Dict:
        return {
            "text": self.raw_text,
            "action": str(self.action) if self.action else None,
            "logprob": self.logprob_sum,
            "feasible": self.feasible,
        }


@dataclass
class StepRecord:
    t: int
    problem_text: str
    candidates: List[Candidate]
    chosen: GroundAction
    outcome: worldsim.ActionOutcome
    failure_category: Optional[str] = None
    note: str = ""
    durations: Dict[str, float] = field(default_factory=dict)
    logprob_spread: float = 0.0
    promptable_failures: int = 0
    truth: Tuple[str, ...] = ()

    def to_dict(self) -> Dict:
        return {
            "schema": TRACE_SCHEMA_VERSION,
            "kind": "step",
            "t": self.t,
            "problem": self.problem_text,
            "candidates": [c.to_dict() for c in self.candidates],
            "chosen": str(self.chosen),
            "reward": self.outcome.reward,
            "failure_reason": self.outcome.failure_reason.value if self.outcome.failure_reason else None,
            "failure_category": self.failure_category,
            "note": self.note,
            "durations": self.durations,
            "logprob_spread": self.logprob_spread,
            "promptable_failures": self.promptable_failures,
            "truth": list(self.truth),
        }


@dataclass
class ExecutionTrace:
    instruction: str
    scene: str
    config: PlannerConfig
    steps: List[StepRecord] = field(default_factory=list)
    success: bool = False
    goal: str = ""
    terminated_by: str = "horizon"   # stop | alert | goal | horizon | error
    stop_confirmed: Optional[bool] = None
    failure_category: Optional[str] = None

    @property
    def step_count(self) -> int:
        return len(self.steps)

    def header(self) -> Dict:
        return {
            "schema": TRACE_SCHEMA_VERSION,
            "kind": "episode",
            "scene": self.scene,
            "instruction": self.instruction,
            "config": {
                "name": self.config.name, "k": self.config.k_candidates, "horizon": self.config.horizon,
                "epsilon": self.config.epsilon, "p_fail": self.config.p_fail, "seed": self.config.seed,
                "ablate_feasibility": self.config.ablate_feasibility,
                "ablate_optimal_selection": self.config.ablate_optimal_selection,
            },
            "goal": self.goal,
        }

    def summary(self) -> Dict:
        return {
            "schema": TRACE_SCHEMA_VERSION,
            "kind": "summary",
            "success": self.success,
            "steps": self.step_count,
            "terminated_by": self.terminated_by,
            "stop_confirmed": self.stop_confirmed,
            "failure_category": self.failure_category,
        }

    def records(self) -> List[Dict]:
        return [self.header()] + [s.to_dict() for s in self.steps] + [self.summary()]


class PlanningFailure(Exception):
    """Модель не дала ни одного кандидата или бэкенд упал."""


# ===============================
# Propose / score / select
# ===============================
def parse_candidate(text: str, domain: DomainModel) -> Optional[GroundAction]:
    """Первое s-выражение ответа как (action args...); None если не разбирается."""
    m = _SEXPR_RE.search(text or "")
    if m is None:
        return None
    parts = m.group(1).split()
    if not parts:
        return None
    name, args = parts[0].lower(), tuple(a.lower() for a in parts[1:])
    schema = domain.action(name)
    if schema is None or len(schema.params) != len(args):
        return None
    return GroundAction(name, args)


def propose(backend: Backend, domain: DomainModel, problem_text: str, instruction: str,
            last_action: str, config: PlannerConfig, example_problem: str = "") -> Tuple[List[Candidate], str]:
    """K кандидатов с суммами logprob. Без logprob у бэкенда суммы равны 0."""
    messages = planner_messages(domain, example_problem, instruction, last_action, problem_text)
    req = BackendRequest(messages=messages, n_candidates=config.k_candidates, temperature=config.temperature,
                         want_logprobs=True, max_tokens=64)
    note = ""
    try:
        resp = backend.complete(req)
    except MissingLogprobsError:
        note = "logprobs unavailable; selection by order"
        resp = backend.complete(replace(req, want_logprobs=False))
    except BackendError as e:
        raise PlanningFailure(str(e)) from e
    if not resp.candidates:
        raise PlanningFailure("backend returned zero candidates")
    out = [Candidate(c.text, parse_candidate(c.text, domain), min(0.0, c.logprob_sum)) for c in resp.candidates]
    return out, note


def score_feasibility(c: Candidate, domain: DomainModel, init: Iterable[GroundAtom],
                      objects: Sequence[str] = ()) -> bool:
    """Осуществимость = все предусловия в init. adjust/alert/stop осуществимы всегда."""
    if c.action is None:
        return False
    if c.action.name in RECOVERY_ACTIONS:
        return not objects or all(a in objects for a in c.action.args)
    if objects and any(a not in objects for a in c.action.args):
        return False
    try:
        return applicable(domain, c.action, init)
    except PddlError:
        return False


def annotate(cands: List[Candidate], domain: DomainModel, init: Iterable[GroundAtom],
             objects: Sequence[str] = ()) -> None:
    state = frozenset(init)
    for c in cands:
        c.feasible = score_feasibility(c, domain, state, objects) if c.action is not None else None
        if c.action is not None and not c.feasible and c.action.name not in RECOVERY_ACTIONS:
            try:
                c.missing = tuple(missing_preconditions(domain, c.action, state))
            except PddlError:
                c.missing = ()


def _recovery(cands: Sequence[Candidate]) -> GroundAction:
    for c in cands:
        if c.action is None or c.feasible or not c.missing:
            continue
        if all(pos and atom.predicate in ADJUSTABLE for pos, atom in c.missing):
            target = c.missing[0][1].args[0]
            return GroundAction("adjust", (target,))
    return GroundAction("alert")


def select(cands: Sequence[Candidate], config: PlannerConfig) -> GroundAction:
    """
    По умолчанию: argmax logprob среди осуществимых, при равенстве меньший
    индекс. Без осуществимости: argmax среди всех разобранных. Без
    оптимальности: первый осуществимый в порядке бэкенда. Если осуществимых
    нет: adjust, когда мешают только reachable/graspable/placeable, иначе alert.
    """
    parsed = [(i, c) for i, c in enumerate(cands) if c.action is not None]
    if not parsed:
        return GroundAction("alert")
    if config.ablate_feasibility:
        _, best = max(parsed, key=lambda ic: (ic[1].logprob_sum, -ic[0]))
        return best.action  # type: ignore[return-value]
    feasible = [(i, c) for i, c in parsed if c.feasible]
    if feasible:
        if config.ablate_optimal_selection:
            return feasible[0][1].action  # type: ignore[return-value]
        _, best = max(feasible, key=lambda ic: (ic[1].logprob_sum, -ic[0]))
        return best.action  # type: ignore[return-value]
    return _recovery([c for _, c in parsed])


def logprob_spread(cands: Sequence[Candidate]) -> float:
    values = [c.logprob_sum for c in cands]
    return float(max(values) - min(values)) if len(values) > 1 else 0.0


# ===============================
# Maps per scene
# ===============================
_MAPS: Dict[str, grounding.SemanticVoxelMap] = {}
_MAPS_LOCK = threading.Lock()


def scene_map(spec: worldsim.SceneSpec) -> grounding.SemanticVoxelMap:
    """Карта строится один раз на сцену из кругового обзора стартового состояния."""
    key = spec.model_dump_json()
    with _MAPS_LOCK:
        m = _MAPS.get(key)
        if m is None:
            world = worldsim.load_scene(spec)
            m = grounding.build_map(worldsim.panoramic_scan(world), world.bounds)
            _MAPS[key] = m
    return m


def _example_problem() -> str:
    from src.settings import settings

    p = settings.data_path / "problems" / "place_box.pddl"
    return p.read_text(encoding="utf-8") if p.is_file() else ""


# ===============================
# Episode
# ===============================
@dataclass
class _Observation:
    problem: ProblemModel
    text: str
    promptable_failures: int


def _observe(world: worldsim.WorldState, spec: worldsim.SceneSpec, t: int, instruction: str,
             ext: augment.ObjectExtraction, goal, objects: Sequence[str], domain: DomainModel,
             maps: augment.Maps, backend: Backend, ctx: PromptContext, config: PlannerConfig) -> _Observation:
    backend.bind_world(world)
    requests = augment.select_predicates(instruction, ext, domain, backend)
    if config.ablate_feasibility:
        requests = [r for r in requests if r.predicate not in FEASIBILITY_PREDICATES]
    init = augment.assemble_init(requests, world, maps, backend, ctx)
    problem, text = augment.build_problem(f"{spec.name}_t{t}", objects, init.atoms, goal, domain)
    return _Observation(problem, text, len(init.failures))


def _decide(obs: _Observation, backend: Backend, domain: DomainModel, instruction: str, last_action: str,
            config: PlannerConfig, example: str) -> Tuple[List[Candidate], GroundAction, str, bool]:
    """(кандидаты, выбор, заметка, провал планирования?)"""
    try:
        cands, note = propose(backend, domain, obs.text, instruction, last_action, config, example)
    except PlanningFailure as e:
        return [], GroundAction("alert"), f"planning failure: {e}", True
    annotate(cands, domain, obs.problem.init, obs.problem.object_names)
    chosen = select(cands, config)
    planning_failed = all(c.action is None for c in cands)
    if planning_failed:
        note = (note + "; " if note else "") + "no parsable candidates"
    return cands, chosen, note, planning_failed


def run_episode(spec: worldsim.SceneSpec, instruction: Optional[str], config: PlannerConfig, backend: Backend,
                domain: Optional[DomainModel] = None) -> ExecutionTrace:
    domain = domain or load_domain()
    instruction = instruction or spec.instruction
    elog = EpisodeAdapter(log, {"episode": f"{spec.name}#{config.seed}"})
    trace = ExecutionTrace(instruction=instruction, scene=spec.name, config=config)
    world = worldsim.load_scene(spec)
    true_goal = parse_formula(spec.goal)
    rates = spec.p_fail if config.p_fail is None else {"navigation": config.p_fail, "manipulation": config.p_fail}
    rng = np.random.default_rng([config.seed, 0x5EED])
    maps = augment.Maps(scene_map(spec))
    ctx = PromptContext(instruction, {oid: o.label for oid, o in world.objects.items()})
    example = _example_problem()

    backend.bind_world(world)
    try:
        ext = augment.extract_objects(instruction, backend)
        goal = augment.generate_goal(instruction, domain, backend)
        objects = augment.problem_objects(ext, goal)
    except augment.AugmentError as e:
        elog.warning("episode aborted before planning: %s", e)
        trace.terminated_by = "alert"
        trace.failure_category = "planning"
        return trace
    trace.goal = str(goal)
    goal_mismatch = str(goal) != str(true_goal)

    last_action = "None"
    recent: List[GroundAction] = []
    for t in range(1, config.horizon + 1):
        started = time.perf_counter()
        try:
            obs = _observe(world, spec, t, instruction, ext, goal, objects, domain, maps, backend, ctx, config)
        except augment.AugmentError as e:
            elog.warning("step %d: observation failed: %s", t, e)
            trace.steps.append(StepRecord(t, "", [], GroundAction("alert"), worldsim.ActionOutcome(1),
                                          "planning", f"observation failed: {e}"))
            trace.terminated_by = "alert"
            break
        cands, chosen, note, planning_failed = _decide(obs, backend, domain, instruction, last_action,
                                                       config, example)

        if chosen.name == "adjust":
            streak = 0
            for prev in reversed(recent):
                if prev != chosen:
                    break
                streak += 1
            if streak >= config.max_adjusts:
                note = (note + "; " if note else "") + f"adjust limit reached for {chosen.args[0]}"
                chosen = GroundAction("alert")
        planning_s = time.perf_counter() - started if config.timestamps else 0.0

        truth = tuple(sorted(str(a) for a in worldsim.ground_truth_atoms(world, world.objects)))
        world, outcome = worldsim.execute(world, chosen, rng, rates)
        category = None
        if outcome.reward == 0:
            category = "promptable" if obs.promptable_failures else "grounding"
        elif planning_failed:
            category = "planning"
        durations = {"navigation": 0.0, "manipulation": 0.0, "planning": round(planning_s, 6)}
        if outcome.phase in ("navigation", "manipulation"):
            durations[outcome.phase] = outcome.duration
        trace.steps.append(StepRecord(
            t=t, problem_text=obs.text, candidates=cands, chosen=chosen, outcome=outcome,
            failure_category=category, note=note, durations=durations,
            logprob_spread=logprob_spread(cands), promptable_failures=obs.promptable_failures, truth=truth,
        ))
        elog.debug("t=%d %s -> r=%d %s", t, chosen, outcome.reward,
                   outcome.failure_reason.value if outcome.failure_reason else "")
        recent.append(chosen)
        last_action = str(chosen)

        if chosen.name == "stop":
            trace.terminated_by = "stop"
            break
        if chosen.name == "alert":
            trace.terminated_by = "alert"
            break
        if worldsim.goal_satisfied(world, true_goal):
            trace.terminated_by = "goal"
            trace.stop_confirmed = _confirm_stop(world, spec, t + 1, instruction, ext, goal, objects, domain,
                                                 maps, backend, ctx, config, last_action, example)
            break

    trace.success = worldsim.goal_satisfied(world, true_goal)
    if not trace.success:
        cats = [s.failure_category for s in trace.steps if s.failure_category]
        if goal_mismatch:
            trace.failure_category = "planning"
        elif trace.terminated_by in ("alert", "stop", "horizon") and cats:
            trace.failure_category = cats[-1]
        else:
            trace.failure_category = "planning"
    elog.info("%s: success=%s steps=%d end=%s", spec.name, trace.success, trace.step_count, trace.terminated_by)
    return trace


def _confirm_stop(world, spec, t, instruction, ext, goal, objects, domain, maps, backend, ctx, config,
                  last_action, example) -> Optional[bool]:
    """Один невыполняемый запрос после достижения цели: выдал бы планировщик stop?"""
    try:
        obs = _observe(world, spec, t, instruction, ext, goal, objects, domain, maps, backend, ctx, config)
    except augment.AugmentError:
        return None
    _, chosen, _, _ = _decide(obs, backend, domain, instruction, last_action, config, example)
    return chosen.name == "stop"


# ===============================
# Offline verification
# ===============================
def gate_violations(steps: Iterable[Mapping], domain: Optional[DomainModel] = None) -> List[int]:
    """
    Номера шагов, где отправленное не-восстановительное действие не было
    применимо к init задачи шага. Работает по словарям трассы.
    """
    domain = domain or load_domain()
    bad = []
    for rec in steps:
        chosen = parse_candidate(rec.get("chosen", ""), domain)
        if chosen is None or chosen.name in RECOVERY_ACTIONS or not rec.get("problem"):
            continue
        problem = parse_problem(rec["problem"], domain)
        if not applicable(domain, chosen, problem.init):
            bad.append(int(rec.get("t", 0)))
    return bad


# ===============================
# BFS oracle over the ground truth
# ===============================
def oracle_goal(world: worldsim.WorldState, goal: Formula) -> Formula:
    """
    Цель оракула: исходная цель плюс (opened c) для закрытых контейнеров,
    в которых лежат объекты цели. В домене у scan/grasp нет предусловия
    (opened ...), поэтому без этой подцели поиск не выводит pull.
    """
    extra: List[Atom] = []
    for a in iter_atoms(goal):
        for oid in a.args:
            cur = world.objects.get(oid)
            while cur is not None and cur.contained_in is not None:
                box = world.objects[cur.contained_in]
                if not box.opened and Atom("opened", (box.id,)) not in extra:
                    extra.append(Atom("opened", (box.id,)))
                cur = box
    if not extra:
        return goal
    children = goal.children if isinstance(goal, And) else (goal,)
    return And(tuple(children) + tuple(extra))


def oracle_problem(world: worldsim.WorldState, goal: Formula, name: str = "oracle") -> ProblemModel:
    """
    Задача по истине: промптовые атомы из мира, at/detected по геометрии,
    find/graspable/reachable/placeable выданы для всех объектов.
    """
    ids = list(world.objects)
    atoms = set(worldsim.ground_truth_atoms(world, ids))
    x, y = world.robot.xy
    for oid, o in world.objects.items():
        for pred in sorted(FEASIBILITY_PREDICATES):
            atoms.add(GroundAtom(pred, (oid,)))
        if np.hypot(x - o.position[0], y - o.position[1]) <= grounding.R_AT:
            atoms.add(GroundAtom("at", (oid,)))
        if grounding.eval_detected(world, oid):
            atoms.add(GroundAtom("detected", (oid,)))
    return ProblemModel(name, "room", tuple((oid, "locatable") for oid in ids), frozenset(atoms), goal)


def optimal_next_actions(domain: DomainModel, problem: ProblemModel, budget: int = 200_000) -> List[GroundAction]:
    """Все действия, с которых начинается какой-либо кратчайший план. [] если цель уже выполнена."""
    plan = forward_search(domain, problem, budget)
    if not plan:
        return []
    out = []
    state = frozenset(problem.init)
    for ga in ground_actions(domain, problem.objects):
        if ga.name in RECOVERY_ACTIONS or not applicable(domain, ga, state):
            continue
        nxt = apply(domain, ga, state)
        if nxt == state:
            continue
        rest = forward_search(domain, replace(problem, init=nxt), budget)
        if rest is not None and len(rest) == len(plan) - 1:
            out.append(ga)
    return out


# ===============================
# Benchmark
# ===============================
@dataclass
class TaskMetrics:
    task: str
    config: str
    episodes: int = 0
    successes: int = 0
    total_steps: int = 0
    failures: Dict[str, int] = field(default_factory=lambda: {c: 0 for c in CATEGORIES})
    durations: Dict[str, float] = field(default_factory=lambda: {"navigation": 0.0, "manipulation": 0.0,
                                                                   "planning": 0.0})
    gate_violations: int = 0
    stop_confirmed: int = 0
    goal_terminations: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    @property
    def mean_steps(self) -> float:
        return self.total_steps / self.episodes if self.episodes else 0.0

    def add(self, trace: ExecutionTrace, gate_bad: int) -> None:
        self.episodes += 1
        self.successes += int(trace.success)
        self.total_steps += trace.step_count
        if not trace.success and trace.failure_category:
            self.failures[trace.failure_category] += 1
        for s in trace.steps:
            for k, v in s.durations.items():
                self.durations[k] = self.durations.get(k, 0.0) + v
        self.gate_violations += gate_bad
        if trace.terminated_by == "goal":
            self.goal_terminations += 1
            self.stop_confirmed += int(bool(trace.stop_confirmed))

    def to_dict(self) -> Dict:
        n = max(self.episodes, 1)
        return {
            "task": self.task,
            "config": self.config,
            "episodes": self.episodes,
            "success_rate": round(self.success_rate, 6),
            "mean_steps": round(self.mean_steps, 6),
            "failures": dict(self.failures),
            "mean_durations": {k: round(v / n, 6) for k, v in self.durations.items()},
            "gate_violations": self.gate_violations,
            "stop_agreement": round(self.stop_confirmed / self.goal_terminations, 6) if self.goal_terminations else None,
        }


BackendFactory = Callable[[worldsim.SceneSpec, PlannerConfig, DomainModel], Backend]


def scripted_factory(spec: worldsim.SceneSpec, config: PlannerConfig, domain: DomainModel) -> Backend:
    return ScriptedBackend(spec, domain, epsilon=config.epsilon, seed=config.seed)


def _online_gate(trace: ExecutionTrace, domain: DomainModel) -> int:
    if trace.config.ablate_feasibility:
        return 0
    return len(gate_violations((s.to_dict() for s in trace.steps), domain))


def run_benchmark(tasks: Sequence[str], n_seeds: int, configs: Sequence[PlannerConfig],
                  backend_factory: BackendFactory = scripted_factory, workers: int = 1,
                  on_trace: Optional[Callable[[ExecutionTrace], None]] = None) -> Dict[str, Dict[str, TaskMetrics]]:
    """
    n_seeds эпизодов на задачу и конфигурацию. Сиды эпизодов: config.seed + i.
    Агрегация в порядке постановки, поэтому результат не зависит от workers.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    domain = load_domain()
    specs = {t: worldsim.read_scene(t) for t in tasks}
    jobs = [(cfg, t, replace(cfg, seed=cfg.seed + i)) for cfg in configs for t in tasks for i in range(n_seeds)]

    def one(job):
        base, task, cfg = job
        spec = specs[task]
        trace = run_episode(spec, spec.instruction, cfg, backend_factory(spec, cfg, domain), domain)
        return base.name, task, trace

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]

    metrics: Dict[str, Dict[str, TaskMetrics]] = {}
    for name, task, trace in results:
        tm = metrics.setdefault(name, {}).setdefault(task, TaskMetrics(task, name))
        tm.add(trace, _online_gate(trace, domain))
        if on_trace is not None:
            on_trace(trace)
    return metrics


def metrics_records(metrics: Mapping[str, Mapping[str, TaskMetrics]]) -> List[Dict]:
    return [tm.to_dict() for per_task in metrics.values() for tm in per_task.values()]


def failure_taxonomy(metrics: Mapping[str, Mapping[str, TaskMetrics]]) -> Dict[str, Dict[str, int]]:
    out: Dict[str, Dict[str, int]] = {}
    for name, per_task in metrics.items():
        total: Counter = Counter()
        for tm in per_task.values():
            total.update(tm.failures)
        out[name] = {c: int(total.get(c, 0)) for c in CATEGORIES}
    return out


# ===============================
# Observation ablation
# ===============================
def run_observation_ablation(task: str, n_sets: int, configs: Sequence[PlannerConfig],
                             seed: int = 0, p_true: float = 0.5) -> Dict[str, float]:
    """
    n_sets случайных наблюдений (каждый выбранный предикат истинен с p_true);
    на каждое - один выбор действия в каждой конфигурации. Доля исполнимых
    выборов: предусловия держатся в наблюдении и это не alert.
    """
    if n_sets < 1:
        raise ValueError("n_sets must be >= 1")
    domain = load_domain()
    spec = worldsim.read_scene(task)
    world = worldsim.load_scene(spec)
    example = _example_problem()
    rng = np.random.default_rng([seed, 0xAB1A])
    rates: Dict[str, float] = {}
    scout = ScriptedBackend(spec, domain, epsilon=0.0, seed=seed, world=world)
    ext = augment.extract_objects(spec.instruction, scout)
    goal = augment.generate_goal(spec.instruction, domain, scout)
    objects = augment.problem_objects(ext, goal)
    requests = augment.select_predicates(spec.instruction, ext, domain, scout)

    samples = []
    for _ in range(n_sets):
        draws = rng.random(len(requests))
        samples.append(frozenset(r.atom() for r, u in zip(requests, draws) if u < p_true))

    for cfg in configs:
        backend = ScriptedBackend(spec, domain, epsilon=0.0, seed=cfg.seed, world=world)
        ok = 0
        for i, atoms in enumerate(samples):
            shown = atoms
            if cfg.ablate_feasibility:
                shown = frozenset(a for a in atoms if a.predicate not in FEASIBILITY_PREDICATES)
            problem, text = augment.build_problem(f"{task}_obs{i}", objects, shown, goal, domain)
            obs = _Observation(problem, text, 0)
            _, chosen, _, _ = _decide(obs, backend, domain, spec.instruction, "None", cfg, example)
            if chosen.name != "alert" and applicable(domain, chosen, atoms):
                ok += 1
        rates[cfg.name] = ok / n_sets
    return rates
