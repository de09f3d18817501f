# src/augment.py
# -*- coding: utf-8 -*-
"""
Аугментация инструкции: на каждом шаге из (инструкция, наблюдение,
оценки предикатов) собирается свежая PDDL-задача.

extract_objects -> select_predicates -> assemble_init -> build_problem;
generate_goal вызывается один раз за эпизод.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence, Tuple

import orjson

from src import grounding
from src.oracle import (
    Backend, BackendError, BackendRequest, OracleError, PromptContext, PromptableParseError,
    eval_promptable, first_reply_text, render_prompt, with_marker,
)
from src.pddl import (
    DomainModel, Formula, GroundAtom, GROUNDED, PROMPTABLE, PddlError, ProblemModel,
    iter_atoms, parse_formula, print_problem,
)
from src.utils import dedupe, normalize_name

log = logging.getLogger(__name__)

OBJECT_TYPE = "locatable"
_ROBOT_NAMES = {"robot", "tiago"}
_LINE_RE = re.compile(r"\(([^()]*)\)")


class AugmentError(Exception):
    pass


class ExtractionError(AugmentError):
    pass


class SelectionError(AugmentError):
    pass


class GoalError(AugmentError):
    pass


class DanglingReferenceError(AugmentError):
    pass


@dataclass(frozen=True)
class ObjectExtraction:
    object_name: str
    related_object_name: str = ""
    other_object_names: Tuple[str, ...] = ()

    def names(self) -> List[str]:
        return dedupe(n for n in (self.object_name, self.related_object_name, *self.other_object_names) if n)


@dataclass(frozen=True)
class PredicateRequest:
    predicate: str
    args: Tuple[str, ...]
    kind: str  # promptable | grounded

    def atom(self) -> GroundAtom:
        return GroundAtom(self.predicate, self.args)


@dataclass(frozen=True)
class InitResult:
    atoms: FrozenSet[GroundAtom]
    # (запрос, текст ошибки) для промптируемых предикатов, которые не разобрались
    failures: Tuple[Tuple[PredicateRequest, str], ...] = ()


@dataclass
class Maps:
    voxel: grounding.SemanticVoxelMap
    reach: grounding.ReachabilityMap = field(default_factory=grounding.default_reachability)


# ===============================
# Extraction
# ===============================
def extract_objects(instruction: str, backend: Backend) -> ObjectExtraction:
    if not (instruction or "").strip():
        raise ExtractionError("empty instruction")
    text = render_prompt("extract_objects", {"INSTRUCTION": instruction})
    req = BackendRequest(messages=(("user", with_marker("extract_objects", text, instruction=instruction)),),
                         max_tokens=256)
    try:
        reply = first_reply_text(backend.complete(req))
        doc = orjson.loads(reply)
    except (BackendError, orjson.JSONDecodeError) as e:
        raise ExtractionError(f"malformed extraction reply: {e}") from e
    if not isinstance(doc, dict):
        raise ExtractionError("extraction reply is not an object")
    for key in ("object_name", "related_object_name", "other_object_names"):
        if key not in doc:
            raise ExtractionError(f"extraction reply lacks '{key}'")
    others = doc["other_object_names"]
    if not isinstance(others, list) or not all(isinstance(x, str) for x in others):
        raise ExtractionError("other_object_names must be a list of strings")
    obj = normalize_name(str(doc["object_name"] or ""))
    if not obj:
        raise ExtractionError("empty object_name")
    related = normalize_name(str(doc["related_object_name"] or ""))
    rest = tuple(n for n in dedupe(normalize_name(x) for x in others) if n and n not in (obj, related))
    return ObjectExtraction(obj, related, rest)


# ===============================
# Predicate selection
# ===============================
def _predicates_block(domain: DomainModel) -> str:
    lines = []
    for p in domain.predicates:
        params = " ".join(f"{v} - {t}" for v, t in p.params)
        lines.append(f"({p.name} {params})".replace(" )", ")"))
    return "\n".join(lines)


def select_predicates(instruction: str, objects: ObjectExtraction, domain: DomainModel,
                      backend: Backend) -> List[PredicateRequest]:
    names = objects.names()
    if not names:
        raise SelectionError("no objects to check")
    text = render_prompt("select_predicates", {
        "INSTRUCTION": instruction,
        "OBJECTS": ", ".join(names),
        "PREDICATES": _predicates_block(domain),
        "ACTIONS": "\n".join(a.name for a in domain.actions),
    })
    req = BackendRequest(messages=(("user", with_marker("select_predicates", text, objects=names,
                                                        object=objects.object_name)),),
                         max_tokens=512)
    try:
        reply = first_reply_text(backend.complete(req))
    except BackendError as e:
        raise SelectionError(f"selection request failed: {e}") from e

    known = set(names)
    out: List[PredicateRequest] = []
    for body in _LINE_RE.findall(reply):
        parts = body.split()
        if not parts:
            continue
        name, args = parts[0].lower(), [normalize_name(a) for a in parts[1:]]
        schema = domain.predicate(name)
        if schema is None:
            log.warning("select_predicates: unknown predicate dropped: (%s)", body)
            continue
        if name == "holding" and len(args) == schema.arity + 1 and args[0] in _ROBOT_NAMES:
            args = args[1:]
        if len(args) != schema.arity or any(a not in known for a in args):
            log.warning("select_predicates: bad arguments dropped: (%s)", body)
            continue
        kind = "promptable" if name in PROMPTABLE else "grounded" if name in GROUNDED else schema.kind
        out.append(PredicateRequest(name, tuple(args), kind))
    out = dedupe(out)
    if not out:
        raise SelectionError("no valid predicate requests in reply")
    return out


# ===============================
# Init
# ===============================
def _grounded(req: PredicateRequest, world, maps: Maps, ctx: PromptContext) -> bool:
    oid = req.args[0]
    pred = req.predicate
    if pred == "find":
        return grounding.eval_find(world, maps.voxel, ctx.label(oid))
    if pred == "at":
        return grounding.eval_at(world, maps.voxel, ctx.label(oid))
    if oid not in world.objects:
        return False
    if pred == "detected":
        return grounding.eval_detected(world, oid)
    if pred == "graspable":
        return grounding.eval_graspable(world, oid)
    if pred == "reachable":
        return grounding.eval_reachable(world, maps.reach, oid)
    if pred == "placeable":
        return grounding.eval_placeable(world, oid)
    raise AugmentError(f"'{pred}' has no grounding mechanism")


def assemble_init(requests: Sequence[PredicateRequest], world, maps: Maps, backend: Backend,
                  ctx: PromptContext) -> InitResult:
    """Замкнутый мир: атом попадает в init, только если оценка истинна."""
    atoms = set()
    failures: List[Tuple[PredicateRequest, str]] = []
    for req in requests:
        if req.kind == "promptable":
            try:
                ok = eval_promptable(req.predicate, req.args, ctx, backend)
            except (PromptableParseError, BackendError, OracleError) as e:
                failures.append((req, str(e)))
                continue
        else:
            try:
                ok = _grounded(req, world, maps, ctx)
            except grounding.GroundingError as e:
                log.debug("grounded %s failed: %s", req.atom(), e)
                ok = False
        if ok:
            atoms.add(req.atom())
    return InitResult(frozenset(atoms), tuple(failures))


# ===============================
# Goal / problem
# ===============================
def generate_goal(instruction: str, domain: DomainModel, backend: Backend) -> Formula:
    if not (instruction or "").strip():
        raise GoalError("empty instruction")
    text = render_prompt("generate_goal", {"INSTRUCTION": instruction, "PREDICATES": _predicates_block(domain)})
    req = BackendRequest(messages=(("user", with_marker("generate_goal", text, instruction=instruction)),),
                         max_tokens=128)
    try:
        reply = first_reply_text(backend.complete(req))
        goal = parse_formula(reply)
    except (BackendError, PddlError) as e:
        raise GoalError(f"cannot parse goal: {e}") from e
    for a in iter_atoms(goal):
        schema = domain.predicate(a.name)
        if a.name != "=" and (schema is None or schema.arity != len(a.args)):
            raise GoalError(f"goal uses unknown predicate or wrong arity: {a}")
        if any(x.startswith("?") for x in a.args):
            raise GoalError(f"goal has free variable: {a}")
    return goal


def build_problem(name: str, objects: Sequence[str], init: FrozenSet[GroundAtom], goal: Formula,
                  domain: DomainModel) -> Tuple[ProblemModel, str]:
    names = dedupe(objects)
    listed = set(names)
    for a in iter_atoms(goal):
        for x in a.args:
            if x not in listed:
                raise DanglingReferenceError(f"goal references unlisted object '{x}'")
    for atom in init:
        for x in atom.args:
            if x not in listed:
                raise DanglingReferenceError(f"init references unlisted object '{x}'")
    problem = ProblemModel(
        name=name,
        domain_name=domain.name,
        objects=tuple((n, OBJECT_TYPE) for n in names),
        init=frozenset(init),
        goal=goal,
    )
    return problem, print_problem(problem)


def problem_objects(ext: ObjectExtraction, goal: Optional[Formula] = None) -> List[str]:
    """Объекты задачи: извлечённые плюс упомянутые в цели."""
    names = ext.names()
    if goal is not None:
        names += [x for a in iter_atoms(goal) for x in a.args]
    return dedupe(names)
