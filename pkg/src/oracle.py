# src/oracle.py
# -*- coding: utf-8 -*-
"""
Граница с языковой моделью.

- Шаблоны промптов со слотами [SLOT] и машинной строкой-маркером.
- ScriptedBackend: детерминированная замена модели. Отвечает по истине
  симулятора с шумом epsilon, а на запросы планировщика выдаёт K
  кандидатов эвристической политики с синтетическими logprob по рангу.
- http_complete: POST {base}/chat/completions через httpx с повторами.
"""
from __future__ import annotations

import hashlib
import logging
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

import httpx
import numpy as np
import orjson

from src.pddl import (
    DomainModel, GroundAction, GroundAtom, PddlError, ProblemModel, RECOVERY_ACTIONS,
    apply, applicable, ground_actions, holds, iter_atoms, parse_problem, print_domain,
)
from src.utils import normalize_label, strip_code_fence

log = logging.getLogger(__name__)


# ===============================
# Errors
# ===============================
class OracleError(Exception):
    pass


class TemplateError(OracleError):
    pass


class BackendError(OracleError):
    pass


class BackendNetworkError(BackendError):
    pass


class BackendAuthError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class MissingLogprobsError(BackendError):
    pass


class PromptableParseError(OracleError):
    pass


# ===============================
# Templates
# ===============================
TEMPLATES: Dict[str, str] = {
    "rel_on_in": (
        'Please determine the spatial relationship between [OBJECT1] and [OBJECT2] based on the given '
        'instruction. Return "on" or "in" only.\n'
        "The instruction: [INSTRUCTION]"
    ),
    "opened_check": (
        "Please check if [OBJECT] is opened in the image. Return True or False only. "
        "If there is no [OBJECT] in the image, just return False."
    ),
    "holding_check": (
        "Please determine if the robotic arm is holding the [OBJECT] in the image. Return True or False only. "
        "If there is no [OBJECT] in the image, just return False."
    ),
    "extract_objects": (
        "Please extract the object name and related object name from the given instruction. The related "
        "object name will help humans to find the object.  Also, extract other object names that may be "
        "related to finishing the instruction, such as the target position-related objects. You need to "
        'concatenate multi-word object names by using "_." For example, the "black table" in the instruction '
        'should be converted to "black_table." The answer should be in JSON format without markdown code '
        "block triple backticks:\n"
        "\n"
        "{\n"
        '    "object_name": "str",\n'
        '    "related_object_name": "str",\n'
        '    "other_object_names": [\n'
        '        "str",\n'
        '        "str"\n'
        "    ]\n"
        "}\n"
        "\n"
        "The instruction: [INSTRUCTION]"
    ),
    "select_predicates": (
        "You are required to detect the observation of the current environment by using the predicates and "
        "related objects provided below. You need to give all predicates and objects necessary to check the "
        "current state so that the robot can choose the best action. You don't need to verify each predicate. "
        "Every predicate can be used multiple times. Do NOT return markdown code block triple backticks.\n"
        "\n"
        "Instruction: [INSTRUCTION]\n"
        "The possible ?obj could be: [OBJECTS]\n"
        "\n"
        "The predicate candidates are:\n"
        '"""\n'
        "[PREDICATES]\n"
        '"""\n'
        "\n"
        "The possible actions are:\n"
        '"""\n'
        "[ACTIONS]\n"
        '"""\n'
        "\n"
        "The output is formatted as:\n"
        '"""\n'
        "(on box table)\n"
        "(holding robot box)\n"
        "...\n"
        '"""'
    ),
    "generate_goal": (
        "Based on the instruction, you are using the following predicates to generate the goal of the PDDL "
        "problem. The robot's name is Tiago.\n"
        "\n"
        "Instruction: [INSTRUCTION]\n"
        "\n"
        "The predicate candidates are:\n"
        "\n"
        '"""\n'
        "[PREDICATES]\n"
        '"""\n'
        "\n"
        "You can use (and ) and (or ) to combine the goal predicates. Please only return answers without any "
        "explanation. Do not return markdown code wrappers.\n"
        "\n"
        "Here's an example:\n"
        "[user]\n"
        "Instruction: Pick up the box on the table and place it on the black table.\n"
        "[assistant]\n"
        "(on box black_table)\n"
        "Example finished.\n"
        "\n"
        "Here's what I give to you:\n"
        "Instruction: [INSTRUCTION]"
    ),
    "planner_system": (
        "You are an excellent interpreter of human instructions for daily tasks. Given an instruction and "
        "information about the working environment, you break it down into a sequence of robotic actions. "
        'Please do not begin working until I say "Start working." Instead, simply output the message '
        '"Waiting for next input." Understood?'
    ),
    "planner_env": (
        "Information about environments, objects, and tasks is given as a PDDL function.\n"
        "The Planning Domain Definition Language (PDDL) is a domain-specific language designed for the "
        "Benchmark for creating a standard for Artificial Intelligence (AI) planning.\n"
        "\n"
        "Here's the domain description you used:\n"
        '"""\n'
        "[DOMAIN]\n"
        '"""\n'
        "The =:action= blocks define all the action/subtasks used for completing the task.\n"
        "\n"
        "Later, you will receive the task/problem defined by PDDL and the above domain.\n"
        "Here's an example:\n"
        '"""\n'
        "[EXAMPLE_PROBLEM]\n"
        '"""\n'
        "\n"
        "The =:init= block defines the current observation of the environment.\n"
        "The =:goal= block defines the goal of the task.\n"
        "\n"
        "You need to take action from the current state, not from the start. If the current task is over and "
        'no action is needed for the robot, you can use the "stop" action. If the robot doesn\'t know what to '
        "execute in its current state, for example, it cannot find the target object, you can use the "
        '"alert" action and stop the robot. If the object is not reachable, graspable, or placeable after the '
        'scan, you can use the "adjust" action to adjust the robot\'s pose to make it reachable, graspable, '
        "or placeable.\n"
        "\n"
        "-------------------------------------------------------\n"
        "The texts above are part of the overall instruction. Do not start working yet:"
    ),
    "planner_obs": (
        "Start working. Resume from the environment below.\n"
        "\n"
        "The instruction is as follows:\n"
        '"""\n'
        "[INSTRUCTION]\n"
        '"""\n'
        "\n"
        "The action executed last time is as follows:\n"
        '"""\n'
        "[ACTION]\n"
        '"""\n'
        "\n"
        "The observation of the current environment is as follows:\n"
        '"""\n'
        "[OBSERVATION]\n"
        '"""'
    ),
}
ASSISTANT_ACK = "Understood. Waiting for the next input."

_SLOT_RE = re.compile(r"\[([A-Z][A-Z0-9_]*)\]")
_MARKER_PREFIX = "### template: "
_MARKER_RE = re.compile(r"^### template: ([a-z_]+) \| (\{.*\}) \| machine marker, ignore this line$", re.M)


def template_slots(template_id: str) -> Tuple[str, ...]:
    if template_id not in TEMPLATES:
        raise TemplateError(f"unknown template '{template_id}'")
    seen: List[str] = []
    for name in _SLOT_RE.findall(TEMPLATES[template_id]):
        if name not in seen:
            seen.append(name)
    return tuple(seen)


def render_prompt(template_id: str, slots: Mapping[str, str]) -> str:
    """Подстановка слотов без каких-либо других преобразований текста."""
    missing = [s for s in template_slots(template_id) if s not in slots]
    if missing:
        raise TemplateError(f"{template_id}: missing slot(s) {', '.join(missing)}")
    return _SLOT_RE.sub(lambda m: str(slots[m.group(1)]) if m.group(1) in slots else m.group(0),
                        TEMPLATES[template_id])


def marker_line(template_id: str, **fields) -> str:
    payload = orjson.dumps(fields, option=orjson.OPT_SORT_KEYS).decode()
    return f"{_MARKER_PREFIX}{template_id} | {payload} | machine marker, ignore this line"


def read_marker(req: "BackendRequest") -> Tuple[str, Dict]:
    for _, text in reversed(req.messages):
        m = _MARKER_RE.search(text)
        if m:
            return m.group(1), orjson.loads(m.group(2))
    raise OracleError("unrecognizable request: no template marker")


def with_marker(template_id: str, text: str, **fields) -> str:
    return marker_line(template_id, **fields) + "\n" + text


# ===============================
# Wire types
# ===============================
@dataclass(frozen=True)
class BackendRequest:
    messages: Tuple[Tuple[str, str], ...]
    n_candidates: int = 1
    temperature: float = 0.0
    want_logprobs: bool = False
    max_tokens: int = 256

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    def digest(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        for role, text in self.messages:
            h.update(role.encode())
            h.update(b"\x00")
            h.update(text.encode("utf-8"))
            h.update(b"\x01")
        h.update(f"{self.n_candidates}|{self.want_logprobs}".encode())
        return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class Completion:
    text: str
    tokens: Tuple[Tuple[str, float], ...] = ()

    @property
    def logprob_sum(self) -> float:
        return float(sum(lp for _, lp in self.tokens))


@dataclass(frozen=True)
class BackendResponse:
    candidates: Tuple[Completion, ...] = ()


class Backend(Protocol):
    def complete(self, req: BackendRequest) -> BackendResponse: ...


_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+|\s+")


def tokenize(text: str) -> List[str]:
    """Грубая токенизация: скобки, слова, пробелы. Склейка токенов == исходный текст."""
    return _TOKEN_RE.findall(text)


def synthetic_tokens(text: str, total: float) -> Tuple[Tuple[str, float], ...]:
    toks = tokenize(text) or [text]
    share = total / len(toks)
    return tuple((t, share) for t in toks)


# ===============================
# Scripted backend
# ===============================
@dataclass
class Truth:
    """Что скриптовый бэкенд знает о мире: состояние, сцена, домен."""
    world: "WorldState"  # noqa: F821
    scene: "SceneSpec"  # noqa: F821
    domain: DomainModel


def _flip(rng: np.random.Generator, value: bool, epsilon: float) -> bool:
    if epsilon <= 0.0:
        return value
    if epsilon >= 1.0:
        return not value
    return (not value) if rng.random() < epsilon else value


def _mentions(instruction: str, labels: Mapping[str, str]) -> List[str]:
    """id объектов, упомянутых в инструкции, в порядке первого упоминания."""
    text = normalize_label(instruction)
    found = []
    for oid, label in labels.items():
        m = re.search(r"\b" + re.escape(normalize_label(label)) + r"\b", text)
        if m:
            found.append((m.start(), oid))
    return [oid for _, oid in sorted(found)]


def scripted_extraction(truth: Truth, instruction: str) -> Dict:
    objs = truth.world.objects
    labels = {oid: o.label for oid, o in objs.items()}
    mentioned = _mentions(instruction, labels)
    if not mentioned:
        return {"object_name": "", "related_object_name": "", "other_object_names": []}
    movable = [oid for oid in mentioned if objs[oid].movable]
    obj = movable[0] if movable else mentioned[0]
    o = objs[obj]
    related = o.supported_by or o.contained_in or ""
    others = [oid for oid in mentioned if oid not in (obj, related)]
    return {"object_name": obj, "related_object_name": related, "other_object_names": others}


def scripted_selection(truth: Truth, objects: Sequence[str], obj: str) -> List[str]:
    lines = []
    for oid in objects:
        for pred in ("find", "at", "detected", "graspable", "reachable", "placeable"):
            lines.append(f"({pred} {oid})")
    lines.append(f"(holding {obj})")
    for oid in objects:
        o = truth.world.objects.get(oid)
        if o is not None and o.container:
            lines.append(f"(opened {oid})")
    for oid in objects:
        if oid != obj:
            lines.append(f"(on {obj} {oid})")
            lines.append(f"(in {obj} {oid})")
    return lines


def _promptable_answer(truth: Truth, template: str, fields: Mapping, epsilon: float, rng: np.random.Generator) -> str:
    from src.worldsim import ground_truth_atoms

    args = tuple(fields.get("args", ()))
    known = [a for a in args if a in truth.world.objects]
    atoms = ground_truth_atoms(truth.world, known) if len(known) == len(args) else set()
    if template == "rel_on_in":
        pred = fields.get("predicate", "on")
        value = _flip(rng, GroundAtom(pred, args) in atoms, epsilon)
        other = "in" if pred == "on" else "on"
        return pred if value else other
    pred = "opened" if template == "opened_check" else "holding"
    value = _flip(rng, GroundAtom(pred, args) in atoms, epsilon)
    return "True" if value else "False"


# Разброс ключа сортировки при выдаче кандидатов: порядок ответа "почти по рангу".
ORDER_NOISE = 0.75

_OBS_RE = re.compile(r'The observation of the current environment is as follows:\n"""\n(.*?)\n"""', re.S)


def scripted_complete(req: BackendRequest, truth: Truth, epsilon: float, rng: np.random.Generator) -> BackendResponse:
    """Чистая функция от (запрос, истина, epsilon, состояние rng)."""
    template, fields = read_marker(req)

    def single(text: str) -> BackendResponse:
        tokens = synthetic_tokens(text, 0.0) if req.want_logprobs else ()
        return BackendResponse((Completion(text, tokens),))

    if template in ("rel_on_in", "opened_check", "holding_check"):
        return single(_promptable_answer(truth, template, fields, epsilon, rng))
    if template == "extract_objects":
        return single(orjson.dumps(scripted_extraction(truth, fields.get("instruction", "")),
                                   option=orjson.OPT_INDENT_2).decode())
    if template == "select_predicates":
        return single("\n".join(scripted_selection(truth, fields.get("objects", []), fields.get("object", ""))))
    if template == "generate_goal":
        return single(scripted_goal(truth, fields.get("instruction", "")))
    if template == "planner_obs":
        m = _OBS_RE.search(req.messages[-1][1])
        if m is None:
            raise OracleError("planner request without observation block")
        try:
            problem = parse_problem(m.group(1), truth.domain)
        except PddlError as e:
            raise OracleError(f"planner request with bad problem: {e}") from e
        ranked = heuristic_policy(truth.domain, problem)[: req.n_candidates]
        keys = np.arange(len(ranked)) + rng.normal(0.0, ORDER_NOISE, len(ranked))
        order = [int(i) for i in np.argsort(keys, kind="stable")]
        out = []
        for idx in order:
            text = str(ranked[idx])
            tokens = synthetic_tokens(text, -0.5 * (idx + 1)) if req.want_logprobs else ()
            out.append(Completion(text, tokens))
        return BackendResponse(tuple(out))
    raise OracleError(f"unrecognizable request: template '{template}'")


def scripted_goal(truth: Truth, instruction: str) -> str:
    if normalize_label(instruction) == normalize_label(truth.scene.instruction):
        return truth.scene.goal
    ext = scripted_extraction(truth, instruction)
    surfaces = [oid for oid in ext["other_object_names"] if truth.world.objects[oid].surface]
    if ext["object_name"] and surfaces:
        return f"(on {ext['object_name']} {surfaces[-1]})"
    return "(and)"


class ScriptedBackend:
    """
    Детерминированный бэкенд. Мир подставляется планировщиком перед каждым
    шагом (bind_world). Генератор на вызов выводится из (seed, шаг мира,
    хеш запроса), поэтому порядок параллельных вызовов не важен.
    """

    def __init__(self, scene, domain: DomainModel, epsilon: float = 0.0, seed: int = 0, world=None):
        self.scene = scene
        self.domain = domain
        self.epsilon = float(epsilon)
        self.seed = int(seed)
        self.world = world
        self.calls = 0

    def bind_world(self, world) -> None:
        self.world = world

    def complete(self, req: BackendRequest) -> BackendResponse:
        if self.world is None:
            raise OracleError("scripted backend has no world bound")
        self.calls += 1
        rng = np.random.default_rng([self.seed, self.world.time_step, req.digest()])
        return scripted_complete(req, Truth(self.world, self.scene, self.domain), self.epsilon, rng)


# ===============================
# Heuristic policy
# ===============================
_FEASIBILITY = ("find", "graspable", "reachable", "placeable")


def _goal_target(goal) -> Tuple[Optional[str], Optional[str], str]:
    for a in iter_atoms(goal):
        if a.name in ("on", "in") and len(a.args) == 2:
            return a.args[0], a.args[1], a.name
    for a in iter_atoms(goal):
        if a.name == "holding" and a.args:
            return a.args[0], None, "holding"
    return None, None, ""


def _primary(domain: DomainModel, p: ProblemModel) -> GroundAction:
    init = p.init
    optimistic = not any(a.predicate in _FEASIBILITY for a in init)

    def has(pred: str, *args: str) -> bool:
        if optimistic and pred in _FEASIBILITY:
            return True
        return GroundAtom(pred, tuple(args)) in init

    obj, target, rel = _goal_target(p.goal)
    if obj is None:
        return GroundAction("stop") if holds(p.goal, init) else GroundAction("alert")

    holding_obj = has("holding", obj)
    elsewhere = any(a.predicate in ("on", "in") and a.args[0] == obj and a.args[1] != target for a in init)
    if holds(p.goal, init) and not (rel != "holding" and holding_obj) and not elsewhere:
        if target is None or has("at", target):
            return GroundAction("stop")

    if holding_obj:
        if target is None:
            return GroundAction("stop") if holds(p.goal, init) else GroundAction("alert")
        if not has("at", target):
            return GroundAction("move", (target,)) if has("find", target) else GroundAction("alert")
        if not has("reachable", target) or not has("placeable", target):
            return GroundAction("adjust", (target,))
        verb = "insert" if "shelf" in target else "place"
        return GroundAction(verb, (obj, target))

    if any(a.predicate == "holding" and a.args[0] != obj for a in init):
        return GroundAction("alert")

    for a in init:
        if a.predicate == "in" and a.args[0] == obj:
            box = a.args[1]
            if not has("opened", box) and has("at", box) and not has("detected", obj):
                return GroundAction("pull", (box,)) if has("graspable", box) else GroundAction("adjust", (box,))

    if not has("at", obj):
        return GroundAction("move", (obj,)) if has("find", obj) else GroundAction("alert")
    if not has("detected", obj):
        return GroundAction("scan", (obj,))
    if not has("reachable", obj) or not has("graspable", obj):
        return GroundAction("adjust", (obj,))
    return GroundAction("grasp", (obj,))


def heuristic_policy(domain: DomainModel, p: ProblemModel) -> List[GroundAction]:
    """
    Ранжированный список действий: первое - действие политики, далее
    применимые не-восстановительные действия (сначала меняющие состояние,
    среди них сначала касающиеся объектов цели и их контейнеров), затем прочие.
    """
    primary = _primary(domain, p)
    state = p.init
    focus = {x for a in iter_atoms(p.goal) for x in a.args}
    focus |= {a.args[1] for a in state if a.predicate == "in" and a.args[0] in focus}
    changing, idle, rest = [], [], []
    for ga in ground_actions(domain, p.objects):
        if ga == primary:
            continue
        if ga.name in RECOVERY_ACTIONS:
            rest.append(ga)
        elif applicable(domain, ga, state):
            (changing if apply(domain, ga, state) != state else idle).append(ga)
        else:
            rest.append(ga)
    changing.sort(key=lambda ga: not any(x in focus for x in ga.args))
    return [primary] + changing + idle + rest


# ===============================
# Promptable predicates
# ===============================
@dataclass(frozen=True)
class PromptContext:
    instruction: str
    labels: Mapping[str, str] = field(default_factory=dict)

    def label(self, oid: str) -> str:
        return self.labels.get(oid) or normalize_label(oid)


def promptable_request(pred: str, args: Sequence[str], ctx: PromptContext) -> BackendRequest:
    if pred in ("on", "in"):
        if len(args) != 2:
            raise OracleError(f"({pred}) needs two arguments")
        text = render_prompt("rel_on_in", {"OBJECT1": ctx.label(args[0]), "OBJECT2": ctx.label(args[1]),
                                           "INSTRUCTION": ctx.instruction})
        template = "rel_on_in"
    elif pred in ("opened", "holding"):
        if len(args) != 1:
            raise OracleError(f"({pred}) needs one argument")
        template = "opened_check" if pred == "opened" else "holding_check"
        text = render_prompt(template, {"OBJECT": ctx.label(args[0])})
    else:
        raise OracleError(f"'{pred}' is not a promptable predicate")
    marked = with_marker(template, text, predicate=pred, args=list(args))
    return BackendRequest(messages=(("user", marked),), n_candidates=1, temperature=0.0, max_tokens=8)


def parse_promptable(pred: str, reply: str) -> bool:
    s = (reply or "").strip()
    if pred in ("on", "in"):
        if s not in ("on", "in"):
            raise PromptableParseError(f"expected 'on' or 'in', got {reply!r}")
        return s == pred
    if s == "True":
        return True
    if s == "False":
        return False
    raise PromptableParseError(f"expected True or False, got {reply!r}")


def eval_promptable(pred: str, args: Sequence[str], ctx: PromptContext, backend: Backend) -> bool:
    resp = backend.complete(promptable_request(pred, args, ctx))
    if not resp.candidates:
        raise PromptableParseError(f"({pred} {' '.join(args)}): empty reply")
    return parse_promptable(pred, resp.candidates[0].text)


# ===============================
# Remote chat-completions
# ===============================
@dataclass(frozen=True)
class Endpoint:
    base_url: str
    model: str = "gpt-4o"
    auth_token: str = ""
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.5

    @classmethod
    def from_settings(cls, base_url: Optional[str] = None, model: Optional[str] = None) -> "Endpoint":
        from src.settings import settings

        return cls(
            base_url=(base_url or settings.LLM_BASE_URL).rstrip("/"),
            model=model or settings.LLM_MODEL,
            auth_token=settings.LLM_AUTH_TOKEN,
            timeout=settings.LLM_TIMEOUT,
            retries=settings.LLM_RETRIES,
            backoff=settings.LLM_BACKOFF,
        )


_TRANSIENT = {408, 425, 429, 500, 502, 503, 504}


def _body(req: BackendRequest, model: str) -> Dict:
    body = {
        "model": model,
        "messages": [{"role": r, "content": t} for r, t in req.messages],
        "n": req.n_candidates,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    }
    if req.want_logprobs:
        body["logprobs"] = True
    return body


def parse_chat_response(payload: Mapping, want_logprobs: bool) -> BackendResponse:
    try:
        choices = payload["choices"]
        out = []
        for ch in choices:
            text = ch["message"]["content"] or ""
            tokens: Tuple[Tuple[str, float], ...] = ()
            lp = ch.get("logprobs") or {}
            content = lp.get("content") if isinstance(lp, Mapping) else None
            if content:
                tokens = tuple((str(t["token"]), min(0.0, float(t["logprob"]))) for t in content)
            elif want_logprobs:
                raise MissingLogprobsError("endpoint returned no token logprobs")
            out.append(Completion(str(text), tokens))
    except MissingLogprobsError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedResponseError(f"unexpected response shape: {e}") from e
    return BackendResponse(tuple(out))


def http_complete(req: BackendRequest, endpoint: Endpoint, client: Optional[httpx.Client] = None,
                  sleep: Callable[[float], None] = time.sleep) -> BackendResponse:
    """
    Один POST на /chat/completions. Повторы с экспоненциальной паузой только
    на сетевые ошибки и 408/425/429/5xx; 401/403 - сразу BackendAuthError.
    """
    if not endpoint.base_url:
        raise BackendError("remote backend requires a base URL")
    url = f"{endpoint.base_url.rstrip('/')}/chat/completions"
    headers = {"Content-Type": "application/json"}
    if endpoint.auth_token:
        headers["Authorization"] = f"Bearer {endpoint.auth_token}"
    own = client is None
    http = client or httpx.Client(timeout=endpoint.timeout)
    try:
        last: Optional[Exception] = None
        for attempt in range(endpoint.retries + 1):
            if attempt:
                sleep(endpoint.backoff * (2 ** (attempt - 1)))
            try:
                r = http.post(url, content=orjson.dumps(_body(req, endpoint.model)), headers=headers)
            except httpx.TransportError as e:
                last = BackendNetworkError(f"{type(e).__name__}: {e}")
                log.warning("chat-completions attempt %d/%d failed: %s", attempt + 1, endpoint.retries + 1, e)
                continue
            if r.status_code in (401, 403):
                raise BackendAuthError(f"HTTP {r.status_code}")
            if r.status_code in _TRANSIENT:
                last = BackendNetworkError(f"HTTP {r.status_code}")
                log.warning("chat-completions attempt %d/%d: HTTP %d", attempt + 1, endpoint.retries + 1, r.status_code)
                continue
            if r.status_code >= 400:
                raise BackendError(f"HTTP {r.status_code}: {r.text[:200]}")
            try:
                payload = orjson.loads(r.content)
            except orjson.JSONDecodeError as e:
                raise MalformedResponseError(f"invalid JSON: {e}") from e
            return parse_chat_response(payload, req.want_logprobs)
        raise last or BackendNetworkError("no attempts made")
    finally:
        if own:
            http.close()


class RemoteBackend:
    def __init__(self, endpoint: Endpoint, client: Optional[httpx.Client] = None,
                 world_sink: Optional[Callable[[object], None]] = None):
        self.endpoint = endpoint
        self.client = client
        self.world_sink = world_sink

    def bind_world(self, world) -> None:
        # модели мир не нужен; sink кормит локальный mock-сервер
        if self.world_sink is not None:
            self.world_sink(world)

    def complete(self, req: BackendRequest) -> BackendResponse:
        return http_complete(req, self.endpoint, client=self.client)


# ===============================
# Planner prompt
# ===============================
def planner_messages(domain: DomainModel, example_problem: str, instruction: str,
                     last_action: str, problem_text: str) -> Tuple[Tuple[str, str], ...]:
    system = render_prompt("planner_system", {})
    env = render_prompt("planner_env", {"DOMAIN": print_domain(domain).rstrip(),
                                        "EXAMPLE_PROBLEM": example_problem.rstrip()})
    obs = render_prompt("planner_obs", {"INSTRUCTION": instruction, "ACTION": last_action,
                                        "OBSERVATION": problem_text.rstrip()})
    return (
        ("user", system),
        ("assistant", ASSISTANT_ACK),
        ("user", env),
        ("assistant", ASSISTANT_ACK),
        ("user", with_marker("planner_obs", obs)),
    )


def first_reply_text(resp: BackendResponse) -> str:
    if not resp.candidates:
        raise MalformedResponseError("empty reply")
    return strip_code_fence(resp.candidates[0].text)


__all__ = [
    "TEMPLATES", "render_prompt", "template_slots", "BackendRequest", "BackendResponse", "Completion",
    "ScriptedBackend", "RemoteBackend", "Endpoint", "scripted_complete", "http_complete",
    "eval_promptable", "heuristic_policy", "PromptContext", "planner_messages",
]
