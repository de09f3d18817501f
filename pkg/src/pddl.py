# src/pddl.py
# -*- coding: utf-8 -*-
"""
PDDL: разбор и печать домена/задачи, замкнутый мир, заземление действий
и перебор в ширину как эталонный планировщик для тестов.

Поддерживается подмножество, которое реально используется доменом room:
STRIPS-эффекты (атомы и их отрицания), and/or/not/= в предусловиях и целях,
типизированные параметры. Флаги :requirements принимаются и игнорируются.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

log = logging.getLogger(__name__)

PROMPTABLE = frozenset({"on", "in", "holding", "opened"})
GROUNDED = frozenset({"at", "find", "graspable", "placeable", "detected", "reachable"})
RECOVERY_ACTIONS = frozenset({"adjust", "alert", "stop"})
CANONICAL_ACTIONS = (
    "move", "scan", "grasp", "place", "pull", "push", "lift",
    "rotate", "reach", "insert", "adjust", "alert", "stop",
)
ROOT_TYPE = "object"


# ===============================
# Errors
# ===============================
class PddlError(Exception):
    pass


class PddlSyntaxError(PddlError):
    def __init__(self, message: str, line: int = 0, column: int = 0, expected: str = ""):
        self.line = line
        self.column = column
        self.expected = expected
        where = f"line {line}, column {column}"
        tail = f" (expected {expected})" if expected else ""
        super().__init__(f"{where}: {message}{tail}")


class PddlSemanticError(PddlError):
    pass


class UngroundedFormulaError(PddlError):
    pass


class InapplicableActionError(PddlError):
    pass


class SearchBudgetExceeded(PddlError):
    def __init__(self, budget: int):
        self.budget = budget
        super().__init__(f"search budget of {budget} nodes exhausted")


# ===============================
# S-expressions
# ===============================
@dataclass(frozen=True)
class Token:
    text: str
    line: int
    column: int

    @property
    def lower(self) -> str:
        return self.text.lower()


@dataclass(frozen=True)
class SList:
    items: Tuple[Union["SList", Token], ...]
    line: int
    column: int


SExpr = Union[SList, Token]


def _tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in "()":
            tokens.append(Token(ch, line, col))
            i += 1
            col += 1
            continue
        start, start_col = i, col
        while i < n and not text[i].isspace() and text[i] not in "();":
            i += 1
            col += 1
        tokens.append(Token(text[start:i], line, start_col))
    return tokens


def parse_sexprs(text: str) -> List[SExpr]:
    """Все выражения верхнего уровня. Комментарии `;` отброшены."""
    tokens = _tokenize(text)
    stack: List[Tuple[Token, List[SExpr]]] = []
    top: List[SExpr] = []
    for tok in tokens:
        if tok.text == "(":
            stack.append((tok, []))
        elif tok.text == ")":
            if not stack:
                raise PddlSyntaxError("unexpected ')'", tok.line, tok.column)
            opener, items = stack.pop()
            node = SList(tuple(items), opener.line, opener.column)
            (stack[-1][1] if stack else top).append(node)
        else:
            (stack[-1][1] if stack else top).append(tok)
    if stack:
        opener = stack[-1][0]
        last = tokens[-1] if tokens else opener
        raise PddlSyntaxError(
            f"unclosed '(' opened at line {opener.line}, column {opener.column}",
            last.line, last.column, expected="')'",
        )
    return top


def _expect_list(e: SExpr, what: str) -> SList:
    if not isinstance(e, SList):
        raise PddlSyntaxError(f"unexpected '{e.text}'", e.line, e.column, expected=f"'(' starting {what}")
    return e


def _expect_token(e: SExpr, what: str) -> Token:
    if not isinstance(e, Token):
        raise PddlSyntaxError("unexpected '('", e.line, e.column, expected=what)
    return e


def _head(e: SList) -> str:
    if not e.items or not isinstance(e.items[0], Token):
        return ""
    return e.items[0].lower


# ===============================
# Formulas
# ===============================
@dataclass(frozen=True)
class Atom:
    name: str
    args: Tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(" + " ".join((self.name,) + self.args) + ")"


@dataclass(frozen=True)
class And:
    children: Tuple["Formula", ...] = ()

    def __str__(self) -> str:
        return "(and" + "".join(" " + str(c) for c in self.children) + ")"


@dataclass(frozen=True)
class Or:
    children: Tuple["Formula", ...] = ()

    def __str__(self) -> str:
        return "(or" + "".join(" " + str(c) for c in self.children) + ")"


@dataclass(frozen=True)
class Not:
    child: "Formula"

    def __str__(self) -> str:
        return f"(not {self.child})"


Formula = Union[Atom, And, Or, Not]


def iter_atoms(f: Formula) -> Iterable[Atom]:
    if isinstance(f, Atom):
        yield f
    elif isinstance(f, (And, Or)):
        for c in f.children:
            yield from iter_atoms(c)
    elif isinstance(f, Not):
        yield from iter_atoms(f.child)


def _formula_from(e: SExpr) -> Formula:
    lst = _expect_list(e, "a formula")
    if not lst.items:
        return And(())
    head_tok = _expect_token(lst.items[0], "a predicate name or connective")
    head = head_tok.lower
    rest = lst.items[1:]
    if head == "and":
        return And(tuple(_formula_from(x) for x in rest))
    if head == "or":
        return Or(tuple(_formula_from(x) for x in rest))
    if head == "not":
        if len(rest) != 1:
            raise PddlSyntaxError("'not' takes exactly one formula", lst.line, lst.column, expected="one formula")
        return Not(_formula_from(rest[0]))
    if head in ("forall", "exists", "when", "imply"):
        raise PddlSemanticError(f"line {lst.line}: '{head}' is not supported")
    args = tuple(_expect_token(x, "an argument").text for x in rest)
    return Atom("=" if head == "=" else head_tok.text, args)


def parse_formula(text: str) -> Formula:
    """Одна формула из текста, например цель от модели."""
    exprs = parse_sexprs(text)
    if not exprs:
        raise PddlSyntaxError("empty formula", 1, 1, expected="'('")
    if len(exprs) > 1:
        extra = exprs[1]
        raise PddlSyntaxError("trailing input after formula", extra.line, extra.column, expected="end of input")
    return _formula_from(exprs[0])


# ===============================
# Domain / problem model
# ===============================
@dataclass(frozen=True)
class PredicateSchema:
    name: str
    params: Tuple[Tuple[str, str], ...]
    kind: str  # promptable | grounded

    @property
    def arity(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: Tuple[Tuple[str, str], ...]
    precondition: Formula
    effect: Formula

    def effect_literals(self) -> Tuple[Tuple[bool, Atom], ...]:
        """(положительный?, атом) для каждого литерала эффекта."""
        out = []
        items = self.effect.children if isinstance(self.effect, And) else (self.effect,)
        for lit in items:
            if isinstance(lit, Not):
                out.append((False, lit.child))
            else:
                out.append((True, lit))
        return tuple(out)


@dataclass(frozen=True)
class DomainModel:
    name: str
    requirements: Tuple[str, ...] = ()
    types: Tuple[Tuple[str, str], ...] = ()  # (тип, родитель) в порядке объявления
    predicates: Tuple[PredicateSchema, ...] = ()
    actions: Tuple[ActionSchema, ...] = ()

    @property
    def type_parents(self) -> Dict[str, str]:
        return dict(self.types)

    def predicate(self, name: str) -> Optional[PredicateSchema]:
        for p in self.predicates:
            if p.name == name:
                return p
        return None

    def action(self, name: str) -> Optional[ActionSchema]:
        for a in self.actions:
            if a.name == name:
                return a
        return None

    def is_subtype(self, child: str, parent: str) -> bool:
        parents = self.type_parents
        seen = set()
        cur: Optional[str] = child
        while cur is not None and cur not in seen:
            if cur == parent:
                return True
            seen.add(cur)
            cur = parents.get(cur) if cur != ROOT_TYPE else None
        return parent == ROOT_TYPE


@dataclass(frozen=True, order=True)
class GroundAtom:
    predicate: str
    args: Tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate,) + self.args) + ")"


State = FrozenSet[GroundAtom]


@dataclass(frozen=True)
class ProblemModel:
    name: str
    domain_name: str
    objects: Tuple[Tuple[str, str], ...] = ()
    init: FrozenSet[GroundAtom] = frozenset()
    goal: Formula = field(default_factory=And)

    @property
    def object_names(self) -> Tuple[str, ...]:
        return tuple(o for o, _ in self.objects)


@dataclass(frozen=True, order=True)
class GroundAction:
    name: str
    args: Tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(" + " ".join((self.name,) + self.args) + ")"


# ===============================
# Parsing
# ===============================
def _typed_list(items: Sequence[SExpr], what: str) -> List[Tuple[str, str]]:
    """`a b - t c` -> [(a, t), (b, t), (c, object)]."""
    out: List[Tuple[str, str]] = []
    pending: List[str] = []
    i = 0
    while i < len(items):
        tok = _expect_token(items[i], what)
        if tok.text == "-":
            if i + 1 >= len(items):
                raise PddlSyntaxError("dangling '-'", tok.line, tok.column, expected="a type name")
            type_tok = _expect_token(items[i + 1], "a type name")
            if not pending:
                raise PddlSyntaxError("type without names", tok.line, tok.column, expected=what)
            out.extend((name, type_tok.text) for name in pending)
            pending = []
            i += 2
            continue
        pending.append(tok.text)
        i += 1
    out.extend((name, ROOT_TYPE) for name in pending)
    return out


def _define_header(exprs: List[SExpr], kind: str) -> Tuple[str, SList]:
    if len(exprs) != 1:
        where = exprs[1] if len(exprs) > 1 else None
        line, col = (where.line, where.column) if where else (1, 1)
        raise PddlSyntaxError("expected a single (define ...) form", line, col, expected="'(define'")
    root = _expect_list(exprs[0], "(define ...)")
    if _head(root) != "define" or len(root.items) < 2:
        raise PddlSyntaxError("missing 'define'", root.line, root.column, expected="'define'")
    header = _expect_list(root.items[1], f"({kind} NAME)")
    if _head(header) != kind or len(header.items) != 2:
        raise PddlSyntaxError(f"bad {kind} header", header.line, header.column, expected=f"({kind} NAME)")
    name = _expect_token(header.items[1], f"{kind} name").text
    return name, root


def _check_formula(f: Formula, preds: Mapping[str, PredicateSchema], variables: Mapping[str, str],
                   objects: Optional[Mapping[str, str]], where: str) -> None:
    for atom in iter_atoms(f):
        if atom.name == "=":
            if len(atom.args) != 2:
                raise PddlSemanticError(f"{where}: '=' takes two arguments")
        else:
            schema = preds.get(atom.name)
            if schema is None:
                raise PddlSemanticError(f"{where}: undeclared predicate '{atom.name}'")
            if schema.arity != len(atom.args):
                raise PddlSemanticError(
                    f"{where}: arity mismatch for '{atom.name}': expected {schema.arity}, got {len(atom.args)}"
                )
        for arg in atom.args:
            if arg.startswith("?"):
                if arg not in variables:
                    raise PddlSemanticError(f"{where}: undeclared variable '{arg}'")
            elif objects is None or arg not in objects:
                raise PddlSemanticError(f"{where}: unknown object '{arg}'")


def _is_literal_conjunction(f: Formula) -> bool:
    items = f.children if isinstance(f, And) else (f,)
    for lit in items:
        if isinstance(lit, Not):
            lit = lit.child
        if not isinstance(lit, Atom) or lit.name == "=":
            return False
    return True


def _parse_predicates(section: SList, types: Mapping[str, str]) -> List[PredicateSchema]:
    out: List[PredicateSchema] = []
    for item in section.items[1:]:
        lst = _expect_list(item, "a predicate declaration")
        if _head(lst) == ":predicates":  # вложенный блок, как в исходном тексте домена
            out.extend(_parse_predicates(lst, types))
            continue
        name = _expect_token(lst.items[0], "a predicate name").text if lst.items else ""
        if not name:
            raise PddlSyntaxError("empty predicate declaration", lst.line, lst.column, expected="a predicate name")
        params = _typed_list(lst.items[1:], "a predicate parameter")
        for _, t in params:
            if t != ROOT_TYPE and t not in types:
                raise PddlSemanticError(f"predicate '{name}': undeclared type '{t}'")
        kind = "promptable" if name in PROMPTABLE else "grounded"
        out.append(PredicateSchema(name, tuple(params), kind))
    return out


def _parse_action(section: SList, preds: Mapping[str, PredicateSchema], types: Mapping[str, str]) -> ActionSchema:
    items = section.items
    if len(items) < 2:
        raise PddlSyntaxError("action without name", section.line, section.column, expected="an action name")
    name = _expect_token(items[1], "an action name").text
    params: List[Tuple[str, str]] = []
    pre: Formula = And(())
    eff: Formula = And(())
    i = 2
    while i < len(items):
        key = _expect_token(items[i], "an action keyword")
        if i + 1 >= len(items):
            raise PddlSyntaxError(f"'{key.text}' without value", key.line, key.column, expected="a value")
        value = items[i + 1]
        k = key.lower
        if k == ":parameters":
            params = _typed_list(_expect_list(value, "parameters").items, "a parameter")
        elif k == ":precondition":
            pre = _formula_from(value)
        elif k == ":effect":
            eff = _formula_from(value)
        else:
            raise PddlSyntaxError(f"unknown action keyword '{key.text}'", key.line, key.column,
                                  expected=":parameters, :precondition or :effect")
        i += 2
    where = f"action '{name}'"
    for pname, ptype in params:
        if not pname.startswith("?"):
            raise PddlSemanticError(f"{where}: parameter '{pname}' must start with '?'")
        if ptype != ROOT_TYPE and ptype not in types:
            raise PddlSemanticError(f"{where}: undeclared type '{ptype}'")
    variables = dict(params)
    _check_formula(pre, preds, variables, None, where)
    _check_formula(eff, preds, variables, None, where)
    if not _is_literal_conjunction(eff):
        raise PddlSemanticError(f"{where}: effect must be a conjunction of literals")
    return ActionSchema(name, tuple(params), pre, eff)


def parse_domain(text: str) -> DomainModel:
    name, root = _define_header(parse_sexprs(text), "domain")
    requirements: List[str] = []
    types: Dict[str, str] = {}
    type_order: List[str] = []
    predicates: List[PredicateSchema] = []
    pending_actions: List[SList] = []

    for raw in root.items[2:]:
        section = _expect_list(raw, "a domain section")
        head = _head(section)
        if head == ":requirements":
            requirements = [_expect_token(x, "a requirement flag").lower for x in section.items[1:]]
        elif head == ":types":
            for tname, parent in _typed_list(section.items[1:], "a type name"):
                if tname not in types:
                    type_order.append(tname)
                types[tname] = parent
        elif head == ":predicates":
            predicates.extend(_parse_predicates(section, types))
        elif head == ":functions":
            if len(section.items) > 1:
                log.warning("domain %s: numeric fluents ignored", name)
        elif head == ":action":
            pending_actions.append(section)
        else:
            raise PddlSemanticError(f"line {section.line}: unsupported domain section '{head or '?'}'")

    for tname in type_order:
        parent = types[tname]
        if parent != ROOT_TYPE and parent not in types:
            raise PddlSemanticError(f"type '{tname}': undeclared parent type '{parent}'")

    pred_map: Dict[str, PredicateSchema] = {}
    for p in predicates:
        if p.name in pred_map:
            raise PddlSemanticError(f"duplicate predicate '{p.name}'")
        pred_map[p.name] = p

    actions: List[ActionSchema] = []
    for section in pending_actions:
        a = _parse_action(section, pred_map, types)
        if any(x.name == a.name for x in actions):
            raise PddlSemanticError(f"duplicate action '{a.name}'")
        actions.append(a)

    return DomainModel(
        name=name,
        requirements=tuple(requirements),
        types=tuple((t, types[t]) for t in type_order),
        predicates=tuple(predicates),
        actions=tuple(actions),
    )


def parse_problem(text: str, domain: Optional[DomainModel] = None) -> ProblemModel:
    """
    Разбор задачи. Если передан домен, атомы init и цели сверяются
    с объявленными предикатами (неизвестные отвергаются).
    """
    name, root = _define_header(parse_sexprs(text), "problem")
    domain_name = ""
    objects: List[Tuple[str, str]] = []
    init_exprs: List[SExpr] = []
    goal: Formula = And(())

    for raw in root.items[2:]:
        section = _expect_list(raw, "a problem section")
        head = _head(section)
        if head == ":domain":
            if len(section.items) != 2:
                raise PddlSyntaxError("bad :domain", section.line, section.column, expected="(:domain NAME)")
            domain_name = _expect_token(section.items[1], "a domain name").text
        elif head == ":objects":
            objects.extend(_typed_list(section.items[1:], "an object name"))
        elif head == ":init":
            init_exprs.extend(section.items[1:])
        elif head == ":goal":
            if len(section.items) != 2:
                raise PddlSyntaxError("bad :goal", section.line, section.column, expected="(:goal FORMULA)")
            goal = _formula_from(section.items[1])
        else:
            raise PddlSemanticError(f"line {section.line}: unsupported problem section '{head or '?'}'")

    obj_map: Dict[str, str] = {}
    for oname, otype in objects:
        if oname in obj_map:
            raise PddlSemanticError(f"duplicate object '{oname}'")
        if domain is not None and otype != ROOT_TYPE and otype not in domain.type_parents:
            raise PddlSemanticError(f"object '{oname}': undeclared type '{otype}'")
        obj_map[oname] = otype

    init = set()
    for e in init_exprs:
        f = _formula_from(e)
        if not isinstance(f, Atom) or f.name == "=":
            line, col = (e.line, e.column)
            raise PddlSemanticError(f"line {line}, column {col}: init entries must be positive atoms")
        for arg in f.args:
            if arg.startswith("?") or arg not in obj_map:
                raise PddlSemanticError(f"init atom {f}: unknown object '{arg}'")
        init.add(GroundAtom(f.name, f.args))

    if domain is not None:
        preds = {p.name: p for p in domain.predicates}
        for atom in init:
            schema = preds.get(atom.predicate)
            if schema is None:
                raise PddlSemanticError(f"init atom {atom}: unknown predicate '{atom.predicate}'")
            if schema.arity != len(atom.args):
                raise PddlSemanticError(f"init atom {atom}: arity mismatch")
        _check_formula(goal, preds, {}, obj_map, "goal")
    else:
        for atom in iter_atoms(goal):
            for arg in atom.args:
                if arg.startswith("?") or arg not in obj_map:
                    raise PddlSemanticError(f"goal atom {atom}: unknown object '{arg}'")

    return ProblemModel(
        name=name,
        domain_name=domain_name,
        objects=tuple(objects),
        init=frozenset(init),
        goal=goal,
    )


# ===============================
# Printing
# ===============================
def _print_typed(pairs: Iterable[Tuple[str, str]]) -> str:
    return " ".join(f"{n} - {t}" for n, t in pairs)


def print_domain(d: DomainModel) -> str:
    sections: List[str] = []
    if d.requirements:
        sections.append("  (:requirements " + " ".join(d.requirements) + ")")
    if d.types:
        body = "\n".join(f"    {t} - {p}" for t, p in d.types)
        sections.append("  (:types\n" + body + "\n  )")
    if d.predicates:
        lines = []
        for p in d.predicates:
            params = _print_typed(p.params)
            lines.append(f"    ({p.name}{' ' + params if params else ''})")
        sections.append("  (:predicates\n" + "\n".join(lines) + "\n  )")
    for a in d.actions:
        sections.append(
            f"  (:action {a.name}\n"
            f"    :parameters ({_print_typed(a.params)})\n"
            f"    :precondition {a.precondition}\n"
            f"    :effect {a.effect}\n"
            f"  )"
        )
    if not sections:
        return f"(define (domain {d.name}))\n"
    return f"(define (domain {d.name})\n" + "\n".join(sections) + "\n)\n"


def print_problem(p: ProblemModel) -> str:
    lines = [f"(define (problem {p.name})"]
    if p.domain_name:
        lines.append(f"  (:domain {p.domain_name})")
    if p.objects:
        lines.append("  (:objects")
        lines.extend(f"    {n} - {t}" for n, t in p.objects)
        lines.append("  )")
    lines.append("  (:init")
    lines.extend(f"    {a}" for a in sorted(p.init))
    lines.append("  )")
    lines.append(f"  (:goal {p.goal})")
    lines.append(")")
    return "\n".join(lines) + "\n"


# ===============================
# Semantics (closed world)
# ===============================
def _resolve(arg: str, binding: Optional[Mapping[str, str]]) -> str:
    if not arg.startswith("?"):
        return arg
    if binding is None or arg not in binding:
        raise UngroundedFormulaError(f"free variable '{arg}'")
    return binding[arg]


def holds(f: Formula, state: Iterable[GroundAtom], binding: Optional[Mapping[str, str]] = None) -> bool:
    """Истинность формулы в замкнутом мире: атом истинен iff он есть в state."""
    if not isinstance(state, (set, frozenset)):
        state = frozenset(state)
    if isinstance(f, Atom):
        args = tuple(_resolve(a, binding) for a in f.args)
        if f.name == "=":
            return args[0] == args[1]
        return GroundAtom(f.name, args) in state
    if isinstance(f, And):
        return all(holds(c, state, binding) for c in f.children)
    if isinstance(f, Or):
        return any(holds(c, state, binding) for c in f.children)
    if isinstance(f, Not):
        return not holds(f.child, state, binding)
    raise PddlError(f"not a formula: {f!r}")


def ground_actions(d: DomainModel, objects: Sequence[Tuple[str, str]]) -> List[GroundAction]:
    """
    Все типосогласованные связывания (самосвязывания тоже). Порядок
    лексикографический по ключу (индексы аргументов в списке объектов,
    индекс схемы в домене): сначала всё про первый объект задачи.
    """
    index = {o: i for i, (o, _) in enumerate(objects)}
    keyed = []
    for schema_idx, a in enumerate(d.actions):
        pools = [[o for o, t in objects if d.is_subtype(t, ptype)] for _, ptype in a.params]
        for combo in product(*pools):
            key = (tuple(index[o] for o in combo), schema_idx)
            keyed.append((key, GroundAction(a.name, tuple(combo))))
    keyed.sort(key=lambda kv: kv[0])
    return [ga for _, ga in keyed]


def _schema_for(d: DomainModel, a: GroundAction) -> ActionSchema:
    schema = d.action(a.name)
    if schema is None:
        raise PddlSemanticError(f"unknown action '{a.name}'")
    if len(schema.params) != len(a.args):
        raise PddlSemanticError(f"{a}: expected {len(schema.params)} arguments, got {len(a.args)}")
    return schema


def check_action(d: DomainModel, a: GroundAction, objects: Sequence[Tuple[str, str]]) -> None:
    """Проверка арности и типов аргументов относительно объектов задачи."""
    schema = _schema_for(d, a)
    types = dict(objects)
    for arg, (_, ptype) in zip(a.args, schema.params):
        if arg not in types:
            raise PddlSemanticError(f"{a}: unknown object '{arg}'")
        if not d.is_subtype(types[arg], ptype):
            raise PddlSemanticError(f"{a}: '{arg}' is not a {ptype}")


def _binding(schema: ActionSchema, a: GroundAction) -> Dict[str, str]:
    return {p: v for (p, _), v in zip(schema.params, a.args)}


def applicable(d: DomainModel, a: GroundAction, state: Iterable[GroundAtom]) -> bool:
    schema = _schema_for(d, a)
    return holds(schema.precondition, state, _binding(schema, a))


def missing_preconditions(d: DomainModel, a: GroundAction, state: Iterable[GroundAtom]) -> List[Tuple[bool, GroundAtom]]:
    """
    Невыполненные литералы конъюнктивного предусловия: (положительный?, атом).
    Для дизъюнкций и вложенных связок возвращается пустой список, если
    предусловие в целом выполнено, иначе [(True, атом)] первого атома.
    """
    schema = _schema_for(d, a)
    binding = _binding(schema, a)
    state = frozenset(state)
    pre = schema.precondition
    items = pre.children if isinstance(pre, And) else (pre,)
    out: List[Tuple[bool, GroundAtom]] = []
    for lit in items:
        if holds(lit, state, binding):
            continue
        positive = not isinstance(lit, Not)
        atom = lit if positive else lit.child
        if not isinstance(atom, Atom):
            first = next(iter_atoms(lit), None)
            if first is None:
                continue
            atom, positive = first, True
        out.append((positive, GroundAtom(atom.name, tuple(_resolve(x, binding) for x in atom.args))))
    return out


def apply(d: DomainModel, a: GroundAction, state: Iterable[GroundAtom]) -> State:
    state = frozenset(state)
    schema = _schema_for(d, a)
    binding = _binding(schema, a)
    if not holds(schema.precondition, state, binding):
        raise InapplicableActionError(f"{a} is not applicable")
    adds, dels = set(), set()
    for positive, atom in schema.effect_literals():
        g = GroundAtom(atom.name, tuple(_resolve(x, binding) for x in atom.args))
        (adds if positive else dels).add(g)
    return frozenset((state - dels) | adds)


# ===============================
# Oracle: breadth-first search
# ===============================
def substitute(f: Formula, binding: Mapping[str, str]) -> Formula:
    """Подставить значения переменных; несвязанные переменные остаются как есть."""
    if isinstance(f, Atom):
        return Atom(f.name, tuple(binding.get(x, x) for x in f.args))
    if isinstance(f, And):
        return And(tuple(substitute(c, binding) for c in f.children))
    if isinstance(f, Or):
        return Or(tuple(substitute(c, binding) for c in f.children))
    return Not(substitute(f.child, binding))


@dataclass(frozen=True)
class _Compiled:
    action: GroundAction
    pre: Formula
    adds: FrozenSet[GroundAtom]
    dels: FrozenSet[GroundAtom]


def _compile(d: DomainModel, objects: Sequence[Tuple[str, str]]) -> List[_Compiled]:
    out = []
    for ga in ground_actions(d, objects):
        schema = _schema_for(d, ga)
        binding = _binding(schema, ga)
        adds, dels = set(), set()
        for positive, atom in schema.effect_literals():
            g = GroundAtom(atom.name, tuple(binding.get(x, x) for x in atom.args))
            (adds if positive else dels).add(g)
        out.append(_Compiled(ga, substitute(schema.precondition, binding), frozenset(adds), frozenset(dels)))
    return out


def forward_search(d: DomainModel, p: ProblemModel, budget: int = 200_000) -> Optional[List[GroundAction]]:
    """
    Поиск в ширину по apply(). Возвращает кратчайший план (при равной длине
    лексикографически первый), None если задача доказуемо неразрешима,
    SearchBudgetExceeded если исчерпан бюджет раскрытых узлов.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    start: State = frozenset(p.init)
    if holds(p.goal, start):
        return []
    compiled = _compile(d, p.objects)
    parents: Dict[State, Tuple[Optional[State], Optional[GroundAction]]] = {start: (None, None)}
    frontier = deque([start])
    expanded = 0
    while frontier:
        if expanded >= budget:
            raise SearchBudgetExceeded(budget)
        state = frontier.popleft()
        expanded += 1
        for c in compiled:
            if not holds(c.pre, state):
                continue
            child = frozenset((state - c.dels) | c.adds)
            if child in parents:
                continue
            parents[child] = (state, c.action)
            if holds(p.goal, child):
                plan: List[GroundAction] = []
                cur: Optional[State] = child
                while cur is not None:
                    prev, act = parents[cur]
                    if act is not None:
                        plan.append(act)
                    cur = prev
                plan.reverse()
                log.debug("forward_search: plan of %d steps after %d expansions", len(plan), expanded)
                return plan
            frontier.append(child)
    return None


# ===============================
# Canonical domain
# ===============================
@lru_cache(maxsize=4)
def load_domain(path: Optional[str] = None) -> DomainModel:
    from src.settings import settings

    p = Path(path) if path else settings.domain_path
    return parse_domain(p.read_text(encoding="utf-8"))
