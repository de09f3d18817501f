# tests/test_pddl.py
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from src.pddl import (
    PROMPTABLE, ActionSchema, And, Atom, CANONICAL_ACTIONS, DomainModel, GroundAction, GroundAtom,
    InapplicableActionError, Not, Or, PddlSemanticError, PddlSyntaxError, PredicateSchema, ProblemModel,
    SearchBudgetExceeded, applicable, apply, forward_search, ground_actions, holds, missing_preconditions,
    parse_domain, parse_formula, parse_problem, print_domain, print_problem,
)


def test_room_domain_has_thirteen_actions_and_ten_predicates(domain):
    assert len(domain.actions) == 13
    assert len(domain.predicates) == 10
    assert {a.name for a in domain.actions} == set(CANONICAL_ACTIONS)


def test_domain_print_parse_fixpoint(domain):
    again = parse_domain(print_domain(domain))
    assert again == domain
    assert print_domain(again) == print_domain(domain)


def test_problem_print_parse_fixpoint(domain, place_box_problem):
    again = parse_problem(print_problem(place_box_problem), domain)
    assert again == place_box_problem


NAMES = ["box", "cup", "door", "shelf_1", "table_a", "table_b"]


@st.composite
def problems(draw, domain):
    names = draw(st.lists(st.sampled_from(NAMES), min_size=1, max_size=5, unique=True))
    atoms = []
    for p in domain.predicates:
        for _ in range(draw(st.integers(0, 2))):
            atoms.append(GroundAtom(p.name, tuple(draw(st.sampled_from(names)) for _ in range(p.arity))))
    goal_atoms = draw(st.lists(st.sampled_from(atoms), max_size=3, unique=True)) if atoms else []
    goal = And(tuple(Atom(a.predicate, a.args) for a in goal_atoms))
    return ProblemModel(
        name="generated",
        domain_name=domain.name,
        objects=tuple((n, "locatable") for n in names),
        init=frozenset(atoms),
        goal=goal,
    )


@given(data=st.data())
@hsettings(max_examples=60, deadline=None)
def test_generated_problems_survive_print_parse(domain, data):
    p = data.draw(problems(domain))
    assert parse_problem(print_problem(p), domain) == p


PRED_NAMES = ["on", "in", "holding", "opened", "at", "near", "clean", "lit"]
ACTION_NAMES = ["fetch", "drop", "wipe", "toggle", "carry"]
VARS = ["?a", "?b", "?c"]


@st.composite
def domains(draw):
    names = draw(st.lists(st.sampled_from(PRED_NAMES), min_size=1, max_size=5, unique=True))
    preds = [PredicateSchema("ready", (), "grounded")]
    for n in names:
        arity = draw(st.integers(0, 2))
        preds.append(PredicateSchema(n, tuple((v, "locatable") for v in VARS[:arity]),
                                     "promptable" if n in PROMPTABLE else "grounded"))
    actions = []
    for a in draw(st.lists(st.sampled_from(ACTION_NAMES), max_size=4, unique=True)):
        params = tuple((v, "locatable") for v in VARS[:draw(st.integers(0, 3))])
        variables = [v for v, _ in params]
        usable = [p for p in preds if variables or not p.arity]

        def literal():
            p = draw(st.sampled_from(usable))
            atom = Atom(p.name, tuple(draw(st.sampled_from(variables)) for _ in range(p.arity)))
            return Not(atom) if draw(st.booleans()) else atom

        pre = [literal() for _ in range(draw(st.integers(0, 3)))]
        if pre and draw(st.booleans()):
            pre = [Or(tuple(pre))]
        eff = [literal() for _ in range(draw(st.integers(0, 2)))]
        actions.append(ActionSchema(a, params, And(tuple(pre)), And(tuple(eff))))
    return DomainModel(
        name="generated",
        requirements=(":strips", ":typing", ":negative-preconditions"),
        types=(("locatable", "object"),),
        predicates=tuple(preds),
        actions=tuple(actions),
    )


@given(d=domains())
@hsettings(max_examples=100, deadline=None)
def test_generated_domains_survive_print_parse(d):
    text = print_domain(d)
    again = parse_domain(text)
    assert again == d
    assert print_domain(again) == text


def test_unclosed_paren_reports_location():
    with pytest.raises(PddlSyntaxError) as ei:
        parse_domain("(define (domain x)\n  (:predicates (on ?a)\n")
    assert ei.value.line == 2
    assert ei.value.expected == "')'"
    assert "line 2" in str(ei.value)


def test_init_arity_mismatch_rejected(domain):
    text = """(define (problem bad) (:domain room)
      (:objects paper_box - locatable)
      (:init (on paper_box))
      (:goal (and)))"""
    with pytest.raises(PddlSemanticError, match="arity"):
        parse_problem(text, domain)


def test_unknown_predicate_in_goal_rejected(domain):
    text = """(define (problem bad) (:domain room)
      (:objects a - locatable)
      (:init)
      (:goal (flying a)))"""
    with pytest.raises(PddlSemanticError):
        parse_problem(text, domain)


def test_quantifiers_are_rejected():
    with pytest.raises(PddlSemanticError):
        parse_formula("(forall (?x) (on ?x table))")


def test_grasp_applicable_only_with_all_four_atoms(domain):
    full = {GroundAtom(p, ("paper_box",)) for p in ("at", "detected", "graspable", "reachable")}
    grasp = GroundAction("grasp", ("paper_box",))
    assert applicable(domain, grasp, full)
    for atom in full:
        assert not applicable(domain, grasp, full - {atom})
        assert missing_preconditions(domain, grasp, full - {atom}) == [(True, atom)]


def test_move_needs_find(domain):
    move = GroundAction("move", ("black_table",))
    assert not applicable(domain, move, set())
    assert applicable(domain, move, {GroundAtom("find", ("black_table",))})


def test_stop_and_alert_hold_in_any_state(domain):
    assert applicable(domain, GroundAction("stop"), set())
    assert applicable(domain, GroundAction("alert"), {GroundAtom("holding", ("x",))})


def test_scan_negative_precondition(domain):
    at = GroundAtom("at", ("cup",))
    det = GroundAtom("detected", ("cup",))
    scan = GroundAction("scan", ("cup",))
    assert applicable(domain, scan, {at})
    assert not applicable(domain, scan, {at, det})
    assert missing_preconditions(domain, scan, {at, det}) == [(False, det)]


def test_place_effects(domain):
    state = {
        GroundAtom("at", ("black_table",)), GroundAtom("holding", ("paper_box",)),
        GroundAtom("placeable", ("black_table",)), GroundAtom("reachable", ("black_table",)),
    }
    after = apply(domain, GroundAction("place", ("paper_box", "black_table")), state)
    assert GroundAtom("on", ("paper_box", "black_table")) in after
    assert GroundAtom("holding", ("paper_box",)) not in after


def test_apply_inapplicable_raises(domain):
    with pytest.raises(InapplicableActionError):
        apply(domain, GroundAction("grasp", ("paper_box",)), set())


def test_unknown_action_is_semantic_error(domain):
    with pytest.raises(PddlSemanticError):
        applicable(domain, GroundAction("fly", ("x",)), set())


def test_forward_search_place_box(domain, place_box_problem):
    plan = forward_search(domain, place_box_problem)
    assert [str(a) for a in plan] == [
        "(move paper_box)", "(scan paper_box)", "(grasp paper_box)",
        "(move black_table)", "(place paper_box black_table)",
    ]
    state = place_box_problem.init
    for a in plan:
        state = apply(domain, a, state)
    assert holds(place_box_problem.goal, state)


def test_search_tie_break_follows_object_order(domain, place_box_problem):
    # порядок действий задаётся списком объектов задачи, не алфавитом
    objects = tuple(sorted(place_box_problem.objects))
    p = ProblemModel(place_box_problem.name, place_box_problem.domain_name, objects,
                     place_box_problem.init, place_box_problem.goal)
    plan = forward_search(domain, p)
    assert len(plan) == 5
    assert plan[0] == GroundAction("move", ("black_table",))
    ground = ground_actions(domain, objects)
    assert ground.index(GroundAction("place", ("paper_box", "black_table"))) < \
        ground.index(GroundAction("insert", ("paper_box", "black_table")))


def test_forward_search_proves_unsolvable(domain, place_box_problem):
    init = place_box_problem.init - {GroundAtom("find", ("black_table",))}
    p = ProblemModel(place_box_problem.name, place_box_problem.domain_name, place_box_problem.objects,
                     init, place_box_problem.goal)
    assert forward_search(domain, p) is None


def test_forward_search_budget(domain, place_box_problem):
    with pytest.raises(SearchBudgetExceeded):
        forward_search(domain, place_box_problem, budget=1)


def test_goal_already_true_gives_empty_plan(domain, place_box_problem):
    p = ProblemModel("done", "room", place_box_problem.objects,
                     frozenset({GroundAtom("on", ("paper_box", "black_table"))}),
                     parse_formula("(on paper_box black_table)"))
    assert forward_search(domain, p) == []


def test_ground_actions_enumerate_all_bindings(domain):
    objects = [(n, "locatable") for n in ("a", "b", "c")]
    ground = ground_actions(domain, objects)
    by_name = {}
    for g in ground:
        by_name.setdefault(g.name, []).append(g)
    assert len(by_name["move"]) == 3
    assert len(by_name["place"]) == 9
    assert by_name["stop"] == [GroundAction("stop")]


def test_closed_world_negation():
    assert holds(parse_formula("(not (opened drawer))"), set())
    assert holds(parse_formula("(and)"), {GroundAtom("opened", ("drawer",))})
    assert not holds(parse_formula("(not (opened drawer))"), {GroundAtom("opened", ("drawer",))})
