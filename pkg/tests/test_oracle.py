# tests/test_oracle.py
import numpy as np
import pytest
from fastapi.testclient import TestClient

from src import worldsim
from src.augment import build_problem
from src.mock_llm import create_app
from src.oracle import (
    BackendAuthError, BackendError, BackendNetworkError, BackendRequest, Endpoint, MalformedResponseError,
    MissingLogprobsError, OracleError, PromptContext, RemoteBackend, ScriptedBackend, TEMPLATES, TemplateError,
    eval_promptable, heuristic_policy, http_complete, parse_chat_response, parse_promptable, planner_messages,
    read_marker, render_prompt, synthetic_tokens, template_slots, tokenize, with_marker,
)
from src.pddl import GroundAction, GroundAtom, PddlError, parse_formula

EXPECTED_SLOTS = {
    "rel_on_in": ("OBJECT1", "OBJECT2", "INSTRUCTION"),
    "opened_check": ("OBJECT",),
    "holding_check": ("OBJECT",),
    "extract_objects": ("INSTRUCTION",),
    "select_predicates": ("INSTRUCTION", "OBJECTS", "PREDICATES", "ACTIONS"),
    "generate_goal": ("INSTRUCTION", "PREDICATES"),
    "planner_system": (),
    "planner_env": ("DOMAIN", "EXAMPLE_PROBLEM"),
    "planner_obs": ("INSTRUCTION", "ACTION", "OBSERVATION"),
}


# ---------- templates ----------
def test_nine_templates_with_their_slots():
    assert set(TEMPLATES) == set(EXPECTED_SLOTS)
    for tid, slots in EXPECTED_SLOTS.items():
        assert template_slots(tid) == slots


def test_rel_on_in_golden():
    text = render_prompt("rel_on_in", {"OBJECT1": "paper box", "OBJECT2": "black table",
                                       "INSTRUCTION": "Put the paper box on the black table."})
    assert text == (
        "Please determine the spatial relationship between paper box and black table based on the given "
        'instruction. Return "on" or "in" only.\n'
        "The instruction: Put the paper box on the black table."
    )


def test_holding_check_golden():
    assert render_prompt("holding_check", {"OBJECT": "blue bucket"}) == (
        "Please determine if the robotic arm is holding the blue bucket in the image. Return True or False "
        "only. If there is no blue bucket in the image, just return False."
    )


def test_missing_slot_is_an_error():
    with pytest.raises(TemplateError, match="OBJECT2"):
        render_prompt("rel_on_in", {"OBJECT1": "a", "INSTRUCTION": "b"})
    with pytest.raises(TemplateError):
        render_prompt("no_such_template", {})


def test_marker_survives_inside_request():
    text = with_marker("rel_on_in", "body", predicate="on", args=["a", "b"])
    req = BackendRequest(messages=(("user", "first"), ("user", text)))
    assert read_marker(req) == ("rel_on_in", {"args": ["a", "b"], "predicate": "on"})


def test_unmarked_request_is_unrecognizable():
    with pytest.raises(OracleError, match="unrecognizable"):
        read_marker(BackendRequest(messages=(("user", "hello"),)))


def test_synthetic_tokens_sum_and_concatenate():
    toks = synthetic_tokens("(grasp paper_box)", -1.5)
    assert "".join(t for t, _ in toks) == "(grasp paper_box)"
    assert sum(lp for _, lp in toks) == pytest.approx(-1.5)
    assert "".join(tokenize("(place a b)")) == "(place a b)"


def test_request_needs_a_candidate():
    with pytest.raises(ValueError):
        BackendRequest(messages=(), n_candidates=0)


# ---------- promptable predicates ----------
def _ctx(world, instruction):
    return PromptContext(instruction, {oid: o.label for oid, o in world.objects.items()})


PROMPTABLE_CASES = [
    ("place_box", "on", ("paper_box", "wooden_table")),
    ("place_box", "on", ("paper_box", "black_table")),
    ("place_box", "in", ("paper_box", "wooden_table")),
    ("place_box", "holding", ("paper_box",)),
    ("take_pillbox", "opened", ("drawer",)),
    ("take_pillbox", "in", ("pill_box", "drawer")),
]


@pytest.mark.parametrize("scene,pred,args", PROMPTABLE_CASES)
def test_promptable_answers_match_truth_without_noise(domain, scene, pred, args):
    spec = worldsim.read_scene(scene)
    world = worldsim.load_scene(spec)
    truth = GroundAtom(pred, args) in worldsim.ground_truth_atoms(world, world.objects)
    exact = ScriptedBackend(spec, domain, epsilon=0.0, seed=5, world=world)
    inverted = ScriptedBackend(spec, domain, epsilon=1.0, seed=5, world=world)
    ctx = _ctx(world, spec.instruction)
    assert eval_promptable(pred, args, ctx, exact) is truth
    assert eval_promptable(pred, args, ctx, inverted) is (not truth)


def test_promptable_parse_is_strict():
    assert parse_promptable("on", "on") is True
    assert parse_promptable("in", "on") is False
    assert parse_promptable("opened", " True ") is True
    with pytest.raises(OracleError):
        parse_promptable("holding", "yes")
    with pytest.raises(OracleError):
        parse_promptable("on", "above")


def test_scripted_backend_needs_a_world(domain, place_box_spec):
    b = ScriptedBackend(place_box_spec, domain)
    req = BackendRequest(messages=(("user", with_marker("holding_check", "x", predicate="holding",
                                                       args=["paper_box"])),))
    with pytest.raises(OracleError):
        b.complete(req)


# ---------- planner candidates ----------
PRE_GRASP = {
    GroundAtom("on", ("paper_box", "wooden_table")),
    GroundAtom("find", ("paper_box",)), GroundAtom("find", ("black_table",)),
    GroundAtom("at", ("paper_box",)), GroundAtom("detected", ("paper_box",)),
    GroundAtom("graspable", ("paper_box",)), GroundAtom("reachable", ("paper_box",)),
}


def _pre_grasp_problem(domain):
    return build_problem("pre_grasp", ["paper_box", "wooden_table", "black_table"], frozenset(PRE_GRASP),
                         parse_formula("(on paper_box black_table)"), domain)


def test_policy_grasps_in_pre_grasp_state(domain):
    problem, _ = _pre_grasp_problem(domain)
    ranked = heuristic_policy(domain, problem)
    assert ranked[0] == GroundAction("grasp", ("paper_box",))
    assert len(set(ranked)) == len(ranked)


def test_policy_stops_when_goal_holds_at_target(domain):
    init = frozenset({GroundAtom("on", ("paper_box", "black_table")), GroundAtom("at", ("black_table",))})
    problem, _ = build_problem("done", ["paper_box", "black_table"], init,
                               parse_formula("(on paper_box black_table)"), domain)
    assert heuristic_policy(domain, problem)[0] == GroundAction("stop")


def _planner_request(domain, k, problem_text):
    return BackendRequest(messages=planner_messages(domain, "", "Put the box on the black table.", "None",
                                                    problem_text),
                          n_candidates=k, temperature=0.7, want_logprobs=True)


def test_scripted_planner_ranks_grasp_first(domain, place_box_world, place_box_spec):
    _, text = _pre_grasp_problem(domain)
    backend = ScriptedBackend(place_box_spec, domain, seed=3, world=place_box_world)
    resp = backend.complete(_planner_request(domain, 4, text))
    assert len(resp.candidates) == 4
    best = max(resp.candidates, key=lambda c: c.logprob_sum)
    assert best.text == "(grasp paper_box)"
    assert best.logprob_sum == pytest.approx(-0.5)
    assert sorted(round(c.logprob_sum, 9) for c in resp.candidates) == [-2.0, -1.5, -1.0, -0.5]


def test_scripted_planner_is_deterministic(domain, place_box_world, place_box_spec):
    _, text = _pre_grasp_problem(domain)
    req = _planner_request(domain, 3, text)
    a = ScriptedBackend(place_box_spec, domain, seed=9, world=place_box_world).complete(req)
    b = ScriptedBackend(place_box_spec, domain, seed=9, world=place_box_world).complete(req)
    assert a == b


def test_single_candidate(domain, place_box_world, place_box_spec):
    _, text = _pre_grasp_problem(domain)
    resp = ScriptedBackend(place_box_spec, domain, world=place_box_world).complete(_planner_request(domain, 1, text))
    assert [c.text for c in resp.candidates] == ["(grasp paper_box)"]


# ---------- remote backend against the mock server ----------
def _endpoint(**kw):
    base = dict(base_url="http://testserver", model="mock", auth_token="", timeout=5.0, retries=2, backoff=0.25)
    base.update(kw)
    return Endpoint(**base)


@pytest.fixture
def scripted(domain, place_box_spec, place_box_world):
    return ScriptedBackend(place_box_spec, domain, seed=1, world=place_box_world)


def test_http_returns_k_candidates_with_logprobs(domain, scripted):
    app = create_app(scripted)
    _, text = _pre_grasp_problem(domain)
    with TestClient(app) as client:
        resp = http_complete(_planner_request(domain, 2, text), _endpoint(), client=client)
    assert len(resp.candidates) == 2
    assert all(c.tokens and c.logprob_sum <= 0.0 for c in resp.candidates)
    assert "(grasp paper_box)" in {c.text for c in resp.candidates}


def test_http_auth_error_is_not_retried(domain, scripted):
    app = create_app(scripted, token="secret")
    _, text = _pre_grasp_problem(domain)
    with TestClient(app) as client:
        with pytest.raises(BackendAuthError):
            http_complete(_planner_request(domain, 2, text), _endpoint(auth_token="wrong"), client=client,
                          sleep=lambda s: None)
    assert app.state.requests == 1


def test_http_retries_transient_status(domain, scripted):
    app = create_app(scripted, fail_statuses=[503])
    sleeps = []
    _, text = _pre_grasp_problem(domain)
    with TestClient(app) as client:
        resp = http_complete(_planner_request(domain, 2, text), _endpoint(), client=client, sleep=sleeps.append)
    assert len(resp.candidates) == 2
    assert app.state.requests == 2
    assert sleeps == [0.25]


def test_http_gives_up_after_retries(domain, scripted):
    app = create_app(scripted, fail_statuses=[503, 502, 429])
    sleeps = []
    _, text = _pre_grasp_problem(domain)
    with TestClient(app) as client:
        with pytest.raises(BackendNetworkError):
            http_complete(_planner_request(domain, 2, text), _endpoint(), client=client, sleep=sleeps.append)
    assert sleeps == [0.25, 0.5]
    assert app.state.requests == 3


def test_http_client_error_is_not_retried(domain, scripted):
    app = create_app(scripted, fail_statuses=[400])
    _, text = _pre_grasp_problem(domain)
    with TestClient(app) as client:
        with pytest.raises(BackendError):
            http_complete(_planner_request(domain, 2, text), _endpoint(), client=client, sleep=lambda s: None)
    assert app.state.requests == 1


def test_http_missing_logprobs(domain, scripted):
    app = create_app(scripted, drop_logprobs=True)
    _, text = _pre_grasp_problem(domain)
    with TestClient(app) as client:
        with pytest.raises(MissingLogprobsError):
            http_complete(_planner_request(domain, 2, text), _endpoint(), client=client)


def test_remote_backend_uses_given_client(domain, scripted):
    _, text = _pre_grasp_problem(domain)
    with TestClient(create_app(scripted)) as client:
        backend = RemoteBackend(_endpoint(), client=client)
        resp = backend.complete(_planner_request(domain, 3, text))
    assert len(resp.candidates) == 3


def test_remote_backend_requires_url():
    with pytest.raises(BackendError):
        http_complete(BackendRequest(messages=(("user", "x"),)), _endpoint(base_url=""))


def test_malformed_payloads():
    with pytest.raises(MalformedResponseError):
        parse_chat_response({"nothing": []}, want_logprobs=False)
    with pytest.raises(MalformedResponseError):
        parse_chat_response({"choices": [{"message": None}]}, want_logprobs=False)
    ok = parse_chat_response({"choices": [{"message": {"content": "(stop)"}}]}, want_logprobs=False)
    assert ok.candidates[0].text == "(stop)"


def test_pddl_error_is_not_backend_error():
    assert not issubclass(PddlError, OracleError)


# ---------- promptable answers along whole episodes ----------
def _episode_states(domain, scene):
    from src.planner import PlannerConfig, run_episode

    spec = worldsim.read_scene(scene)
    cfg = PlannerConfig(epsilon=0.0, p_fail=0.0, timestamps=False)
    trace = run_episode(spec, spec.instruction, cfg, ScriptedBackend(spec, domain), domain)
    world = worldsim.load_scene(spec)
    states = [world]
    rng = np.random.default_rng(0)
    for step in trace.steps:
        world, _ = worldsim.execute(world, step.chosen, rng, {"navigation": 0.0, "manipulation": 0.0})
        states.append(world)
    return spec, states


def _promptable_queries(world):
    ids = list(world.objects)
    for a in ids:
        yield "holding", (a,)
        if world.objects[a].container:
            yield "opened", (a,)
        for b in ids:
            if a != b:
                yield "on", (a, b)
                yield "in", (a, b)


@pytest.mark.parametrize("scene", ["insert_book", "lift_bucket", "place_box", "take_jacket", "take_pillbox"])
def test_promptable_answers_track_truth_at_every_step(domain, scene):
    spec, states = _episode_states(domain, scene)
    assert len(states) > 2
    for world in states:
        truth = worldsim.ground_truth_atoms(world, world.objects)
        exact = ScriptedBackend(spec, domain, epsilon=0.0, seed=2, world=world)
        inverted = ScriptedBackend(spec, domain, epsilon=1.0, seed=2, world=world)
        ctx = _ctx(world, spec.instruction)
        for pred, args in _promptable_queries(world):
            expected = GroundAtom(pred, args) in truth
            assert eval_promptable(pred, args, ctx, exact) is expected, (world.time_step, pred, args)
            assert eval_promptable(pred, args, ctx, inverted) is (not expected), (world.time_step, pred, args)


# ---------- order of candidates in the reply ----------
def test_reply_order_mostly_follows_rank(domain, place_box_world, place_box_spec):
    _, text = _pre_grasp_problem(domain)
    req = _planner_request(domain, 4, text)
    first_is_best = 0
    for seed in range(200):
        resp = ScriptedBackend(place_box_spec, domain, seed=seed, world=place_box_world).complete(req)
        first_is_best += resp.candidates[0].text == "(grasp paper_box)"
    assert 120 <= first_is_best < 200


def test_runner_up_candidates_touch_goal_objects(domain):
    problem, _ = _pre_grasp_problem(domain)
    ranked = heuristic_policy(domain, problem)
    assert ranked[0] == GroundAction("grasp", ("paper_box",))
    assert any(x in ("paper_box", "black_table") for x in ranked[1].args)
    assert GroundAction("move", ("black_table",)) in ranked[1:4]
