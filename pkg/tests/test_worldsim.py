# tests/test_worldsim.py
import math

import numpy as np
import pytest

from src import worldsim
from src.pddl import GroundAction, GroundAtom, forward_search, parse_formula
from src.planner import oracle_problem
from src.worldsim import FailureReason, ObjectSpec, RobotSpec, SceneError, SceneSpec

from tests.conftest import CANONICAL_SCENES

NO_FAIL = {"navigation": 0.0, "manipulation": 0.0}


def _spec(*objects, pose=(0.5, 0.5, 0.0)):
    return SceneSpec(name="t", robot=RobotSpec(pose=pose), objects=list(objects))


def test_canonical_scenes_are_shipped_and_load():
    assert tuple(worldsim.scene_names()) == CANONICAL_SCENES
    for name in CANONICAL_SCENES:
        spec = worldsim.read_scene(name)
        world = worldsim.load_scene(spec)
        assert world.scene == name
        assert spec.instruction
        assert not worldsim.goal_satisfied(world, parse_formula(spec.goal))


def test_unknown_scene():
    with pytest.raises(SceneError, match="unknown scene"):
        worldsim.read_scene("nosuch")


def test_place_box_initial_state(place_box_world):
    w = place_box_world
    assert set(w.objects) == {"wooden_table", "paper_box", "black_table"}
    assert w.robot.xy == (1.0, 2.5)
    assert w.robot.held is None
    assert w.time_step == 0
    assert worldsim.ground_truth_atoms(w, w.objects) == {GroundAtom("on", ("paper_box", "wooden_table"))}


def test_overlapping_objects_rejected():
    a = ObjectSpec(id="a", label="a", position=(2.0, 2.0, 0.25), bbox=(0.5, 0.5, 0.5))
    b = ObjectSpec(id="b", label="b", position=(2.1, 2.0, 0.25), bbox=(0.5, 0.5, 0.5))
    with pytest.raises(SceneError, match="overlapping"):
        worldsim.load_scene(_spec(a, b))


def test_floating_support_rejected():
    table = ObjectSpec(id="table", label="table", position=(2.0, 2.0, 0.25), bbox=(1.0, 1.0, 0.5), surface=True)
    cup = ObjectSpec(id="cup", label="cup", position=(2.0, 2.0, 0.9), bbox=(0.1, 0.1, 0.1), supported_by="table")
    with pytest.raises(SceneError, match="does not rest"):
        worldsim.load_scene(_spec(table, cup))


def test_support_cycle_rejected():
    a = ObjectSpec(id="a", label="a", position=(2.0, 2.0, 0.25), bbox=(0.5, 0.5, 0.5), supported_by="b")
    b = ObjectSpec(id="b", label="b", position=(4.0, 2.0, 0.25), bbox=(0.5, 0.5, 0.5), supported_by="a")
    with pytest.raises(SceneError):
        worldsim.load_scene(_spec(a, b))


def test_robot_start_inside_object_rejected():
    box = ObjectSpec(id="box", label="box", position=(0.5, 0.5, 0.25), bbox=(0.6, 0.6, 0.5))
    with pytest.raises(SceneError, match="robot start"):
        worldsim.load_scene(_spec(box))


def test_bad_bbox_rejected_by_model():
    with pytest.raises(ValueError):
        ObjectSpec(id="x", label="x", position=(1.0, 1.0, 1.0), bbox=(0.0, 1.0, 1.0))


def test_closed_drawer_hides_content():
    w = worldsim.load_scene("take_pillbox")
    seen = {r.object_id for r in worldsim.observe(w)}
    assert "pill_box" not in seen
    assert {r.object_id for r in worldsim.panoramic_scan(w)} == set(w.objects)


def test_execute_is_a_value_operation(place_box_world, rng):
    before = place_box_world
    after, outcome = worldsim.execute(before, GroundAction("move", ("paper_box",)), rng, NO_FAIL)
    assert outcome.ok
    assert before.robot.xy == (1.0, 2.5)
    assert after.time_step == 1
    assert after.robot.xy != before.robot.xy


def test_move_brings_robot_within_reach(place_box_world, rng):
    after, outcome = worldsim.execute(place_box_world, GroundAction("move", ("paper_box",)), rng, NO_FAIL)
    box = after.objects["paper_box"]
    assert outcome.phase == "navigation"
    assert outcome.duration > 0
    assert math.dist(after.robot.xy, box.position[:2]) <= worldsim.REACH_RADIUS


def test_grasp_from_afar_fails_physically(place_box_world, rng):
    after, outcome = worldsim.execute(place_box_world, GroundAction("grasp", ("paper_box",)), rng, NO_FAIL)
    assert outcome.reward == 0
    assert outcome.failure_reason is not None
    assert after.robot.held is None
    assert after.time_step == 1


def test_place_without_holding(place_box_world, rng):
    _, outcome = worldsim.execute(place_box_world, GroundAction("place", ("paper_box", "black_table")), rng,
                                  NO_FAIL)
    assert outcome.failure_reason is FailureReason.NOTHING_HELD


def test_unknown_target(place_box_world, rng):
    _, outcome = worldsim.execute(place_box_world, GroundAction("move", ("unicorn",)), rng, NO_FAIL)
    assert outcome.failure_reason is FailureReason.BAD_TARGET


def test_non_canonical_action_raises(place_box_world, rng):
    with pytest.raises(ValueError):
        worldsim.execute(place_box_world, GroundAction("teleport", ("paper_box",)), rng, NO_FAIL)


def test_certain_stochastic_failure_leaves_state(place_box_world, rng):
    after, outcome = worldsim.execute(place_box_world, GroundAction("move", ("paper_box",)), rng,
                                      {"navigation": 1.0, "manipulation": 0.0})
    assert outcome.failure_reason is FailureReason.STOCHASTIC_FAILURE
    assert after.robot == place_box_world.robot
    assert after.time_step == 1


def test_stochastic_draws_are_seeded(place_box_world):
    rates = {"navigation": 0.5, "manipulation": 0.5}
    move = GroundAction("move", ("paper_box",))

    def rewards(seed):
        r = np.random.default_rng(seed)
        return [worldsim.execute(place_box_world, move, r, rates)[1].reward for _ in range(20)]

    a, b = rewards(3), rewards(3)
    assert a == b
    assert 0 < sum(a) < 20


def test_stop_and_alert_are_no_ops(place_box_world, rng):
    for name in ("stop", "alert"):
        after, outcome = worldsim.execute(place_box_world, GroundAction(name), rng, NO_FAIL)
        assert outcome.ok
        assert after.objects == place_box_world.objects


def test_pull_opens_drawer_and_reveals_content(rng):
    w = worldsim.load_scene("take_pillbox")
    w, out = worldsim.execute(w, GroundAction("move", ("drawer",)), rng, NO_FAIL)
    assert out.ok
    w, out = worldsim.execute(w, GroundAction("pull", ("drawer",)), rng, NO_FAIL)
    assert out.ok
    assert w.objects["drawer"].opened
    assert GroundAtom("opened", ("drawer",)) in worldsim.ground_truth_atoms(w, w.objects)
    assert not worldsim.occluded(w, w.objects["pill_box"])
    _, again = worldsim.execute(w, GroundAction("pull", ("drawer",)), rng, NO_FAIL)
    assert again.failure_reason is FailureReason.PRECONDITION_VIOLATED


def test_empty_goal_is_satisfied(place_box_world):
    assert worldsim.goal_satisfied(place_box_world, parse_formula("(and)"))


def test_grasp_inside_closed_drawer_is_bad_target(rng):
    w = worldsim.load_scene("take_pillbox")
    _, out = worldsim.execute(w, GroundAction("grasp", ("pill_box",)), rng, NO_FAIL)
    assert out.reward == 0
    assert out.failure_reason is FailureReason.BAD_TARGET


def test_zero_view_range_sees_nothing():
    spec = worldsim.read_scene("place_box")
    blind = spec.model_copy(update={"robot": spec.robot.model_copy(update={"fov_range": 0.0})})
    assert worldsim.observe(worldsim.load_scene(blind)) == []


def _containers_open(spec):
    objects = [o.model_copy(update={"opened": True}) if o.container else o for o in spec.objects]
    return spec.model_copy(update={"objects": objects})


@pytest.mark.parametrize("scene", CANONICAL_SCENES)
def test_search_plan_executes_to_the_goal(domain, rng, scene):
    # у scan/grasp в домене нет (opened ...): контейнеры открыты заранее
    spec = _containers_open(worldsim.read_scene(scene))
    world = worldsim.load_scene(spec)
    goal = parse_formula(spec.goal)
    plan = forward_search(domain, oracle_problem(world, goal))
    assert plan
    for action in plan:
        world, out = worldsim.execute(world, action, rng, NO_FAIL)
        assert out.ok, (str(action), out.failure_reason)
    assert worldsim.goal_satisfied(world, goal)


def test_grasp_does_not_consult_the_arm_map(place_box_world, rng, monkeypatch):
    from src import grounding

    monkeypatch.setattr(grounding, "eval_reachable", lambda *a, **kw: False)
    w = place_box_world
    for action in ("move", "scan", "grasp"):
        w, out = worldsim.execute(w, GroundAction(action, ("paper_box",)), rng, NO_FAIL)
        assert out.ok, action
    assert w.robot.held == "paper_box"
