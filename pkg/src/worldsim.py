# src/worldsim.py
# -*- coding: utf-8 -*-
"""
Симулятор комнаты: физическое состояние, скан-записи в конусе камеры,
исполнение 13 примитивов с инъекцией отказов и «истинные» атомы для
скриптового бэкенда и метрик.

WorldState - значение: execute() возвращает новое состояние и не трогает
старое. Все случайные решения идут через переданный numpy Generator.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.pddl import And, CANONICAL_ACTIONS, Formula, GroundAction, GroundAtom, holds
from src.utils import normalize_name

log = logging.getLogger(__name__)

Vec3 = Tuple[float, float, float]

REACH_RADIUS = 0.9          # база -> центроид объекта, м
SUPPORT_TOL = 0.02          # допуск «лежит на верхней грани», м
LIFT_DELTA = 0.10
LIFT_MAX = 0.30
ARM_MOUNT_RANGE = (0.10, 1.40)
HOLD_REACH = 0.35           # удержанный объект перед базой, м
ADJUST_STEP = 0.20
ADJUST_NEAR = 0.50          # ближе этого adjust базу не двигает
BASE_SPEED = 0.5            # м/с, для симулированной длительности навигации

# Фиксированные времена манипуляций (сек), навигация считается по пути.
PRIMITIVE_SECONDS = {
    "scan": 2.0, "adjust": 3.0, "grasp": 12.0, "place": 10.0, "insert": 12.0,
    "pull": 8.0, "push": 8.0, "lift": 5.0, "rotate": 5.0, "reach": 6.0,
    "alert": 0.0, "stop": 0.0,
}
NAVIGATION = frozenset({"move", "scan"})
MANIPULATION = frozenset({"grasp", "place", "insert", "pull", "push", "lift", "rotate", "reach"})


class SceneError(Exception):
    """Неизвестная сцена, битый файл, пересечения или нарушенная опора."""


class FailureReason(str, Enum):
    PRECONDITION_VIOLATED = "precondition_violated"
    STOCHASTIC_FAILURE = "stochastic_failure"
    PATH_BLOCKED = "path_blocked"
    UNREACHABLE = "unreachable"
    NOTHING_HELD = "nothing_held"
    BAD_TARGET = "bad_target"


# ===============================
# State
# ===============================
@dataclass(frozen=True)
class ObjectRecord:
    id: str
    label: str
    position: Vec3
    bbox: Vec3  # полные размеры по x, y, z
    supported_by: Optional[str] = None
    contained_in: Optional[str] = None
    opened: bool = False
    container: bool = False
    surface: bool = False
    movable: bool = False
    shelf: bool = False

    @property
    def lo(self) -> Vec3:
        return tuple(p - e / 2.0 for p, e in zip(self.position, self.bbox))  # type: ignore[return-value]

    @property
    def hi(self) -> Vec3:
        return tuple(p + e / 2.0 for p, e in zip(self.position, self.bbox))  # type: ignore[return-value]

    @property
    def top(self) -> float:
        return self.position[2] + self.bbox[2] / 2.0


@dataclass(frozen=True)
class RobotRecord:
    base_pose: Tuple[float, float, float]  # x, y, heading
    head_tilt: float = 0.0
    held: Optional[str] = None
    fov_half_angle: float = 0.6
    fov_range: float = 3.0
    head_height: float = 1.2
    arm_height: float = 0.70
    lift_offset: float = 0.0

    @property
    def xy(self) -> Tuple[float, float]:
        return self.base_pose[0], self.base_pose[1]

    @property
    def heading(self) -> float:
        return self.base_pose[2]


@dataclass(frozen=True)
class WorldState:
    objects: Mapping[str, ObjectRecord]
    robot: RobotRecord
    time_step: int = 0
    bounds: Tuple[Vec3, Vec3] = ((0.0, 0.0, 0.0), (6.0, 5.0, 2.0))
    scene: str = ""

    def obj(self, obj_id: str) -> ObjectRecord:
        try:
            return self.objects[obj_id]
        except KeyError:
            raise SceneError(f"unknown object '{obj_id}'") from None

    def with_objects(self, **changed: ObjectRecord) -> "WorldState":
        objs = dict(self.objects)
        objs.update(changed)
        return replace(self, objects=objs)


@dataclass(frozen=True)
class ScanRecord:
    object_id: str
    label: str
    centroid: Vec3
    bbox: Vec3


@dataclass(frozen=True)
class ActionOutcome:
    reward: int
    failure_reason: Optional[FailureReason] = None
    phase: str = "none"          # navigation | manipulation | none
    duration: float = 0.0        # симулированные секунды

    @property
    def ok(self) -> bool:
        return self.reward == 1


# ===============================
# Scene files
# ===============================
class ObjectSpec(BaseModel):
    id: str = ""
    label: str
    position: Tuple[float, float, float]
    bbox: Tuple[float, float, float]
    supported_by: Optional[str] = None
    contained_in: Optional[str] = None
    opened: bool = False
    container: bool = False
    surface: bool = False
    movable: bool = False
    shelf: bool = False

    @field_validator("bbox")
    @classmethod
    def _positive(cls, v):
        if min(v) <= 0:
            raise ValueError("bbox extents must be positive")
        return v


class RobotSpec(BaseModel):
    pose: Tuple[float, float, float]
    head_tilt: float = 0.0
    fov_half_angle: float = 0.6
    fov_range: float = 3.0
    head_height: float = 1.2
    arm_height: float = 0.70


class BoundsSpec(BaseModel):
    min: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    max: Tuple[float, float, float] = (6.0, 5.0, 2.0)


class SceneSpec(BaseModel):
    """Описание сцены: объекты, старт робота, вероятности отказов, seed."""
    name: str
    instruction: str = ""
    goal: str = "(and)"
    bounds: BoundsSpec = Field(default_factory=BoundsSpec)
    robot: RobotSpec
    p_fail: Dict[str, float] = Field(default_factory=lambda: {"navigation": 0.05, "manipulation": 0.05})
    seed: int = 0
    objects: List[ObjectSpec] = Field(default_factory=list)

    def with_p_fail(self, p: float) -> "SceneSpec":
        return self.model_copy(update={"p_fail": {"navigation": p, "manipulation": p}})


def scene_names(scenes_dir: Optional[Path] = None) -> List[str]:
    from src.settings import settings

    d = scenes_dir or settings.scenes_path
    return sorted(p.stem for p in Path(d).glob("*.yaml"))


def read_scene(name_or_path: Union[str, Path], scenes_dir: Optional[Path] = None) -> SceneSpec:
    """Имя канонической сцены или путь к YAML-файлу -> SceneSpec."""
    from src.settings import settings

    p = Path(name_or_path)
    if p.suffix not in (".yaml", ".yml"):
        p = Path(scenes_dir or settings.scenes_path) / f"{name_or_path}.yaml"
    if not p.is_file():
        raise SceneError(f"unknown scene '{name_or_path}'")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        return SceneSpec.model_validate(raw)
    except (yaml.YAMLError, ValidationError) as e:
        raise SceneError(f"{p.name}: {e}") from e


def _overlap_volume(a: ObjectRecord, b: ObjectRecord) -> float:
    v = 1.0
    for lo1, hi1, lo2, hi2 in zip(a.lo, a.hi, b.lo, b.hi):
        d = min(hi1, hi2) - max(lo1, lo2)
        if d <= 0:
            return 0.0
        v *= d
    return v


def _inside(inner: ObjectRecord, outer: ObjectRecord, tol: float = 1e-6) -> bool:
    return all(ol - tol <= il and ih <= oh + tol for il, ih, ol, oh in zip(inner.lo, inner.hi, outer.lo, outer.hi))


def _validate(objects: Mapping[str, ObjectRecord], robot: RobotRecord, bounds: Tuple[Vec3, Vec3]) -> None:
    for o in objects.values():
        for ref in (o.supported_by, o.contained_in):
            if ref is not None and ref not in objects:
                raise SceneError(f"{o.id}: unknown reference '{ref}'")
        if o.supported_by and o.contained_in:
            raise SceneError(f"{o.id}: both supported and contained")
        if any(l < b - 1e-9 for l, b in zip(o.lo, bounds[0])) or any(h > b + 1e-9 for h, b in zip(o.hi, bounds[1])):
            raise SceneError(f"{o.id}: outside scene bounds")
        if o.supported_by:
            sup = objects[o.supported_by]
            if abs(o.lo[2] - sup.top) > SUPPORT_TOL:
                raise SceneError(f"{o.id}: does not rest on {sup.id}")
        if o.contained_in:
            box = objects[o.contained_in]
            if not box.container:
                raise SceneError(f"{o.id}: {box.id} is not a container")
            if not _inside(o, box):
                raise SceneError(f"{o.id}: lies outside {box.id}")

    # цикл в графе опоры/вложения
    for o in objects.values():
        seen = {o.id}
        cur = o.supported_by or o.contained_in
        while cur is not None:
            if cur in seen:
                raise SceneError(f"{o.id}: support cycle")
            seen.add(cur)
            nxt = objects[cur]
            cur = nxt.supported_by or nxt.contained_in

    ids = list(objects)
    for i, a_id in enumerate(ids):
        for b_id in ids[i + 1:]:
            a, b = objects[a_id], objects[b_id]
            if a.contained_in == b.id or b.contained_in == a.id:
                continue
            if _overlap_volume(a, b) > 1e-9:
                raise SceneError(f"overlapping placements: {a.id} and {b.id}")

    x, y = robot.xy
    for o in objects.values():
        if o.lo[0] < x < o.hi[0] and o.lo[1] < y < o.hi[1] and o.lo[2] < 0.05:
            raise SceneError(f"robot start inside {o.id}")


def load_scene(spec: Union[SceneSpec, str, Path]) -> WorldState:
    """SceneSpec (или имя сцены) -> начальное состояние, робот в стартовой позе."""
    if not isinstance(spec, SceneSpec):
        spec = read_scene(spec)
    objects: Dict[str, ObjectRecord] = {}
    for o in spec.objects:
        oid = o.id or normalize_name(o.label)
        if not oid:
            raise SceneError("object without id or label")
        if oid in objects:
            raise SceneError(f"duplicate object id '{oid}'")
        objects[oid] = ObjectRecord(
            id=oid, label=o.label, position=tuple(o.position), bbox=tuple(o.bbox),
            supported_by=o.supported_by, contained_in=o.contained_in, opened=o.opened,
            container=o.container, surface=o.surface, movable=o.movable, shelf=o.shelf,
        )
    r = spec.robot
    robot = RobotRecord(
        base_pose=(r.pose[0], r.pose[1], _wrap(r.pose[2])), head_tilt=r.head_tilt,
        fov_half_angle=r.fov_half_angle, fov_range=r.fov_range,
        head_height=r.head_height, arm_height=_clamp(r.arm_height, *ARM_MOUNT_RANGE),
    )
    bounds = (tuple(spec.bounds.min), tuple(spec.bounds.max))
    _validate(objects, robot, bounds)
    log.debug("scene %s loaded: %d objects", spec.name, len(objects))
    return WorldState(objects=objects, robot=robot, time_step=0, bounds=bounds, scene=spec.name)


# ===============================
# Perception
# ===============================
def _wrap(angle: float) -> float:
    """Угол в [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _clamp(v: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, v))


def head_position(robot: RobotRecord) -> Vec3:
    return robot.base_pose[0], robot.base_pose[1], robot.head_height


def gaze(robot: RobotRecord) -> np.ndarray:
    h, t = robot.heading, robot.head_tilt
    return np.array([math.cos(h) * math.cos(t), math.sin(h) * math.cos(t), -math.sin(t)])


def occluded(s: WorldState, o: ObjectRecord) -> bool:
    """Содержимое закрытого контейнера не видно и недоступно."""
    cur = o
    while cur.contained_in is not None:
        box = s.objects[cur.contained_in]
        if not box.opened:
            return True
        cur = box
    return False


def in_fov(robot: RobotRecord, point: Vec3) -> bool:
    if robot.fov_range <= 0:
        return False
    v = np.asarray(point, dtype=float) - np.asarray(head_position(robot), dtype=float)
    d = float(np.linalg.norm(v))
    if d > robot.fov_range:
        return False
    if d < 1e-9:
        return True
    cos = float(np.clip(np.dot(v / d, gaze(robot)), -1.0, 1.0))
    return math.acos(cos) <= robot.fov_half_angle + 1e-12


def _record(o: ObjectRecord) -> ScanRecord:
    return ScanRecord(object_id=o.id, label=o.label, centroid=o.position, bbox=o.bbox)


def observe(s: WorldState) -> List[ScanRecord]:
    return [_record(o) for o in s.objects.values() if not occluded(s, o) and in_fov(s.robot, o.position)]


def panoramic_scan(s: WorldState) -> List[ScanRecord]:
    """
    Круговой обзор для предварительной карты: робот виртуально поворачивается
    на 360°, все объекты вне рук попадают в карту (навигации нужны и
    содержимое ящиков, и то, что за спиной).
    """
    return [_record(o) for o in s.objects.values() if o.id != s.robot.held]


# ===============================
# Ground truth
# ===============================
def ground_truth_atoms(s: WorldState, objects: Iterable[str]) -> Set[GroundAtom]:
    ids = list(objects)
    for oid in ids:
        s.obj(oid)
    wanted = set(ids)
    out: Set[GroundAtom] = set()
    for oid in ids:
        o = s.objects[oid]
        if o.supported_by in wanted:
            out.add(GroundAtom("on", (oid, o.supported_by)))
        if o.contained_in in wanted:
            out.add(GroundAtom("in", (oid, o.contained_in)))
        if s.robot.held == oid:
            out.add(GroundAtom("holding", (oid,)))
        if o.container and o.opened:
            out.add(GroundAtom("opened", (oid,)))
    return out


def goal_satisfied(s: WorldState, g: Formula) -> bool:
    if isinstance(g, And) and not g.children:
        return True
    return holds(g, ground_truth_atoms(s, s.objects))


# ===============================
# Execution
# ===============================
def _dist_xy(a: Tuple[float, float], b: Union[Vec3, Tuple[float, float]]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _carry(s: WorldState) -> WorldState:
    """Удержанный объект следует за роботом."""
    held = s.robot.held
    if held is None:
        return s
    o = s.objects[held]
    x, y, h = s.robot.base_pose
    z = s.robot.arm_height + s.robot.lift_offset + o.bbox[2] / 2.0
    pos = (x + HOLD_REACH * math.cos(h), y + HOLD_REACH * math.sin(h), z)
    return s.with_objects(**{held: replace(o, position=pos, supported_by=None, contained_in=None)})


def _look_at(robot: RobotRecord, point: Vec3) -> RobotRecord:
    x, y, _ = robot.base_pose
    heading = robot.heading
    if _dist_xy((x, y), point) > 1e-9:
        heading = _wrap(math.atan2(point[1] - y, point[0] - x))
    tilt = math.atan2(robot.head_height - point[2], max(_dist_xy((x, y), point), 1e-9))
    return replace(robot, base_pose=(x, y, heading), head_tilt=tilt)


def aim_height(o: ObjectRecord) -> float:
    """Высота, на которую нацеливается рука: верх поверхности или центр объекта."""
    return o.top if o.surface else o.position[2]


def _fail(reason: FailureReason, phase: str) -> ActionOutcome:
    return ActionOutcome(reward=0, failure_reason=reason, phase=phase)


def _phase(name: str) -> str:
    if name in ("move", "scan", "adjust"):
        return "navigation"
    if name in MANIPULATION:
        return "manipulation"
    return "none"


def _do_move(s: WorldState, target: ObjectRecord) -> Tuple[Optional[WorldState], Optional[FailureReason], float]:
    from src import grounding

    if s.robot.held == target.id:
        return None, FailureReason.BAD_TARGET, 0.0
    grid = grounding.world_occupancy(s)
    start = grid.cell_of(s.robot.xy)
    cells = grid.footprint(target)
    goals = grounding.approach_cells(grid.occ, cells)
    path = grounding.astar(grid.occ, start, goals)
    if path is None:
        return None, FailureReason.PATH_BLOCKED, 0.0
    x, y, heading = s.robot.base_pose
    if len(path.cells) >= 2:
        (i0, j0), (i1, j1) = path.cells[-2], path.cells[-1]
        heading = _wrap(math.atan2(j1 - j0, i1 - i0))
        x, y = grid.center(path.cells[-1])
    robot = replace(s.robot, base_pose=(x, y, heading), head_tilt=0.0)
    length = path.cost * grid.resolution
    return _carry(replace(s, robot=robot)), None, length / BASE_SPEED


def _do_adjust(s: WorldState, target: ObjectRecord) -> WorldState:
    from src import grounding

    robot = s.robot
    point = (target.position[0], target.position[1], aim_height(target))
    if target.id != robot.held and _dist_xy(robot.xy, point) > ADJUST_NEAR:
        grid = grounding.world_occupancy(s)
        best = grounding.closer_cell(grid, robot.xy, point, ADJUST_STEP)
        if best is not None:
            robot = replace(robot, base_pose=(best[0], best[1], robot.heading))
    robot = _look_at(robot, point)
    robot = replace(robot, arm_height=_clamp(point[2] - grounding.ARM.lift_range / 2.0, *ARM_MOUNT_RANGE))
    return _carry(replace(s, robot=robot))


def _physical(s: WorldState, a: GroundAction) -> Tuple[Optional[WorldState], Optional[FailureReason], float]:
    """Проверка физических предусловий по истине. (новое состояние | None, причина, длительность)."""
    from src import grounding

    name = a.name
    seconds = PRIMITIVE_SECONDS.get(name, 0.0)
    if name in ("alert", "stop"):
        return s, None, 0.0
    if not a.args or any(x not in s.objects for x in a.args):
        return None, FailureReason.BAD_TARGET, 0.0
    t = s.objects[a.args[0]]
    robot = s.robot

    if name == "move":
        return _do_move(s, t)

    if name == "scan":
        if robot.held == t.id:
            return s, None, seconds
        if occluded(s, t):
            return None, FailureReason.BAD_TARGET, 0.0
        if math.dist(head_position(robot), t.position) > robot.fov_range:
            return None, FailureReason.UNREACHABLE, 0.0
        return replace(s, robot=_look_at(robot, t.position)), None, seconds

    if name == "adjust":
        return _do_adjust(s, t), None, seconds

    if name == "grasp":
        if robot.held is not None:
            return None, FailureReason.PRECONDITION_VIOLATED, 0.0
        if not t.movable or occluded(s, t):
            return None, FailureReason.BAD_TARGET, 0.0
        if not grounding.eval_detected(s, t.id):
            return None, FailureReason.PRECONDITION_VIOLATED, 0.0
        if _dist_xy(robot.xy, t.position) > REACH_RADIUS:
            return None, FailureReason.UNREACHABLE, 0.0
        nxt = s.with_objects(**{t.id: replace(t, supported_by=None, contained_in=None)})
        nxt = replace(nxt, robot=replace(robot, held=t.id, lift_offset=0.0))
        return _carry(nxt), None, seconds

    if name in ("place", "insert"):
        if len(a.args) != 2 or a.args[1] not in s.objects:
            return None, FailureReason.BAD_TARGET, 0.0
        surface = s.objects[a.args[1]]
        if robot.held != t.id:
            return None, FailureReason.NOTHING_HELD, 0.0
        if not surface.surface or surface.id == t.id or (name == "insert" and not surface.shelf):
            return None, FailureReason.BAD_TARGET, 0.0
        if _dist_xy(robot.xy, surface.position) > REACH_RADIUS:
            return None, FailureReason.UNREACHABLE, 0.0
        if not grounding.eval_placeable(s, surface.id):
            return None, FailureReason.BAD_TARGET, 0.0
        point = grounding.place_point(s, surface.id)
        nxt = s.with_objects(**{t.id: replace(t, position=point, supported_by=surface.id, contained_in=None)})
        return replace(nxt, robot=replace(robot, held=None, lift_offset=0.0)), None, seconds

    if name in ("pull", "push"):
        if not t.container:
            return None, FailureReason.BAD_TARGET, 0.0
        if t.opened == (name == "pull"):
            return None, FailureReason.PRECONDITION_VIOLATED, 0.0
        if _dist_xy(robot.xy, t.position) > REACH_RADIUS:
            return None, FailureReason.UNREACHABLE, 0.0
        return s.with_objects(**{t.id: replace(t, opened=(name == "pull"))}), None, seconds

    if name in ("lift", "rotate"):
        if robot.held != t.id:
            return None, FailureReason.NOTHING_HELD, 0.0
        if name == "rotate":
            return s, None, seconds
        lifted = replace(robot, lift_offset=min(LIFT_MAX, robot.lift_offset + LIFT_DELTA))
        return _carry(replace(s, robot=lifted)), None, seconds

    if name == "reach":
        if not grounding.eval_reachable(s, grounding.default_reachability(), t.id):
            return None, FailureReason.UNREACHABLE, 0.0
        return s, None, seconds

    return None, FailureReason.BAD_TARGET, 0.0


def execute(s: WorldState, a: GroundAction, rng: np.random.Generator,
            p_fail: Optional[Mapping[str, float]] = None) -> Tuple[WorldState, ActionOutcome]:
    """
    Исполнить примитив. Отказ - это данные (ActionOutcome), не исключение.
    p_fail: {"navigation": p, "manipulation": p}; при физически допустимом
    действии берётся ровно одно число из rng, если вероятность категории > 0.
    """
    if a.name not in CANONICAL_ACTIONS:
        raise ValueError(f"not a canonical action: {a}")
    phase = _phase(a.name)
    nxt, reason, duration = _physical(s, a)
    stepped = replace(s, time_step=s.time_step + 1)
    if nxt is None:
        return stepped, _fail(reason or FailureReason.BAD_TARGET, phase)

    rates = p_fail or {}
    p = 0.0
    if a.name in NAVIGATION:
        p = float(rates.get("navigation", 0.0))
    elif a.name in MANIPULATION:
        p = float(rates.get("manipulation", 0.0))
    if p > 0.0 and rng.random() < p:
        log.debug("stochastic failure of %s", a)
        return stepped, ActionOutcome(reward=0, failure_reason=FailureReason.STOCHASTIC_FAILURE,
                                      phase=phase, duration=duration)
    return replace(nxt, time_step=s.time_step + 1), ActionOutcome(reward=1, phase=phase, duration=duration)
