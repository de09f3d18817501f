# src/grounding.py
# -*- coding: utf-8 -*-
"""
Заземлённые предикаты: find/at по семантической воксельной карте и A*,
detected по конусу камеры, graspable/reachable по кандидатам захвата и
карте достижимости, placeable по свободным клеткам верхней грани.
"""
from __future__ import annotations

import hashlib
import heapq
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple, Union

import numpy as np
import orjson

from src.utils import normalize_label
from src.worldsim import ObjectRecord, ScanRecord, Vec3, WorldState, observe, occluded

log = logging.getLogger(__name__)

EMBED_DIM = 64
TAU_LOC = 0.35
THETA_REACH = 0.05
R_AT = 0.9
MAP_RESOLUTION = 0.10
REACH_RESOLUTION = 0.05
GRASP_STANDOFF = 0.02
MAP_FORMAT_VERSION = 1
SQRT2 = math.sqrt(2.0)
_EPS = 1e-9

Cell = Tuple[int, int]


class GroundingError(Exception):
    pass


# ===============================
# Embeddings
# ===============================
@lru_cache(maxsize=1024)
def _embed(label: str) -> np.ndarray:
    padded = f" {label} "
    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    for i in range(len(padded) - 2):
        h = int.from_bytes(hashlib.blake2b(padded[i:i + 3].encode("utf-8"), digest_size=8).digest(), "big")
        vec[h % EMBED_DIM] += -1.0 if (h >> 63) & 1 else 1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise GroundingError(f"degenerate embedding for '{label}'")
    vec /= norm
    vec.setflags(write=False)
    return vec


def embed_text(label: str) -> np.ndarray:
    """Знаковое хеширование триграмм в 64 корзины, затем L2-нормировка."""
    norm = normalize_label(label)
    if not norm:
        raise GroundingError("empty label")
    return _embed(norm)


# ===============================
# Grids
# ===============================
def _index_range(lo: float, hi: float, origin: float, res: float, n: int, centre: float) -> range:
    """Клетки, чей центр лежит в [lo, hi]; минимум клетка центроида."""
    i_lo = max(0, math.ceil((lo - origin) / res - 0.5 - _EPS))
    i_hi = min(n - 1, math.floor((hi - origin) / res - 0.5 + _EPS))
    if i_lo > i_hi:
        c = _cell_index(centre, origin, res, n)
        return range(c, c + 1)
    return range(i_lo, i_hi + 1)


def _cell_index(v: float, origin: float, res: float, n: int) -> int:
    return min(n - 1, max(0, math.floor((v - origin) / res + _EPS)))


def _shape(bounds: Tuple[Vec3, Vec3], res: float) -> Tuple[int, ...]:
    return tuple(max(1, math.ceil((hi - lo) / res - _EPS)) for lo, hi in zip(bounds[0], bounds[1]))


@dataclass
class OccupancyGrid:
    """Двумерная проекция занятости: occ[i, j] == True - клетка занята."""
    occ: np.ndarray
    origin: Tuple[float, float]
    resolution: float

    def cell_of(self, xy: Sequence[float]) -> Cell:
        nx, ny = self.occ.shape
        return (_cell_index(xy[0], self.origin[0], self.resolution, nx),
                _cell_index(xy[1], self.origin[1], self.resolution, ny))

    def center(self, cell: Cell) -> Tuple[float, float]:
        return (self.origin[0] + (cell[0] + 0.5) * self.resolution,
                self.origin[1] + (cell[1] + 0.5) * self.resolution)

    def footprint(self, o: Union[ObjectRecord, ScanRecord]) -> Set[Cell]:
        pos = o.position if isinstance(o, ObjectRecord) else o.centroid
        nx, ny = self.occ.shape
        xs = _index_range(pos[0] - o.bbox[0] / 2, pos[0] + o.bbox[0] / 2, self.origin[0], self.resolution, nx, pos[0])
        ys = _index_range(pos[1] - o.bbox[1] / 2, pos[1] + o.bbox[1] / 2, self.origin[1], self.resolution, ny, pos[1])
        return {(i, j) for i in xs for j in ys}


def world_occupancy(s: WorldState, resolution: float = MAP_RESOLUTION) -> OccupancyGrid:
    """Занятость пола по текущей истине; объект в руках не мешает."""
    nx, ny, _ = _shape(s.bounds, resolution)
    grid = OccupancyGrid(np.zeros((nx, ny), dtype=bool), (s.bounds[0][0], s.bounds[0][1]), resolution)
    for o in s.objects.values():
        if o.id == s.robot.held:
            continue
        for c in grid.footprint(o):
            grid.occ[c] = True
    return grid


# ===============================
# Semantic voxel map
# ===============================
@dataclass(frozen=True)
class VoxelCell:
    occupied: bool = True
    embedding: Optional[np.ndarray] = None
    object_id: Optional[str] = None
    top_height: float = 0.0


class Located(NamedTuple):
    position: Vec3
    similarity: float
    object_id: Optional[str]


@dataclass
class SemanticVoxelMap:
    resolution: float
    origin: Vec3
    shape: Tuple[int, int, int]
    cells: Dict[Tuple[int, int, int], VoxelCell] = field(default_factory=dict)
    _occ2d: Optional[OccupancyGrid] = field(default=None, repr=False, compare=False)
    _paths: Dict[Tuple[Cell, Cell], Optional["PathPlan"]] = field(default_factory=dict, repr=False, compare=False)

    @property
    def bounds(self) -> Tuple[Vec3, Vec3]:
        hi = tuple(o + n * self.resolution for o, n in zip(self.origin, self.shape))
        return self.origin, hi  # type: ignore[return-value]

    def linear_index(self, idx: Tuple[int, int, int]) -> int:
        _, ny, nz = self.shape
        return (idx[0] * ny + idx[1]) * nz + idx[2]

    def cell_center(self, idx: Tuple[int, int, int]) -> Vec3:
        return tuple(o + (i + 0.5) * self.resolution for o, i in zip(self.origin, idx))  # type: ignore[return-value]

    def embedded(self) -> List[Tuple[Tuple[int, int, int], VoxelCell]]:
        """Клетки с эмбеддингом в порядке линейного индекса."""
        out = [(k, c) for k, c in self.cells.items() if c.embedding is not None]
        out.sort(key=lambda kc: self.linear_index(kc[0]))
        return out

    def occupancy_2d(self) -> OccupancyGrid:
        if self._occ2d is None:
            occ = np.zeros(self.shape[:2], dtype=bool)
            for (i, j, _), c in self.cells.items():
                if c.occupied:
                    occ[i, j] = True
            self._occ2d = OccupancyGrid(occ, (self.origin[0], self.origin[1]), self.resolution)
        return self._occ2d


def build_map(scans: Iterable[ScanRecord], bounds: Tuple[Vec3, Vec3],
              resolution: float = MAP_RESOLUTION) -> SemanticVoxelMap:
    """
    Два прохода: сначала занятость по bbox всех сканов, затем эмбеддинги
    в клетках центроидов. Внутри прохода побеждает последний записавший,
    поэтому содержимое ящика не теряет свой эмбеддинг из-за ящика.
    """
    scans = list(scans)
    shape = _shape(bounds, resolution)
    origin = tuple(float(v) for v in bounds[0])
    m = SemanticVoxelMap(resolution=resolution, origin=origin, shape=shape)  # type: ignore[arg-type]

    for sc in scans:
        lo = [c - e / 2 for c, e in zip(sc.centroid, sc.bbox)]
        hi = [c + e / 2 for c, e in zip(sc.centroid, sc.bbox)]
        if any(l < b - 1e-6 for l, b in zip(lo, bounds[0])) or any(h > b + 1e-6 for h, b in zip(hi, bounds[1])):
            raise GroundingError(f"scan '{sc.object_id}' is outside map bounds")
        ranges = [_index_range(lo[a], hi[a], origin[a], resolution, shape[a], sc.centroid[a]) for a in range(3)]
        for i in ranges[0]:
            for j in ranges[1]:
                for k in ranges[2]:
                    m.cells[(i, j, k)] = VoxelCell(True, None, sc.object_id, hi[2])

    for sc in scans:
        idx = tuple(_cell_index(sc.centroid[a], origin[a], resolution, shape[a]) for a in range(3))
        top = sc.centroid[2] + sc.bbox[2] / 2
        m.cells[idx] = VoxelCell(True, embed_text(sc.label), sc.object_id, top)  # type: ignore[index]

    log.debug("build_map: %d scans -> %d cells", len(scans), len(m.cells))
    return m


def locate(m: SemanticVoxelMap, query: str) -> Optional[Located]:
    emb = m.embedded()
    if not emb:
        return None
    q = embed_text(query)
    best_sim, best = -math.inf, None
    for idx, cell in emb:
        sim = float(np.dot(cell.embedding, q))
        if sim > best_sim:
            best_sim, best = sim, (idx, cell)
    if best is None or best_sim < TAU_LOC:
        return None
    return Located(m.cell_center(best[0]), best_sim, best[1].object_id)


def save_map(m: SemanticVoxelMap, path: Union[str, Path]) -> None:
    doc = {
        "version": MAP_FORMAT_VERSION,
        "resolution": m.resolution,
        "origin": list(m.origin),
        "shape": list(m.shape),
        "cells": [
            {
                "index": list(k),
                "object_id": c.object_id,
                "top_height": c.top_height,
                "embedding": None if c.embedding is None else c.embedding.tolist(),
            }
            for k, c in sorted(m.cells.items(), key=lambda kc: m.linear_index(kc[0]))
        ],
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(orjson.dumps(doc, option=orjson.OPT_INDENT_2))


def load_map(path: Union[str, Path]) -> SemanticVoxelMap:
    p = Path(path)
    if not p.is_file():
        raise GroundingError(f"map file not found: {p}")
    try:
        doc = orjson.loads(p.read_bytes())
        if doc.get("version") != MAP_FORMAT_VERSION:
            raise GroundingError(f"unsupported map version {doc.get('version')!r}")
        m = SemanticVoxelMap(float(doc["resolution"]), tuple(doc["origin"]), tuple(doc["shape"]))
        for c in doc["cells"]:
            emb = None
            if c.get("embedding") is not None:
                emb = np.asarray(c["embedding"], dtype=np.float64)
                emb.setflags(write=False)
            m.cells[tuple(c["index"])] = VoxelCell(True, emb, c.get("object_id"), float(c["top_height"]))
    except (orjson.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise GroundingError(f"{p.name}: malformed map file: {e}") from e
    return m


# ===============================
# Paths
# ===============================
@dataclass(frozen=True)
class PathPlan:
    cells: Tuple[Cell, ...]
    cost: float  # в шагах сетки: 1 по прямой, sqrt(2) по диагонали

    def length(self, resolution: float) -> float:
        return self.cost * resolution


_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def _neighbours(occ: np.ndarray, c: Cell) -> Iterable[Tuple[Cell, bool]]:
    nx, ny = occ.shape
    for di, dj in _NEIGHBOURS:
        i, j = c[0] + di, c[1] + dj
        if 0 <= i < nx and 0 <= j < ny and not occ[i, j]:
            yield (i, j), (di != 0 and dj != 0)


def approach_cells(occ: np.ndarray, cells: Iterable[Cell]) -> FrozenSet[Cell]:
    """
    Свободные клетки, 8-смежные со связной занятой областью, которой
    принадлежат клетки цели. Свободная клетка цели сама тоже годится.
    """
    nx, ny = occ.shape
    cells = [c for c in cells if 0 <= c[0] < nx and 0 <= c[1] < ny]
    seeds = [c for c in cells if occ[c]]
    out: Set[Cell] = {c for c in cells if not occ[c]}
    component: Set[Cell] = set(seeds)
    stack = list(seeds)
    while stack:
        i, j = stack.pop()
        for di, dj in _NEIGHBOURS:
            n = (i + di, j + dj)
            if not (0 <= n[0] < nx and 0 <= n[1] < ny):
                continue
            if occ[n]:
                if n not in component:
                    component.add(n)
                    stack.append(n)
            else:
                out.add(n)
    if not seeds:
        for c in list(out):
            out.update(n for n, _ in _neighbours(occ, c))
    return frozenset(out)


def _octile(goals: np.ndarray, c: Cell) -> float:
    dx = np.abs(goals[:, 0] - c[0])
    dy = np.abs(goals[:, 1] - c[1])
    return float(np.min(dx + dy + (SQRT2 - 2.0) * np.minimum(dx, dy)))


def astar(occ: np.ndarray, start: Cell, goals: Iterable[Cell]) -> Optional[PathPlan]:
    """
    A* по 8-связным свободным клеткам. Стартовая клетка проходима всегда.
    Стоимость хранится счётчиками (прямые, диагональные), чтобы совпадать
    с Дейкстрой бит в бит. Равенства: меньший f, меньший h, меньший индекс.
    """
    goal_set = frozenset(goals)
    if not goal_set:
        return None
    garr = np.array(sorted(goal_set), dtype=np.int64)
    ny = occ.shape[1]
    g_best: Dict[Cell, float] = {start: 0.0}
    parent: Dict[Cell, Optional[Cell]] = {start: None}
    h0 = _octile(garr, start)
    heap = [(h0, h0, start[0] * ny + start[1], 0, 0, start)]
    closed: Set[Cell] = set()
    while heap:
        _, _, _, s, d, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        closed.add(cur)
        if cur in goal_set:
            path = [cur]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            path.reverse()
            return PathPlan(tuple(path), s + d * SQRT2)
        for nb, diag in _neighbours(occ, cur):
            if nb in closed:
                continue
            ns, nd = (s, d + 1) if diag else (s + 1, d)
            g = ns + nd * SQRT2
            if g < g_best.get(nb, math.inf):
                g_best[nb] = g
                parent[nb] = cur
                h = _octile(garr, nb)
                heapq.heappush(heap, (g + h, h, nb[0] * ny + nb[1], ns, nd, nb))
    return None


def dijkstra_cost(occ: np.ndarray, start: Cell, goals: Iterable[Cell]) -> Optional[float]:
    """Эталон для проверки A*: та же сетка и те же правила, без эвристики."""
    goal_set = frozenset(goals)
    ny = occ.shape[1]
    dist: Dict[Cell, float] = {start: 0.0}
    heap = [(0.0, start[0] * ny + start[1], 0, 0, start)]
    done: Set[Cell] = set()
    while heap:
        g, _, s, d, cur = heapq.heappop(heap)
        if cur in done:
            continue
        done.add(cur)
        if cur in goal_set:
            return g
        for nb, diag in _neighbours(occ, cur):
            ns, nd = (s, d + 1) if diag else (s + 1, d)
            ng = ns + nd * SQRT2
            if ng < dist.get(nb, math.inf):
                dist[nb] = ng
                heapq.heappush(heap, (ng, nb[0] * ny + nb[1], ns, nd, nb))
    return None


def plan_path(m: SemanticVoxelMap, start: Sequence[float], goal: Sequence[float]) -> Optional[PathPlan]:
    grid = m.occupancy_2d()
    s_cell, g_cell = grid.cell_of(start), grid.cell_of(goal)
    key = (s_cell, g_cell)
    if key not in m._paths:
        m._paths[key] = astar(grid.occ, s_cell, approach_cells(grid.occ, [g_cell]))
    return m._paths[key]


def closer_cell(grid: OccupancyGrid, xy: Sequence[float], point: Sequence[float],
                step: float) -> Optional[Tuple[float, float]]:
    """Центр свободной клетки в радиусе step, ближайшей к point (если ближе текущего)."""
    best, best_d = None, math.hypot(xy[0] - point[0], xy[1] - point[1])
    ci, cj = grid.cell_of(xy)
    r = int(math.ceil(step / grid.resolution)) + 1
    nx, ny = grid.occ.shape
    for i in range(max(0, ci - r), min(nx, ci + r + 1)):
        for j in range(max(0, cj - r), min(ny, cj + r + 1)):
            if grid.occ[i, j]:
                continue
            c = grid.center((i, j))
            if math.hypot(c[0] - xy[0], c[1] - xy[1]) > step + _EPS:
                continue
            d = math.hypot(c[0] - point[0], c[1] - point[1])
            if d < best_d - _EPS:
                best, best_d = c, d
    return best


# ===============================
# find / at / detected
# ===============================
def eval_find(s: WorldState, m: SemanticVoxelMap, query: str) -> bool:
    loc = locate(m, query)
    if loc is None:
        return False
    return plan_path(m, s.robot.xy, loc.position) is not None


def eval_at(s: WorldState, m: SemanticVoxelMap, query: str) -> bool:
    loc = locate(m, query)
    if loc is None:
        return False
    x, y = s.robot.xy
    return math.hypot(x - loc.position[0], y - loc.position[1]) <= R_AT


def eval_detected(s: WorldState, obj_id: str) -> bool:
    return any(r.object_id == obj_id for r in observe(s))


# ===============================
# Reachability
# ===============================
@dataclass(frozen=True)
class ArmSpec:
    lift_range: float = 0.35
    link1: float = 0.35
    link2: float = 0.30
    joint_limit: float = 2.6


ARM = ArmSpec()


@dataclass(frozen=True)
class ReachabilityMap:
    resolution: float
    cells: Dict[Tuple[int, int, int], float]

    def index_at(self, point: Sequence[float]) -> float:
        key = tuple(int(v) for v in np.rint(np.asarray(point, dtype=float) / self.resolution))
        return self.cells.get(key, 0.0)  # type: ignore[arg-type]


def build_reachability(arm: ArmSpec, n_samples: int, rng: np.random.Generator,
                       resolution: float = REACH_RESOLUTION) -> ReachabilityMap:
    """
    Равномерные конфигурации (подъём, плечо, локоть) -> прямая кинематика ->
    посещаемость клеток в системе робота, нормированная на максимум.
    Первые n строк выборки не зависят от общего n.
    """
    if n_samples < 1:
        raise GroundingError("n_samples must be >= 1")
    if arm.link1 <= 0 or arm.link2 <= 0:
        raise GroundingError("degenerate arm: zero link lengths")
    q = rng.uniform(size=(n_samples, 3))
    lift = q[:, 0] * arm.lift_range
    t1 = (2.0 * q[:, 1] - 1.0) * arm.joint_limit
    t2 = (2.0 * q[:, 2] - 1.0) * arm.joint_limit
    pts = np.stack([
        arm.link1 * np.cos(t1) + arm.link2 * np.cos(t1 + t2),
        arm.link1 * np.sin(t1) + arm.link2 * np.sin(t1 + t2),
        lift,
    ], axis=1)
    keys, counts = np.unique(np.rint(pts / resolution).astype(np.int64), axis=0, return_counts=True)
    peak = float(counts.max())
    cells = {tuple(int(v) for v in k): float(c) / peak for k, c in zip(keys, counts)}
    return ReachabilityMap(resolution, cells)


@lru_cache(maxsize=1)
def default_reachability() -> ReachabilityMap:
    from src.settings import settings

    return build_reachability(ARM, settings.REACH_SAMPLES, np.random.default_rng(0))


def to_robot_frame(s: WorldState, point: Sequence[float]) -> Vec3:
    x, y, h = s.robot.base_pose
    dx, dy = point[0] - x, point[1] - y
    c, sn = math.cos(-h), math.sin(-h)
    return (c * dx - sn * dy, sn * dx + c * dy, point[2] - s.robot.arm_height)


# ===============================
# Grasps
# ===============================
@dataclass(frozen=True)
class GraspCandidate:
    position: Vec3
    approach: Vec3
    score: float
    object_id: str


def _strictly_inside(p: Sequence[float], o: ObjectRecord) -> bool:
    return all(lo < v < hi for v, lo, hi in zip(p, o.lo, o.hi))


def _containers(s: WorldState, o: ObjectRecord) -> Set[str]:
    out = set()
    cur = o
    while cur.contained_in is not None:
        out.add(cur.contained_in)
        cur = s.objects[cur.contained_in]
    return out


def generate_grasps(s: WorldState, obj_id: str) -> List[GraspCandidate]:
    if obj_id not in s.objects:
        raise GroundingError(f"unknown object '{obj_id}'")
    o = s.objects[obj_id]
    if occluded(s, o):
        return []
    (cx, cy, cz), (lx, ly, _), (hx, hy, hz) = o.position, o.lo, o.hi
    poses = (
        ((cx, cy, hz), (0.0, 0.0, -1.0)),
        ((hx, cy, cz), (-1.0, 0.0, 0.0)),
        ((lx, cy, cz), (1.0, 0.0, 0.0)),
        ((cx, hy, cz), (0.0, -1.0, 0.0)),
        ((cx, ly, cz), (0.0, 1.0, 0.0)),
    )
    skip = _containers(s, o) | {o.id}
    if s.robot.held is not None:
        skip.add(s.robot.held)
    others = [b for b in s.objects.values() if b.id not in skip]
    out: List[GraspCandidate] = []
    for rank, (pos, app) in enumerate(poses):
        tip = tuple(p - GRASP_STANDOFF * a for p, a in zip(pos, app))
        if any(_strictly_inside(tip, b) for b in others):
            continue
        out.append(GraspCandidate(pos, app, round(1.0 - 0.1 * rank, 10), o.id))
    return out


def eval_graspable(s: WorldState, obj_id: str) -> bool:
    return bool(generate_grasps(s, obj_id))


def eval_reachable(s: WorldState, m_reach: ReachabilityMap, obj_id: str) -> bool:
    return any(m_reach.index_at(to_robot_frame(s, c.position)) >= THETA_REACH for c in generate_grasps(s, obj_id))


# ===============================
# Placement
# ===============================
def _free_top_cells(s: WorldState, surface: ObjectRecord, resolution: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(маска свободных клеток, центры x, центры y) верхней грани."""
    lo, hi = surface.lo, surface.hi
    nx = max(1, math.floor((hi[0] - lo[0]) / resolution + _EPS))
    ny = max(1, math.floor((hi[1] - lo[1]) / resolution + _EPS))
    xs = lo[0] + (hi[0] - lo[0] - nx * resolution) / 2 + (np.arange(nx) + 0.5) * resolution
    ys = lo[1] + (hi[1] - lo[1] - ny * resolution) / 2 + (np.arange(ny) + 0.5) * resolution
    free = np.ones((nx, ny), dtype=bool)
    for o in s.objects.values():
        if o.id == surface.id or o.id == s.robot.held or o.supported_by != surface.id:
            continue
        ox = (xs >= o.lo[0] - _EPS) & (xs <= o.hi[0] + _EPS)
        oy = (ys >= o.lo[1] - _EPS) & (ys <= o.hi[1] + _EPS)
        free &= ~np.outer(ox, oy)
    return free, xs, ys


def _fits(free: np.ndarray, kx: int, ky: int) -> bool:
    if kx > free.shape[0] or ky > free.shape[1]:
        return False
    windows = np.lib.stride_tricks.sliding_window_view(free, (kx, ky))
    return bool(windows.all(axis=(2, 3)).any())


def eval_placeable(s: WorldState, surface_id: str, resolution: float = MAP_RESOLUTION) -> bool:
    if surface_id not in s.objects:
        raise GroundingError(f"unknown object '{surface_id}'")
    surface = s.objects[surface_id]
    if not surface.surface or surface_id == s.robot.held:
        return False
    free, _, _ = _free_top_cells(s, surface, resolution)
    if not free.any():
        return False
    kx = ky = 1
    if s.robot.held is not None:
        held = s.objects[s.robot.held]
        kx = max(1, math.ceil(held.bbox[0] / resolution - _EPS))
        ky = max(1, math.ceil(held.bbox[1] / resolution - _EPS))
    return _fits(free, kx, ky) or _fits(free, ky, kx)


def place_point(s: WorldState, surface_id: str, resolution: float = MAP_RESOLUTION) -> Vec3:
    if not eval_placeable(s, surface_id, resolution):
        raise GroundingError(f"'{surface_id}' is not placeable")
    surface = s.objects[surface_id]
    free, xs, ys = _free_top_cells(s, surface, resolution)
    ii, jj = np.nonzero(free)
    mx, my = np.median(xs[ii]), np.median(ys[jj])
    # медиана кольца свободных клеток может попасть на занятую: берём ближайшую свободную
    k = int(np.argmin((xs[ii] - mx) ** 2 + (ys[jj] - my) ** 2))
    half = s.objects[s.robot.held].bbox[2] / 2 if s.robot.held is not None else 0.0
    return float(xs[ii[k]]), float(ys[jj[k]]), surface.top + half
