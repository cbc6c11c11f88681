"""Deterministic ground-truth oracle standing in for a remote multimodal model."""

import hashlib
import heapq
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from axisprompt.exceptions import UnknownTask
from axisprompt.models import (
    Aabb,
    ChatRequest,
    ChatResponse,
    GroundTruth,
    OracleConfig,
    PromptBundle,
    TaskKind,
)

logger = logging.getLogger(__name__)

ORACLE_MODEL = "mock-oracle"
FAILURE_TEXT = "I cannot determine the position."
SAMPLE_STEP = 0.05

Cell = Tuple[int, int]
_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _format(values: Sequence[float], decimals: int) -> str:
    return "(" + ", ".join(f"{float(v):.{decimals}f}" for v in values) + ")"


def _rng(bundle: PromptBundle, cfg: OracleConfig) -> np.random.Generator:
    digest = hashlib.sha256(f"{bundle.scene_id}\x00{bundle.task_text}".encode("utf-8")).digest()
    return np.random.default_rng([cfg.seed, int.from_bytes(digest[:8], "little")])


def _footprint_distance(points: np.ndarray, box: Aabb) -> np.ndarray:
    """XY distance from (N, 2) points to the box footprint."""
    lo, hi = box.lo[:2], box.hi[:2]
    residual = np.maximum(np.maximum(lo - points, 0.0), points - hi)
    return np.linalg.norm(residual, axis=-1)


def _segment_clear(
    a: np.ndarray, b: np.ndarray, obstacles: Sequence[Aabb], clearance: float
) -> bool:
    length = float(np.linalg.norm(b[:2] - a[:2]))
    count = max(int(math.ceil(length / SAMPLE_STEP)), 1) + 1
    samples = a[:2] + np.linspace(0.0, 1.0, count)[:, None] * (b[:2] - a[:2])
    return all(_footprint_distance(samples, box).min() >= clearance for box in obstacles)


class GridPlanner:
    """
    8-connected A* over an XY occupancy grid.

    Cells closer than clearance plus half a cell diagonal to an obstacle
    footprint are blocked, so straight moves between free cell centers keep
    the clearance.
    """

    def __init__(
        self,
        bounds: Aabb,
        obstacles: Sequence[Aabb],
        clearance: float = 0.25,
        resolution: float = 0.1,
    ) -> None:
        self.origin = bounds.lo[:2]
        self.resolution = resolution
        self.obstacles = list(obstacles)
        self.clearance = clearance
        extent = bounds.extent[:2]
        self.shape = tuple(int(math.floor(e / resolution)) + 1 for e in extent)
        gx, gy = np.meshgrid(
            np.arange(self.shape[0]), np.arange(self.shape[1]), indexing="ij"
        )
        centers = np.stack([gx, gy], axis=-1) * resolution + self.origin
        margin = clearance + resolution * math.sqrt(2.0) / 2.0
        self.blocked = np.zeros(self.shape, dtype=bool)
        for box in self.obstacles:
            self.blocked |= _footprint_distance(centers, box) < margin

    def cell_of(self, point: np.ndarray) -> Cell:
        index = np.rint((np.asarray(point)[:2] - self.origin) / self.resolution).astype(int)
        index = np.clip(index, 0, np.asarray(self.shape) - 1)
        return int(index[0]), int(index[1])

    def center_of(self, cell: Cell) -> np.ndarray:
        return self.origin + np.asarray(cell, dtype=np.float64) * self.resolution

    def search(self, start: Cell, goal: Cell) -> Optional[List[Cell]]:
        """Cell sequence from start to goal, or None when unreachable."""
        blocked = self.blocked.copy()
        blocked[start] = False
        blocked[goal] = False

        def heuristic(cell: Cell) -> float:
            return math.hypot(cell[0] - goal[0], cell[1] - goal[1])

        counter = 0
        open_list: List[Tuple[float, int, Cell]] = [(heuristic(start), counter, start)]
        came_from: Dict[Cell, Cell] = {}
        g_cost: Dict[Cell, float] = {start: 0.0}
        closed = set()
        while open_list:
            _, _, current = heapq.heappop(open_list)
            if current == goal:
                path = [current]
                while current in came_from:
                    current = came_from[current]
                    path.append(current)
                return path[::-1]
            if current in closed:
                continue
            closed.add(current)
            for dx, dy in _NEIGHBORS:
                neighbor = (current[0] + dx, current[1] + dy)
                if not (0 <= neighbor[0] < self.shape[0] and 0 <= neighbor[1] < self.shape[1]):
                    continue
                if blocked[neighbor]:
                    continue
                tentative = g_cost[current] + math.hypot(dx, dy)
                if tentative < g_cost.get(neighbor, math.inf):
                    came_from[neighbor] = current
                    g_cost[neighbor] = tentative
                    counter += 1
                    heapq.heappush(open_list, (tentative + heuristic(neighbor), counter, neighbor))
        return None

    def plan(self, start: np.ndarray, goal: np.ndarray) -> List[np.ndarray]:
        """
        Waypoints from start to goal at the start height, shortened by string pulling.

        Falls back to the straight segment when no grid path exists.
        """
        start = np.asarray(start, dtype=np.float64)
        goal = np.asarray(goal, dtype=np.float64)
        cells = self.search(self.cell_of(start), self.cell_of(goal))
        if cells is None:
            logger.warning("No collision-free grid path; answering the straight segment")
            return [start, goal]
        height = start[2]
        raw = [start]
        raw.extend(np.array([*self.center_of(c), height]) for c in cells)
        raw.append(goal)

        pulled = [raw[0]]
        i = 0
        while i < len(raw) - 1:
            j = len(raw) - 1
            while j > i + 1 and not _segment_clear(raw[i], raw[j], self.obstacles, self.clearance):
                j -= 1
            pulled.append(raw[j])
            i = j
        return pulled


def plan_route(truth: GroundTruth, cfg: OracleConfig) -> List[np.ndarray]:
    if truth.start_region is None or truth.goal_region is None or truth.bounds is None:
        raise UnknownTask(f"scene {truth.scene_id} has no route ground truth")
    planner = GridPlanner(truth.bounds, truth.obstacles, cfg.clearance, cfg.grid_resolution)
    return planner.plan(truth.start_region.center, truth.goal_region.center)


def mock_oracle(bundle: PromptBundle, truth: GroundTruth, cfg: OracleConfig) -> ChatResponse:
    """
    Answer a bundle from ground truth, with seeded Gaussian noise.

    The noise is isotropic with sigma = noise_sigma * (1 + view_penalty / n_views).
    Routes come from the grid planner and carry no noise. With probability
    failure_rate the answer holds no coordinates at all.

    Raises:
        UnknownTask: If the truth does not cover the bundle's task
    """
    kind = bundle.template_kind
    if truth.kind != kind:
        raise UnknownTask(
            f"truth for {truth.scene_id} is {truth.kind.value}, bundle asks {kind.value}"
        )
    rng = _rng(bundle, cfg)
    if rng.random() < cfg.failure_rate:
        return ChatResponse(text=FAILURE_TEXT, model=ORACLE_MODEL)

    sigma = cfg.noise_sigma * (1.0 + cfg.view_penalty / bundle.n_views)
    d = cfg.decimals

    def noisy(point: Sequence[float]) -> np.ndarray:
        offset = rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)
        return np.asarray(point, dtype=np.float64) + offset

    if kind == TaskKind.LOCALIZE:
        if not truth.targets:
            raise UnknownTask(f"scene {truth.scene_id} has no localization targets")
        lines = [f"{t.letter}: {_format(noisy(t.center), d)}" for t in truth.targets]
        text = "\n".join(lines)
    elif kind == TaskKind.GRASP:
        if not truth.targets:
            raise UnknownTask(f"scene {truth.scene_id} has no grasp target")
        text = f"Grasp at {_format(noisy(truth.targets[0].center), d)}"
    elif kind == TaskKind.RELEASE:
        if truth.goal_region is None:
            raise UnknownTask(f"scene {truth.scene_id} has no release region")
        text = f"Release at {_format(noisy(truth.goal_region.center), d)}"
    elif kind == TaskKind.KEYPOINTS:
        if not truth.keypoints:
            raise UnknownTask(f"scene {truth.scene_id} has no keypoints")
        text = "\n".join(f"{name}: {_format(noisy(p), d)}" for name, p in truth.keypoints.items())
    elif kind == TaskKind.GROUND_BOX:
        if not truth.targets:
            raise UnknownTask(f"scene {truth.scene_id} has no grounding target")
        box = truth.targets[0].box
        center = noisy(box.center)
        if "(cx, cy, cz, sx, sy, sz)" in bundle.task_text:
            values = [*center, *box.extent]
        else:
            values = [*(center - box.extent / 2.0), *(center + box.extent / 2.0)]
        text = f"The box is {_format(values, d)}"
    elif kind == TaskKind.ROUTE_PLAN:
        waypoints = plan_route(truth, cfg)
        text = "Route: " + " -> ".join(_format(p, d) for p in waypoints)
    else:
        raise UnknownTask(f"unsupported task {kind.value}")
    return ChatResponse(text=text, model=ORACLE_MODEL)


class OracleResponder:
    """Responder answering each scene from its own ground truth only."""

    def __init__(self, truths: Dict[str, GroundTruth], cfg: OracleConfig) -> None:
        self.truths = dict(truths)
        self.cfg = cfg

    def __call__(self, request: ChatRequest, bundle: PromptBundle) -> ChatResponse:
        truth = self.truths.get(bundle.scene_id)
        if truth is None:
            raise UnknownTask(f"no ground truth for scene {bundle.scene_id}")
        return mock_oracle(bundle, truth, self.cfg)
