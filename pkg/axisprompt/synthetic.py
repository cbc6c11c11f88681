"""Deterministic synthetic rooms with labeled, axis-aligned furniture."""

import logging
import math
from typing import Dict, List, Tuple

import numpy as np

from axisprompt.models import Aabb, PointCloud, Vec3

logger = logging.getLogger(__name__)

CELL = 2.0
LATTICE = 0.5
FLOOR_COLOR = (200, 200, 200)
DOOR_COLOR = (139, 90, 43)
FURNITURE = ["chair", "table", "bed", "desk", "couch", "cabinet", "shelf", "lamp"]
STRUCTURAL_LABELS = frozenset({"floor", "wall", "ceiling"})

_FACES = [
    (0, 1, 2, 0),
    (0, 1, 2, 1),
    (0, 2, 1, 0),
    (0, 2, 1, 1),
    (1, 2, 0, 0),
    (1, 2, 0, 1),
]


def _axis_samples(lo: float, hi: float, spacing: float) -> np.ndarray:
    count = max(int(math.ceil((hi - lo) / spacing - 1e-9)) + 1, 2)
    return np.linspace(lo, hi, count)


def box_surface(box: Aabb, spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid samples on the six faces of a box, with outward normals.

    Face grids include their edges, so the sample AABB equals the box.
    """
    lo, hi = box.lo, box.hi
    points: List[np.ndarray] = []
    normals: List[np.ndarray] = []
    for a, b, fixed, side in _FACES:
        ua = _axis_samples(lo[a], hi[a], spacing)
        ub = _axis_samples(lo[b], hi[b], spacing)
        ga, gb = np.meshgrid(ua, ub, indexing="ij")
        face = np.empty((ga.size, 3))
        face[:, a] = ga.reshape(-1)
        face[:, b] = gb.reshape(-1)
        face[:, fixed] = hi[fixed] if side else lo[fixed]
        normal = np.zeros(3)
        normal[fixed] = 1.0 if side else -1.0
        points.append(face)
        normals.append(np.tile(normal, (len(face), 1)))
    return np.concatenate(points), np.concatenate(normals)


def _floor(width: float, depth: float, spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    gx, gy = np.meshgrid(
        _axis_samples(0.0, width, spacing), _axis_samples(0.0, depth, spacing), indexing="ij"
    )
    points = np.stack([gx.reshape(-1), gy.reshape(-1), np.zeros(gx.size)], axis=1)
    normals = np.tile([0.0, 0.0, 1.0], (len(points), 1))
    return points, normals


def make_room(
    seed: int = 0,
    size: Tuple[float, float] = (6.0, 6.0),
    n_objects: int = 4,
    spacing: float = 0.05,
) -> PointCloud:
    """
    A floor, a door and labeled furniture boxes.

    The room is split into 2 m cells. The door takes the first cell; each
    object occupies the middle of another cell, with every box corner on a
    0.5 m lattice, so objects are at least 1 m apart.

    Args:
        seed: Layout and color seed
        size: Room width and depth (m); each is rounded down to whole cells
        n_objects: Number of furniture boxes
        spacing: Surface sample spacing (m)

    Returns:
        PointCloud with instance ids, labels, normals and up_axis=2

    Raises:
        ValueError: If the room has too few cells for the objects
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    nx = int(size[0] // CELL)
    ny = int(size[1] // CELL)
    if nx < 1 or ny < 1 or n_objects > nx * ny - 1:
        capacity = max(nx * ny - 1, 0)
        raise ValueError(f"a {size[0]} x {size[1]} m room holds at most {capacity} objects")
    rng = np.random.default_rng(seed)
    width, depth = nx * CELL, ny * CELL

    positions: List[np.ndarray] = []
    normals: List[np.ndarray] = []
    colors: List[np.ndarray] = []
    ids: List[np.ndarray] = []
    labels: Dict[int, str] = {}

    def add(
        instance: int, label: str, pts: np.ndarray, nrm: np.ndarray, color: Tuple[int, ...]
    ) -> None:
        positions.append(pts)
        normals.append(nrm)
        colors.append(np.tile(np.asarray(color, dtype=np.uint8), (len(pts), 1)))
        ids.append(np.full(len(pts), instance, dtype=np.int64))
        labels[instance] = label

    add(0, "floor", *_floor(width, depth, spacing), FLOOR_COLOR)
    door = Aabb(min=(0.5, 0.0, 0.0), max=(1.5, 0.5, 2.0))
    add(1, "door", *box_surface(door, spacing), DOOR_COLOR)

    cells = [(i, j) for i in range(nx) for j in range(ny) if (i, j) != (0, 0)]
    chosen = rng.choice(len(cells), size=n_objects, replace=False)
    names = rng.permutation(FURNITURE)
    for k, cell_index in enumerate(sorted(int(c) for c in chosen)):
        ci, cj = cells[cell_index]
        extent = (
            float(rng.choice([0.5, 1.0])),
            float(rng.choice([0.5, 1.0])),
            float(rng.choice([0.5, 1.0, 1.5])),
        )
        lo = (ci * CELL + LATTICE, cj * CELL + LATTICE, 0.0)
        box = Aabb(min=lo, max=tuple(lo[a] + extent[a] for a in range(3)))
        color = tuple(int(v) for v in rng.integers(30, 226, size=3))
        label = str(names[k % len(names)])
        add(k + 2, label, *box_surface(box, spacing), color)

    cloud = PointCloud(
        positions=np.concatenate(positions),
        colors=np.concatenate(colors),
        normals=np.concatenate(normals),
        instance_ids=np.concatenate(ids),
        semantic_labels=labels,
        up_axis=2,
    )
    logger.debug(f"Synthetic room seed={seed}: {len(cloud)} points, {n_objects} objects")
    return cloud


def box_keypoints(box: Aabb, template: str) -> Dict[str, Vec3]:
    """
    Keypoints of a chair or table template placed on a box.

    Table tops and chair seats sit at the top and at mid-height of the box;
    a chair back rises along the +y face.
    """
    lo, hi = box.lo, box.hi
    corners = {
        "front_left": (lo[0], lo[1]),
        "front_right": (hi[0], lo[1]),
        "back_left": (lo[0], hi[1]),
        "back_right": (hi[0], hi[1]),
    }
    points: Dict[str, Vec3] = {}
    for name, (x, y) in corners.items():
        points[f"leg_{name}"] = (float(x), float(y), float(lo[2]))
    if template == "table":
        for name, (x, y) in corners.items():
            points[f"top_{name}"] = (float(x), float(y), float(hi[2]))
    elif template == "chair":
        seat = float((lo[2] + hi[2]) / 2.0)
        for name, (x, y) in corners.items():
            points[f"seat_{name}"] = (float(x), float(y), seat)
        points["back_top_left"] = (float(lo[0]), float(hi[1]), float(hi[2]))
        points["back_top_right"] = (float(hi[0]), float(hi[1]), float(hi[2]))
    else:
        raise ValueError(f"no keypoint layout for template '{template}'")
    return points
