"""Shared fixtures: small labeled scenes and synthetic pipeline configurations."""

from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pytest

from axisprompt.config import PipelineConfig, load_pipeline_config
from axisprompt.geometry import normalize_scene
from axisprompt.models import Aabb, PointCloud, SceneFrame
from axisprompt.synthetic import box_surface, make_room
from pipeline.runner import cmd_synth

# Render settings that keep pipeline tests fast
FAST_RIG: List[Tuple[str, object]] = [
    ("rig.n_views", 2),
    ("rig.image_size", 64),
    ("rig.splat_px", 1),
    ("points_text.budget", 256),
    ("workers", 2),
]


def boxes_cloud(boxes: Dict[int, Tuple[str, Aabb]], spacing: float = 0.1) -> PointCloud:
    """Labeled cloud sampling the surfaces of the given boxes."""
    positions, normals, ids = [], [], []
    labels = {}
    for instance, (label, box) in boxes.items():
        points, box_normals = box_surface(box, spacing)
        positions.append(points)
        normals.append(box_normals)
        ids.append(np.full(len(points), instance))
        labels[instance] = label
    return PointCloud(
        positions=np.concatenate(positions),
        normals=np.concatenate(normals),
        instance_ids=np.concatenate(ids),
        semantic_labels=labels,
        up_axis=2,
    )


@pytest.fixture
def two_boxes() -> PointCloud:
    """A large table box and a small cup box, origin-anchored."""
    return boxes_cloud(
        {
            3: ("table", Aabb(min=(0.0, 0.0, 0.0), max=(2.0, 1.0, 0.8))),
            7: ("cup", Aabb(min=(3.0, 2.0, 0.0), max=(3.2, 2.2, 0.3))),
        }
    )


@pytest.fixture
def two_box_scene(two_boxes: PointCloud) -> SceneFrame:
    return normalize_scene(two_boxes, align="none")


@pytest.fixture
def room() -> PointCloud:
    """Coarsely sampled synthetic room."""
    return make_room(seed=0, spacing=0.1)


@pytest.fixture
def room_scene(room: PointCloud) -> SceneFrame:
    return normalize_scene(room, align="none")


@pytest.fixture
def synth_config_path(tmp_path: Path) -> Path:
    """Configuration written by the synth command for two rooms."""
    return cmd_synth(tmp_path / "data", n_scenes=2, seed=0)


@pytest.fixture
def synth_config(synth_config_path: Path, tmp_path: Path) -> PipelineConfig:
    """Two synthetic rooms with fast render settings and a temporary output directory."""
    overrides = FAST_RIG + [("output_dir", str(tmp_path / "runs"))]
    return load_pipeline_config(synth_config_path, overrides)
