"""Tests for Pydantic models and configuration loading."""

from pathlib import Path

import numpy as np
import pytest
import yaml
from pydantic import ValidationError

from axisprompt.config import PipelineConfig, load_pipeline_config, parse_override
from axisprompt.exceptions import UnfilledSlot
from axisprompt.models import (
    Aabb,
    CameraIntrinsics,
    ChatMessage,
    ChatRequest,
    EvalRecord,
    ImagePart,
    Obb,
    PointCloud,
    Prediction,
    PredictionKind,
    PromptBundle,
    RunSummary,
    SceneFrame,
    TaskKind,
    TaskTemplate,
    TextPart,
    default_palette,
    points_from_text,
)
from axisprompt.render import encode_png


def tiny_png() -> bytes:
    return encode_png(np.zeros((2, 2, 3), dtype=np.uint8))


class TestPointCloud:
    """Test PointCloud model."""

    def test_valid_cloud(self) -> None:
        """Parallel arrays are coerced to the documented dtypes."""
        cloud = PointCloud(
            positions=[[0, 0, 0], [1, 0, 0]],
            colors=[[255, 0, 0], [0, 255, 0]],
            instance_ids=[0, 1],
            semantic_labels={0: "chair", 1: "table"},
        )
        assert len(cloud) == 2
        assert cloud.positions.dtype == np.float64
        assert cloud.colors.dtype == np.uint8
        assert cloud.instances() == [0, 1]
        assert cloud.label(1) == "table"
        assert cloud.label(5) == "object 5"

    def test_empty_cloud(self) -> None:
        """An empty cloud is valid."""
        cloud = PointCloud(positions=np.zeros((0, 3)))
        assert len(cloud) == 0
        assert cloud.instances() == []

    def test_wrong_shape(self) -> None:
        """Positions must be (N, 3)."""
        with pytest.raises(ValidationError):
            PointCloud(positions=[[0.0, 1.0]])

    def test_non_finite_positions(self) -> None:
        """NaN positions are rejected."""
        with pytest.raises(ValidationError):
            PointCloud(positions=[[0.0, np.nan, 0.0]])

    def test_mismatched_lengths(self) -> None:
        """Attribute arrays must have one entry per point."""
        with pytest.raises(ValidationError):
            PointCloud(positions=[[0, 0, 0], [1, 1, 1]], instance_ids=[0])

    def test_normals_must_be_unit(self) -> None:
        """Non-unit normals are rejected."""
        with pytest.raises(ValidationError):
            PointCloud(positions=[[0, 0, 0]], normals=[[0, 0, 2]])

    def test_labels_need_points(self) -> None:
        """Semantic labels cannot name instances without points."""
        with pytest.raises(ValidationError):
            PointCloud(positions=[[0, 0, 0]], instance_ids=[0], semantic_labels={4: "lamp"})

    def test_subset_keeps_attributes(self) -> None:
        """subset keeps per-point attributes and drops orphaned labels."""
        cloud = PointCloud(
            positions=[[0, 0, 0], [1, 0, 0], [2, 0, 0]],
            instance_ids=[0, 1, 1],
            semantic_labels={0: "a", 1: "b"},
        )
        part = cloud.subset(np.array([2, 1]))
        assert part.positions[:, 0].tolist() == [2.0, 1.0]
        assert part.semantic_labels == {1: "b"}
        assert part.point_counts() == {1: 2}


class TestBoxes:
    """Test Aabb and Obb models."""

    def test_aabb_properties(self) -> None:
        """Center, extent, volume and corners follow from min and max."""
        box = Aabb(min=(0, 0, 0), max=(2, 4, 6))
        assert box.center.tolist() == [1, 2, 3]
        assert box.extent.tolist() == [2, 4, 6]
        assert box.volume == 48
        corners = box.corners()
        assert corners.shape == (8, 3)
        assert corners[0].tolist() == [0, 0, 0]
        assert corners[7].tolist() == [2, 4, 6]
        assert corners[1].tolist() == [2, 0, 0]

    def test_aabb_min_above_max(self) -> None:
        """A box whose min exceeds its max is rejected."""
        with pytest.raises(ValidationError):
            Aabb(min=(1, 0, 0), max=(0, 1, 1))

    def test_aabb_from_center_size(self) -> None:
        """Center/size boxes are converted to min/max."""
        box = Aabb.from_center_size((1, 1, 1), (2, 4, 0))
        assert box.min == (0.0, -1.0, 1.0)
        assert box.max == (2.0, 3.0, 1.0)

    def test_obb_requires_right_handed_axes(self) -> None:
        """A left-handed frame is rejected."""
        with pytest.raises(ValidationError):
            Obb(
                center=(0, 0, 0),
                axes=((1, 0, 0), (0, 1, 0), (0, 0, -1)),
                half_extents=(1, 1, 1),
            )

    def test_obb_corners(self) -> None:
        """Identity-frame OBB corners match the equivalent AABB."""
        obb = Obb(center=(1, 1, 1), axes=((1, 0, 0), (0, 1, 0), (0, 0, 1)), half_extents=(1, 1, 1))
        aabb = Aabb(min=(0, 0, 0), max=(2, 2, 2))
        assert np.allclose(obb.corners(), aabb.corners())


class TestSceneFrame:
    """Test SceneFrame model."""

    def test_cloud_must_start_at_origin(self) -> None:
        """The normalized cloud minimum must be the origin."""
        with pytest.raises(ValidationError):
            SceneFrame(
                cloud=PointCloud(positions=[[1, 1, 1], [2, 2, 2]]),
                rotation=np.eye(3),
                translation=np.zeros(3),
                source_extent=np.ones(3),
            )

    def test_round_trip(self) -> None:
        """to_frame and to_source are inverse maps."""
        angle = np.radians(30)
        rotation = np.array(
            [[np.cos(angle), -np.sin(angle), 0], [np.sin(angle), np.cos(angle), 0], [0, 0, 1]]
        )
        frame = SceneFrame(
            cloud=PointCloud(positions=[[0, 0, 0]]),
            rotation=rotation,
            translation=np.array([1.0, 2.0, 3.0]),
            source_extent=np.zeros(3),
        )
        points = np.array([[0.5, -1.0, 2.0], [3.0, 0.0, 0.0]])
        assert np.allclose(frame.to_source(frame.to_frame(points)), points)


class TestCameraIntrinsics:
    """Test CameraIntrinsics model."""

    def test_from_fov_centers_principal_point(self) -> None:
        """The principal point sits on the middle pixel."""
        intr = CameraIntrinsics.from_fov(64, 32, 90.0)
        assert intr.cx == pytest.approx(31.5)
        assert intr.cy == pytest.approx(15.5)
        assert intr.fy == pytest.approx(16.0)

    def test_principal_point_inside_image(self) -> None:
        """A principal point outside the image is rejected."""
        with pytest.raises(ValidationError):
            CameraIntrinsics(fx=10, fy=10, cx=100, cy=5, width=64, height=64)


class TestTaskTemplate:
    """Test TaskTemplate model."""

    def test_render_fills_slots(self) -> None:
        """Slots are substituted and the instruction follows on a new line."""
        template = TaskTemplate(
            kind=TaskKind.GRASP,
            body="Pick up {target}.",
            slots={"target": "the cup"},
            answer_format_instruction="Answer as (x, y, z).",
        )
        assert template.render() == "Pick up the cup.\nAnswer as (x, y, z)."

    def test_missing_slot(self) -> None:
        """Referencing an unfilled slot raises UnfilledSlot."""
        template = TaskTemplate(kind=TaskKind.GRASP, body="Pick up {target}.")
        with pytest.raises(UnfilledSlot):
            template.render()


class TestPromptBundle:
    """Test PromptBundle model."""

    def test_valid_bundle(self) -> None:
        """PNG payloads and parseable points text are accepted."""
        bundle = PromptBundle(
            scene_id="s", images=[tiny_png()], points_text="0 0 0\n1 2 3\n", task_text="t"
        )
        assert bundle.n_views == 1

    def test_rejects_non_png(self) -> None:
        """Image payloads must be PNG."""
        with pytest.raises(ValidationError):
            PromptBundle(scene_id="s", images=[b"GIF89a"], task_text="t")

    def test_rejects_bad_points(self) -> None:
        """Points text must hold three numbers per line."""
        with pytest.raises(ValidationError):
            PromptBundle(scene_id="s", images=[tiny_png()], points_text="1 2\n", task_text="t")

    def test_points_from_text_skips_comments(self) -> None:
        """Header comments and blank lines are ignored."""
        points = points_from_text("# points x y z (meters)\n\n1 2 3\n")
        assert points.tolist() == [[1.0, 2.0, 3.0]]


class TestChatRequest:
    """Test ChatRequest model."""

    def test_single_user_message(self) -> None:
        """A request carries exactly one user message."""
        message = ChatMessage(role="user", content=[TextPart(text="hi")])
        with pytest.raises(ValidationError):
            ChatRequest(model="m", messages=[message, message])

    def test_digest_is_stable(self) -> None:
        """Equal requests hash equally; different ones do not."""
        parts = [TextPart(text="hi"), ImagePart.from_png(tiny_png(), "low")]
        a = ChatRequest(model="m", messages=[ChatMessage(role="user", content=parts)])
        b = ChatRequest(model="m", messages=[ChatMessage(role="user", content=parts)])
        c = ChatRequest(model="other", messages=[ChatMessage(role="user", content=parts)])
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_payload_omits_unset_detail(self) -> None:
        """Image parts without a detail level serialize without it."""
        part = ImagePart.from_png(tiny_png())
        payload = part.model_dump(exclude_none=True)
        assert "detail" not in payload["image_url"]
        assert payload["image_url"]["url"].startswith("data:image/png;base64,")


class TestEvaluationModels:
    """Test Prediction, EvalRecord and RunSummary models."""

    def test_prediction_field_matches_kind(self) -> None:
        """A point prediction may not carry a box."""
        with pytest.raises(ValidationError):
            Prediction(
                kind=PredictionKind.POINT3D,
                point=(0, 0, 0),
                box=Aabb(min=(0, 0, 0), max=(1, 1, 1)),
                parse_ok=True,
            )

    def test_parse_ok_reflects_field(self) -> None:
        """parse_ok must agree with the presence of the payload."""
        with pytest.raises(ValidationError):
            Prediction(kind=PredictionKind.POINT3D, parse_ok=True)

    def test_record_bbx_below_center(self) -> None:
        """A record whose to-bbx distance exceeds its to-center distance is rejected."""
        prediction = Prediction(kind=PredictionKind.POINT3D, point=(0, 0, 0), parse_ok=True)
        with pytest.raises(ValidationError):
            EvalRecord(
                scene_id="s",
                task=TaskKind.LOCALIZE,
                prediction=prediction,
                truth_center=(0, 0, 0),
                truth_box=Aabb(min=(0, 0, 0), max=(1, 1, 1)),
                normalizer=1.0,
                d_center=0.1,
                d_bbx=0.2,
                parse_ok=True,
            )

    def test_summary_rates_bounded(self) -> None:
        """Rates outside [0, 1] are rejected."""
        with pytest.raises(ValidationError):
            RunSummary(n_scenes=1, n_objects=1, parse_failure_rate=1.5)


class TestPalette:
    """Test the default mark palette."""

    def test_distinct_colors(self) -> None:
        """Palette colors are pairwise distinct and start at red."""
        palette = default_palette(12)
        assert len(set(palette)) == 12
        assert palette[0] == (255, 0, 0)


class TestPipelineConfig:
    """Test pipeline configuration loading."""

    def write_config(self, tmp_path: Path, raw: dict) -> Path:
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(raw), encoding="utf-8")
        return path

    def test_relative_paths_resolve_against_file(self, tmp_path: Path) -> None:
        """Scene paths are relative to the configuration file."""
        (tmp_path / "scene.ply").write_bytes(b"ply\n")
        path = self.write_config(tmp_path, {"scenes": [{"id": "a", "path": "scene.ply"}]})
        config = load_pipeline_config(path)
        assert config.scenes[0].path == tmp_path / "scene.ply"
        assert config.rig.n_views == 8
        assert config.marks.style.value == "mark_plus_contour"

    def test_missing_scene_file(self, tmp_path: Path) -> None:
        """A scene path that does not exist fails validation."""
        path = self.write_config(tmp_path, {"scenes": [{"id": "a", "path": "missing.ply"}]})
        with pytest.raises(ValidationError):
            load_pipeline_config(path)

    def test_duplicate_scene_ids(self, tmp_path: Path) -> None:
        """Scene ids must be unique."""
        (tmp_path / "scene.ply").write_bytes(b"ply\n")
        scene = {"id": "a", "path": "scene.ply"}
        path = self.write_config(tmp_path, {"scenes": [scene, scene]})
        with pytest.raises(ValidationError):
            load_pipeline_config(path)

    def test_n_views_positive(self, tmp_path: Path) -> None:
        """n_views must be at least 1."""
        (tmp_path / "scene.ply").write_bytes(b"ply\n")
        path = self.write_config(tmp_path, {"scenes": [{"id": "a", "path": "scene.ply"}]})
        with pytest.raises(ValidationError):
            load_pipeline_config(path, [("rig.n_views", 0)])

    def test_overrides(self, tmp_path: Path) -> None:
        """Dotted overrides reach nested sections."""
        (tmp_path / "scene.ply").write_bytes(b"ply\n")
        path = self.write_config(tmp_path, {"scenes": [{"id": "a", "path": "scene.ply"}]})
        config = load_pipeline_config(
            path, [parse_override("rig.n_views=4"), parse_override("axis.show_ticks=false")]
        )
        assert config.rig.n_views == 4
        assert config.axis.show_ticks is False

    def test_parse_override_rejects_missing_equals(self) -> None:
        """Overrides must be key=value."""
        with pytest.raises(ValueError):
            parse_override("rig.n_views")

    def test_with_overrides_keeps_other_keys(self, tmp_path: Path) -> None:
        """with_overrides changes only the named keys."""
        (tmp_path / "scene.ply").write_bytes(b"ply\n")
        config = PipelineConfig.model_validate(
            {"scenes": [{"id": "a", "path": tmp_path / "scene.ply"}], "seed": 7}
        )
        changed = config.with_overrides({"marks.style": None, "task.cot": True})
        assert changed.marks.style is None
        assert changed.task.cot is True
        assert changed.seed == 7
        assert config.marks.style is not None

    def test_oracle_seed_follows_run_seed(self, tmp_path: Path) -> None:
        """The oracle inherits the run seed unless it sets its own."""
        (tmp_path / "scene.ply").write_bytes(b"ply\n")
        scenes = [{"id": "a", "path": tmp_path / "scene.ply"}]
        inherited = PipelineConfig.model_validate({"scenes": scenes, "seed": 5})
        explicit = PipelineConfig.model_validate(
            {"scenes": scenes, "seed": 5, "oracle": {"seed": 9}}
        )
        assert inherited.oracle_config().seed == 5
        assert explicit.oracle_config().seed == 9
