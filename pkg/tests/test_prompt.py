"""Tests for points text, prompt assembly, reference hints and bundle files."""

from pathlib import Path
from typing import List

import numpy as np
import pytest

from axisprompt.exceptions import NoOtherInstance, UnfilledSlot
from axisprompt.marks import build_mark_plan
from axisprompt.models import (
    PNG_SIGNATURE,
    MarkStyle,
    MarkVariant,
    RenderedView,
    SceneFrame,
    TaskKind,
)
from axisprompt.prompt import (
    COT_PREFIX,
    POINTS_HEADER,
    assemble_prompt,
    load_bundle,
    parse_points_text,
    reference_point_hint,
    save_bundle,
    serialize_points_text,
    template_for,
)
from axisprompt.render import encode_png, make_camera_rig, render_view


@pytest.fixture
def views(two_box_scene: SceneFrame) -> List[RenderedView]:
    cameras = make_camera_rig(two_box_scene, n_views=2, image_size=16)
    return [render_view(two_box_scene, [], cam) for cam in cameras]


class TestPointsText:
    """Test serialize_points_text."""

    def test_small_cloud_verbatim(self, two_box_scene: SceneFrame) -> None:
        """Clouds under budget are written point for point."""
        text = serialize_points_text(two_box_scene, budget_points=10**6, decimals=3)
        lines = text.splitlines()
        assert lines[0] == POINTS_HEADER
        assert len(lines) - 1 == len(two_box_scene.cloud)
        assert all(len(line.split(".")) == 4 for line in lines[1:])

    @pytest.mark.parametrize("budget", [1, 50, 400])
    def test_budget_respected(self, room_scene: SceneFrame, budget: int) -> None:
        """Downsampled output fits the budget and only contains scene points."""
        points = parse_points_text(serialize_points_text(room_scene, budget_points=budget))
        assert 1 <= len(points) <= budget
        source = room_scene.cloud.positions
        assert all(np.any(np.all(np.abs(source - p) <= 0.0051, axis=1)) for p in points)

    def test_invalid_budget(self, two_box_scene: SceneFrame) -> None:
        with pytest.raises(ValueError):
            serialize_points_text(two_box_scene, budget_points=0)


class TestTemplates:
    """Test task templates."""

    def test_slots_fill_body(self) -> None:
        template = template_for(TaskKind.GRASP, {"target": "object A (the cup)"})
        assert "pick up object A (the cup)." in template.render()

    def test_missing_slot(self) -> None:
        """Rendering without a referenced slot fails."""
        with pytest.raises(UnfilledSlot, match="start"):
            template_for(TaskKind.ROUTE_PLAN, {"goal": "object B"}).render()


class TestAssemblePrompt:
    """Test assemble_prompt."""

    template = template_for(TaskKind.LOCALIZE, {"targets": "A"})

    def test_cot_prefix(self, views: List[RenderedView], two_box_scene: SceneFrame) -> None:
        """Chain of thought prepends exactly one sentence to the task text."""
        plain = assemble_prompt(views, two_box_scene, self.template, scene_id="s")
        cot = assemble_prompt(views, two_box_scene, self.template, cot=True, scene_id="s")
        assert cot.task_text == COT_PREFIX + plain.task_text
        assert cot.cot and not plain.cot

    def test_hint_joins_body(self, views: List[RenderedView], two_box_scene: SceneFrame) -> None:
        """The hint ends the body line, before the answer instruction."""
        bundle = assemble_prompt(
            views, two_box_scene, self.template, scene_id="s", hint="For reference, ok."
        )
        body, instruction = bundle.task_text.split("\n")
        assert body.endswith("object(s) A. For reference, ok.")
        assert instruction.startswith("Answer with one line per object")

    def test_images_and_points(
        self, views: List[RenderedView], two_box_scene: SceneFrame
    ) -> None:
        """Views come first as PNG; depth rasters follow without counting as views."""
        extra = encode_png(np.zeros((16, 16), dtype=np.uint8))
        bundle = assemble_prompt(
            views, two_box_scene, self.template, scene_id="s", extra_images=[extra]
        )
        assert len(bundle.images) == 3 and bundle.n_views == 2
        assert all(image.startswith(PNG_SIGNATURE) for image in bundle.images)
        assert bundle.points_text.startswith(POINTS_HEADER)
        without = assemble_prompt(
            views, two_box_scene, self.template, include_points=False, scene_id="s"
        )
        assert without.points_text is None

    def test_needs_a_view(self, two_box_scene: SceneFrame) -> None:
        with pytest.raises(ValueError):
            assemble_prompt([], two_box_scene, self.template, scene_id="s")


class TestReferenceHint:
    """Test reference_point_hint."""

    def test_nearest_named_by_label(self, two_box_scene: SceneFrame) -> None:
        assert reference_point_hint(two_box_scene, 7) == (
            "For reference, table is centered at (1.00, 0.50, 0.40)."
        )

    def test_nearest_named_by_letter(self, two_box_scene: SceneFrame) -> None:
        plan = build_mark_plan(two_box_scene, MarkStyle(variant=MarkVariant.LETTER_MARK))
        hint = reference_point_hint(two_box_scene, 3, plan)
        assert hint == "For reference, object B is centered at (3.10, 2.10, 0.15)."

    def test_no_other_instance(self, two_box_scene: SceneFrame) -> None:
        with pytest.raises(NoOtherInstance):
            reference_point_hint(two_box_scene, 3, exclude=[7])


class TestBundleFiles:
    """Test save_bundle and load_bundle."""

    def test_round_trip(
        self, views: List[RenderedView], two_box_scene: SceneFrame, tmp_path: Path
    ) -> None:
        """Every file is written and the loaded bundle equals the saved one."""
        bundle = assemble_prompt(
            views,
            two_box_scene,
            template_for(TaskKind.LOCALIZE, {"targets": "A"}),
            cot=True,
            scene_id="room",
            mark_style="letter_mark",
        )
        directory = save_bundle(bundle, tmp_path / "room")
        names = sorted(p.name for p in directory.iterdir())
        assert names == ["meta.json", "points.txt", "task.txt", "view_0.png", "view_1.png"]
        assert load_bundle(directory) == bundle

    def test_resave_without_points(
        self, views: List[RenderedView], two_box_scene: SceneFrame, tmp_path: Path
    ) -> None:
        """Saving a bundle without points text removes a stale points file."""
        template = template_for(TaskKind.LOCALIZE, {"targets": "A"})
        with_points = assemble_prompt(views, two_box_scene, template, scene_id="room")
        save_bundle(with_points, tmp_path)
        bare = with_points.model_copy(update={"points_text": None})
        save_bundle(bare, tmp_path)
        assert not (tmp_path / "points.txt").exists()
        assert load_bundle(tmp_path).points_text is None
