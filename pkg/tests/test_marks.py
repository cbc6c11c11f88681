"""Tests for mark plans, 2D overlays, 3D mark geometry and mask import."""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from axisprompt.exceptions import DimensionMismatch, EmptyMask, MissingInstanceLabels, MissingMask
from axisprompt.geometry import normalize_scene
from axisprompt.marks import (
    MARK_LETTERS,
    RED,
    WHITE,
    build_mark_plan,
    contour_from_mask,
    embed_3d_marks,
    load_mask_png,
    load_view_masks,
    overlay_marks,
    project_instance_mask,
)
from axisprompt.models import (
    Camera,
    CameraIntrinsics,
    InstanceMask,
    MarkStyle,
    MarkVariant,
    PointCloud,
    PrimitiveKind,
    RenderedView,
    SceneFrame,
)
from axisprompt.render import make_camera_rig, render_view

GRAY = (128, 128, 128)
INK = (10, 20, 30)


def blank_view(size: int = 40) -> RenderedView:
    """Empty gray view of the given size."""
    intr = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=size, height=size)
    image = np.empty((size, size, 3), dtype=np.uint8)
    image[:] = GRAY
    return RenderedView(
        image=image,
        depth=np.full((size, size), np.inf),
        point_index=np.full((size, size), -1, dtype=np.int64),
        camera=Camera(intr=intr, rotation=np.eye(3), translation=np.zeros(3)),
    )


def rect_mask(instance: int, rows: slice, cols: slice, size: int = 40) -> InstanceMask:
    bitmap = np.zeros((size, size), dtype=bool)
    bitmap[rows, cols] = True
    return InstanceMask(instance_id=instance, bitmap=bitmap)


def plan_for(variant: MarkVariant, instance: int = 1):
    """Single-entry plan over a one-instance scene."""
    cloud = PointCloud(positions=[[0, 0, 0], [1, 1, 1]], instance_ids=[instance, instance])
    scene = normalize_scene(cloud, align="none")
    return build_mark_plan(scene, MarkStyle(variant=variant, palette=[INK], dilation_px=2))


class TestMarkPlan:
    """Test build_mark_plan."""

    def test_largest_first(self, two_box_scene: SceneFrame) -> None:
        """The instance with more points gets A and the first palette color."""
        style = MarkStyle(variant=MarkVariant.LETTER_MARK)
        plan = build_mark_plan(two_box_scene, style)
        assert [(e.instance_id, e.letter) for e in plan.entries] == [(3, "A"), (7, "B")]
        assert [e.color for e in plan.entries] == style.palette[:2]
        assert plan.style_name == "letter_mark"

    def test_red_boxes(self, two_box_scene: SceneFrame) -> None:
        """The red AABB style ignores the palette."""
        plan = build_mark_plan(two_box_scene, MarkStyle(variant=MarkVariant.AABB3D_RED))
        assert {e.color for e in plan.entries} == {RED}

    def test_subset_and_limit(self, two_box_scene: SceneFrame) -> None:
        """Explicit instances are lettered from A; max_marks keeps the largest."""
        style = MarkStyle(variant=MarkVariant.LETTER_MARK)
        only_cup = build_mark_plan(two_box_scene, style, instances=[7])
        assert [(e.instance_id, e.letter) for e in only_cup.entries] == [(7, "A")]
        limited = build_mark_plan(two_box_scene, style, max_marks=1)
        assert [e.instance_id for e in limited.entries] == [3]

    def test_letters_skip_axis_names(self) -> None:
        """X, Y and Z are never mark letters."""
        assert len(MARK_LETTERS) == 23
        assert not set("XYZ") & set(MARK_LETTERS)

    def test_requires_instances(self) -> None:
        scene = normalize_scene(PointCloud(positions=[[0, 0, 0]]), align="none")
        with pytest.raises(MissingInstanceLabels):
            build_mark_plan(scene, MarkStyle(variant=MarkVariant.LETTER_MARK))


class TestContour:
    """Test contour_from_mask."""

    def test_rectangle_ring(self) -> None:
        """A 5x7 rectangle dilated by 2 leaves a 64-pixel ring."""
        mask = rect_mask(1, slice(5, 10), slice(5, 12))
        ring = contour_from_mask(mask, 2)
        assert int(ring.sum()) == 9 * 11 - 5 * 7
        assert not (ring & mask.bitmap).any()

    def test_empty_mask(self) -> None:
        with pytest.raises(EmptyMask):
            contour_from_mask(InstanceMask(instance_id=1, bitmap=np.zeros((4, 4))), 2)

    def test_zero_dilation(self) -> None:
        with pytest.raises(ValueError):
            contour_from_mask(rect_mask(1, slice(1, 3), slice(1, 3)), 0)


class TestOverlayMarks:
    """Test overlay_marks."""

    def test_contour_only_touches_ring(self) -> None:
        """Only the ring pixels change and the input view is left alone."""
        view = blank_view()
        mask = rect_mask(1, slice(10, 20), slice(12, 25))
        marked = overlay_marks(view, [mask], plan_for(MarkVariant.CONTOUR_ONLY))
        changed = np.any(marked.image != view.image, axis=2)
        assert np.array_equal(changed, contour_from_mask(mask, 2))
        assert np.all(view.image == GRAY)
        assert marked.point_index is view.point_index

    def test_letter_on_disc(self) -> None:
        """The letter is white on a disc of the entry color at the mask centroid."""
        view = blank_view()
        mask = rect_mask(1, slice(15, 26), slice(15, 26))
        marked = overlay_marks(view, [mask], plan_for(MarkVariant.MARK_PLUS_CONTOUR))
        assert tuple(marked.image[20, 10]) == INK
        white = np.argwhere(np.all(marked.image == WHITE, axis=2))
        assert len(white) > 0
        assert white.min() >= 13 and white.max() <= 27

    def test_mask_fill_blends(self) -> None:
        """Mask fill mixes 40% of the entry color into member pixels."""
        view = blank_view()
        mask = rect_mask(1, slice(0, 40), slice(0, 10))
        marked = overlay_marks(view, [mask], plan_for(MarkVariant.MASK_FILL))
        assert tuple(marked.image[0, 0]) == (81, 85, 89)
        assert tuple(marked.image[0, 20]) == GRAY

    def test_empty_mask_is_skipped(self) -> None:
        """An instance not visible in a view draws nothing."""
        view = blank_view()
        empty = InstanceMask(instance_id=1, bitmap=np.zeros((40, 40), dtype=bool))
        marked = overlay_marks(view, [empty], plan_for(MarkVariant.MARK_PLUS_CONTOUR))
        assert np.array_equal(marked.image, view.image)

    def test_3d_variants_are_ignored(self) -> None:
        """Box styles need no masks here."""
        view = blank_view()
        marked = overlay_marks(view, [], plan_for(MarkVariant.AABB3D_COLORED))
        assert np.array_equal(marked.image, view.image)

    def test_missing_mask(self) -> None:
        with pytest.raises(MissingMask):
            overlay_marks(blank_view(), [], plan_for(MarkVariant.LETTER_MARK))

    def test_mask_size_mismatch(self) -> None:
        mask = rect_mask(1, slice(1, 3), slice(1, 3), size=10)
        with pytest.raises(DimensionMismatch):
            overlay_marks(blank_view(), [mask], plan_for(MarkVariant.LETTER_MARK))


class TestProjectedMasks:
    """Test project_instance_mask on rendered views."""

    def test_mask_covers_owned_pixels(self, two_box_scene: SceneFrame) -> None:
        """Every pixel won by an instance point is in its mask."""
        cam = make_camera_rig(two_box_scene, n_views=1, image_size=64)[0]
        view = render_view(two_box_scene, [], cam, splat_px=1)
        mask = project_instance_mask(view, two_box_scene, 3)
        owner = np.where(
            view.point_index >= 0,
            two_box_scene.cloud.instance_ids[np.maximum(view.point_index, 0)],
            -1,
        )
        assert (owner == 3).any()
        assert np.all(mask.bitmap[owner == 3])
        assert not mask.bitmap[owner == 7].any()

    def test_absent_instance(self, two_box_scene: SceneFrame) -> None:
        """An instance with no pixels gives an empty mask."""
        cam = make_camera_rig(two_box_scene, n_views=1, image_size=32)[0]
        view = render_view(two_box_scene, [], cam)
        assert project_instance_mask(view, two_box_scene, 99).empty


class TestEmbed3dMarks:
    """Test embed_3d_marks."""

    def test_colored_boxes(self, two_box_scene: SceneFrame) -> None:
        """Each entry gets 12 box edges and a letter on a disc above its box."""
        plan = build_mark_plan(two_box_scene, MarkStyle(variant=MarkVariant.AABB3D_COLORED))
        marks = embed_3d_marks(two_box_scene, plan)
        assert len(marks.lines) == 24
        assert all(line.kind == PrimitiveKind.BOX for line in marks.lines)
        table_label = marks.labels[0]
        assert table_label.text == "A"
        assert table_label.anchor == pytest.approx((1.0, 0.5, 0.8))
        assert table_label.disc_color == plan.entries[0].color

    def test_obb_boxes(self, two_box_scene: SceneFrame) -> None:
        plan = build_mark_plan(two_box_scene, MarkStyle(variant=MarkVariant.OBB3D))
        assert len(embed_3d_marks(two_box_scene, plan).lines) == 24

    def test_edge_points(self, two_box_scene: SceneFrame) -> None:
        """Edge-point styles recolor crease points of the instance only."""
        plan = build_mark_plan(
            two_box_scene, MarkStyle(variant=MarkVariant.EDGE_POINTS_3D), instances=[3]
        )
        marks = embed_3d_marks(two_box_scene, plan)
        assert marks.lines == [] and marks.labels == []
        indices = marks.recolors[0].indices
        assert len(indices) > 0
        assert set(two_box_scene.cloud.instance_ids[indices].tolist()) == {3}

    def test_letters_only(self, two_box_scene: SceneFrame) -> None:
        """The 3D letter style anchors one disc per object and draws nothing else."""
        plan = build_mark_plan(two_box_scene, MarkStyle(variant=MarkVariant.LETTER_3D))
        marks = embed_3d_marks(two_box_scene, plan)
        assert marks.lines == [] and marks.recolors == []
        assert [label.text for label in marks.labels] == ["A", "B"]
        assert marks.labels[1].anchor == pytest.approx((3.1, 2.1, 0.3))
        assert all(label.kind == PrimitiveKind.MARK_LETTER for label in marks.labels)

    def test_mask_styles_embed_nothing(self, two_box_scene: SceneFrame) -> None:
        plan = build_mark_plan(two_box_scene, MarkStyle(variant=MarkVariant.MARK_PLUS_CONTOUR))
        marks = embed_3d_marks(two_box_scene, plan)
        assert marks.lines == [] and marks.labels == [] and marks.recolors == []


class TestMaskImport:
    """Test loading external mask PNGs."""

    def test_nonzero_pixels_are_members(self, tmp_path: Path) -> None:
        raster = np.zeros((4, 6), dtype=np.uint8)
        raster[1:3, 2:5] = 200
        Image.fromarray(raster).save(tmp_path / "view0_inst5.png")
        mask = load_mask_png(tmp_path / "view0_inst5.png", 5, (4, 6))
        assert mask.bitmap.sum() == 6

    def test_dark_color_pixels_are_members(self, tmp_path: Path) -> None:
        """Color masks keep pixels whose luminance rounds to zero."""
        raster = np.zeros((4, 6, 3), dtype=np.uint8)
        raster[0, 0] = (1, 0, 0)
        raster[2, 3] = (0, 0, 2)
        raster[3, 5] = (255, 255, 255)
        Image.fromarray(raster).save(tmp_path / "view0_inst5.png")
        mask = load_mask_png(tmp_path / "view0_inst5.png", 5, (4, 6))
        assert np.argwhere(mask.bitmap).tolist() == [[0, 0], [2, 3], [3, 5]]

    def test_missing_file_is_empty(self, tmp_path: Path) -> None:
        assert load_mask_png(tmp_path / "nothing.png", 5, (4, 6)).empty

    def test_wrong_size(self, tmp_path: Path) -> None:
        Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(tmp_path / "m.png")
        with pytest.raises(DimensionMismatch):
            load_mask_png(tmp_path / "m.png", 5, (4, 6))

    def test_view_masks_follow_plan(self, tmp_path: Path, two_box_scene: SceneFrame) -> None:
        """One mask per plan entry, named by view and instance."""
        raster = np.full((4, 6), 255, dtype=np.uint8)
        Image.fromarray(raster).save(tmp_path / "view2_inst7.png")
        plan = build_mark_plan(two_box_scene, MarkStyle(variant=MarkVariant.LETTER_MARK))
        masks = load_view_masks(tmp_path, 2, plan, (4, 6))
        assert [(m.instance_id, m.empty) for m in masks] == [(3, True), (7, False)]
