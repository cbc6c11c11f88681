"""2D mark overlays on rendered views and 3D mark geometry embedded before rendering."""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from axisprompt.exceptions import (
    DimensionMismatch,
    EmptyMask,
    MissingInstanceLabels,
    MissingMask,
    TooFewPoints,
)
from axisprompt.font import text_bitmap
from axisprompt.geometry import compute_aabb, compute_obb, estimate_normals, extract_edge_points
from axisprompt.models import (
    RGB,
    InstanceMask,
    LineSegment,
    MarkEntry,
    MarkPlan,
    MarkStyle,
    MarkVariant,
    PointRecolor,
    PrimitiveKind,
    Renderables,
    RenderedView,
    SceneFrame,
    TextLabel,
)
from axisprompt.render import DISC_RADIUS_PX, TEXT_SCALE, blit_mask, fill_disc

logger = logging.getLogger(__name__)

# X, Y and Z name the axes
MARK_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVW"
RED: RGB = (255, 0, 0)
WHITE: RGB = (255, 255, 255)
FILL_ALPHA = 0.4
BOX_STROKE_PX = 2
MASK_FILENAME = "view{view}_inst{instance}.png"

MASK_VARIANTS = frozenset(
    {
        MarkVariant.LETTER_MARK,
        MarkVariant.MARK_PLUS_CONTOUR,
        MarkVariant.CONTOUR_ONLY,
        MarkVariant.MASK_FILL,
        MarkVariant.BBOX2D,
        MarkVariant.POINT2D,
        MarkVariant.POLYGON2D,
    }
)
_LETTER_2D = frozenset(
    {
        MarkVariant.LETTER_MARK,
        MarkVariant.MARK_PLUS_CONTOUR,
        MarkVariant.MASK_FILL,
        MarkVariant.BBOX2D,
        MarkVariant.POLYGON2D,
    }
)
_LETTER_3D = frozenset(
    {
        MarkVariant.LETTER_3D,
        MarkVariant.AABB3D_RED,
        MarkVariant.AABB3D_COLORED,
        MarkVariant.OBB3D,
        MarkVariant.MARK_PLUS_EDGE_POINTS,
    }
)
_EDGE_VARIANTS = frozenset({MarkVariant.EDGE_POINTS_3D, MarkVariant.MARK_PLUS_EDGE_POINTS})


def build_mark_plan(
    scene: SceneFrame,
    style: MarkStyle,
    instances: Optional[Iterable[int]] = None,
    max_marks: int = len(MARK_LETTERS),
) -> MarkPlan:
    """
    Assign letters to instances, largest first.

    Args:
        scene: Scene with instance labels
        style: Mark style shared by every entry
        instances: Instances to mark; all labeled instances when omitted
        max_marks: Upper bound on the number of entries

    Returns:
        MarkPlan ordered A, B, C, ...

    Raises:
        MissingInstanceLabels: If the scene carries no instance ids
    """
    cloud = scene.cloud
    if cloud.instance_ids is None:
        raise MissingInstanceLabels("mark plans need instance labels")
    counts = cloud.point_counts()
    chosen = list(counts) if instances is None else [i for i in instances if i in counts]
    chosen.sort(key=lambda i: (-counts[i], i))
    limit = min(max_marks, len(MARK_LETTERS))
    if len(chosen) > limit:
        logger.warning(f"Marking the {limit} largest of {len(chosen)} instances")
        chosen = chosen[:limit]

    entries = []
    for k, instance in enumerate(chosen):
        if style.variant == MarkVariant.AABB3D_RED:
            color = RED
        else:
            color = style.palette[k % len(style.palette)]
        entries.append(
            MarkEntry(instance_id=instance, letter=MARK_LETTERS[k], style=style, color=color)
        )
    return MarkPlan(entries=entries)


def project_instance_mask(
    view: RenderedView, scene: SceneFrame, instance: int, closing: bool = True
) -> InstanceMask:
    """
    Pixels whose winning point belongs to an instance.

    One 3x3 morphological closing seals gaps between splats.

    Raises:
        MissingInstanceLabels: If the scene carries no instance ids
    """
    ids = scene.cloud.instance_ids
    if ids is None:
        raise MissingInstanceLabels("mask projection needs instance labels")
    index = view.point_index
    owner = np.where(index >= 0, ids[np.maximum(index, 0)] if len(ids) else -1, -1)
    bitmap = owner == instance
    if closing and bitmap.any():
        padded = np.pad(bitmap, 1)
        bitmap = ndimage.binary_closing(padded, structure=np.ones((3, 3), dtype=bool))[1:-1, 1:-1]
    return InstanceMask(instance_id=instance, bitmap=bitmap)


def contour_from_mask(mask: InstanceMask, dilation_px: int) -> np.ndarray:
    """
    Ring of pixels within Chebyshev distance dilation_px of the mask, outside it.

    Raises:
        EmptyMask: If the mask has no pixels
        ValueError: If dilation_px < 1
    """
    if dilation_px < 1:
        raise ValueError(f"dilation_px must be >= 1, got {dilation_px}")
    if mask.empty:
        raise EmptyMask(f"mask of instance {mask.instance_id} is empty")
    size = 2 * dilation_px + 1
    grown = ndimage.binary_dilation(mask.bitmap, structure=np.ones((size, size), dtype=bool))
    return grown & ~mask.bitmap


def _anchor(bitmap: np.ndarray) -> Tuple[int, int]:
    """Mask centroid, moved to the nearest member pixel when it falls outside."""
    rows, cols = np.nonzero(bitmap)
    row = int(round(float(rows.mean())))
    col = int(round(float(cols.mean())))
    if bitmap[row, col]:
        return row, col
    nearest = int(np.argmin((rows - row) ** 2 + (cols - col) ** 2))
    return int(rows[nearest]), int(cols[nearest])


def draw_letter(image: np.ndarray, row: int, col: int, letter: str, disc: RGB) -> None:
    """White letter centered on a filled disc, in place."""
    fill_disc(image, row, col, DISC_RADIUS_PX, disc)
    glyph = text_bitmap(letter, TEXT_SCALE)
    gh, gw = glyph.shape
    blit_mask(image, glyph, row - gh // 2, col - gw // 2, WHITE)


def _box_stroke(bitmap: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(bitmap)
    r0, r1, c0, c1 = rows.min(), rows.max(), cols.min(), cols.max()
    stroke = np.zeros_like(bitmap)
    stroke[r0 : r1 + 1, c0 : c1 + 1] = True
    inner = np.zeros_like(bitmap)
    s = BOX_STROKE_PX
    inner[r0 + s : r1 + 1 - s, c0 + s : c1 + 1 - s] = True
    return stroke & ~inner


def _outline(bitmap: np.ndarray) -> np.ndarray:
    interior = ndimage.binary_erosion(
        np.pad(bitmap, 1), structure=np.ones((3, 3), dtype=bool)
    )[1:-1, 1:-1]
    return bitmap & ~interior


def overlay_marks(
    view: RenderedView, masks: Sequence[InstanceMask], plan: MarkPlan
) -> RenderedView:
    """
    Draw the 2D mark style of every plan entry onto a copy of a view.

    Layers go fills, contours, boxes/dots/outlines, then letters on top.
    Entries whose mask is empty in this view are skipped; entries with
    3D-only variants are ignored here.

    Args:
        view: Rendered view (left unmodified)
        masks: Instance masks for this view
        plan: Mark plan

    Returns:
        New RenderedView sharing depth and point_index with the input

    Raises:
        MissingMask: If a mask-derived entry has no mask
        DimensionMismatch: If a mask does not match the view size
    """
    by_instance: Dict[int, InstanceMask] = {m.instance_id: m for m in masks}
    drawn: List[Tuple[MarkEntry, np.ndarray]] = []
    for entry in plan.entries:
        if entry.style.variant not in MASK_VARIANTS:
            continue
        mask = by_instance.get(entry.instance_id)
        if mask is None:
            raise MissingMask(f"no mask for instance {entry.instance_id} (mark {entry.letter})")
        if mask.bitmap.shape != view.shape:
            raise DimensionMismatch(f"mask is {mask.bitmap.shape}, view is {view.shape}")
        if mask.empty:
            logger.debug(f"Mark {entry.letter} is not visible in {view.camera.name or 'view'}")
            continue
        drawn.append((entry, mask.bitmap))

    image = view.image.copy()
    for entry, bitmap in drawn:
        if entry.style.variant == MarkVariant.MASK_FILL:
            blended = (1.0 - FILL_ALPHA) * image[bitmap] + FILL_ALPHA * np.asarray(entry.color)
            image[bitmap] = np.rint(blended).astype(np.uint8)
    for entry, bitmap in drawn:
        if entry.style.variant in (MarkVariant.MARK_PLUS_CONTOUR, MarkVariant.CONTOUR_ONLY):
            member = InstanceMask(instance_id=entry.instance_id, bitmap=bitmap)
            image[contour_from_mask(member, entry.style.dilation_px)] = entry.color
    for entry, bitmap in drawn:
        variant = entry.style.variant
        if variant == MarkVariant.BBOX2D:
            image[_box_stroke(bitmap)] = entry.color
        elif variant == MarkVariant.POINT2D:
            row, col = _anchor(bitmap)
            image[max(row - 1, 0) : row + 2, max(col - 1, 0) : col + 2] = entry.color
        elif variant == MarkVariant.POLYGON2D:
            image[_outline(bitmap)] = entry.color
    for entry, bitmap in drawn:
        if entry.style.variant in _LETTER_2D:
            row, col = _anchor(bitmap)
            draw_letter(image, row, col, entry.letter, entry.color)
    return view.model_copy(update={"image": image})


def _box_edges(corners: np.ndarray, color: RGB) -> List[LineSegment]:
    edges = []
    for i in range(8):
        for k in range(3):
            j = i | (1 << k)
            if j != i:
                edges.append(
                    LineSegment(
                        start=tuple(float(v) for v in corners[i]),
                        end=tuple(float(v) for v in corners[j]),
                        color=color,
                        kind=PrimitiveKind.BOX,
                        width=2,
                    )
                )
    return edges


def _edge_point_indices(scene: SceneFrame, instance: int) -> np.ndarray:
    indices = scene.cloud.instance_indices(instance)
    part = scene.cloud.subset(indices)
    if part.normals is None:
        try:
            part = estimate_normals(part, k=min(8, len(part)))
        except TooFewPoints:
            logger.warning(f"Instance {instance} is too small for edge points")
            return np.zeros(0, dtype=np.int64)
    return indices[extract_edge_points(part)]


def embed_3d_marks(scene: SceneFrame, plan: MarkPlan) -> Renderables:
    """
    Box edges, edge-point recolors and letter anchors for the 3D mark variants.

    Letters sit at the top-center of each instance AABB and are drawn as
    white text on a disc of the entry color.

    Raises:
        EmptySelection: If a plan entry names an instance without points
        DegenerateGeometry: If an obb3d instance is collinear
    """
    marks = Renderables()
    cloud = scene.cloud
    for entry in plan.entries:
        variant = entry.style.variant
        if variant in MASK_VARIANTS:
            continue
        box = compute_aabb(cloud, entry.instance_id)
        if variant in (MarkVariant.AABB3D_RED, MarkVariant.AABB3D_COLORED):
            marks.lines.extend(_box_edges(box.corners(), entry.color))
        elif variant == MarkVariant.OBB3D:
            obb = compute_obb(cloud, entry.instance_id)
            marks.lines.extend(_box_edges(obb.corners(), entry.color))
        if variant in _EDGE_VARIANTS:
            indices = _edge_point_indices(scene, entry.instance_id)
            if len(indices):
                marks.recolors.append(PointRecolor(indices=indices, color=entry.color))
        if variant in _LETTER_3D:
            top = (float(box.center[0]), float(box.center[1]), float(box.hi[2]))
            marks.labels.append(
                TextLabel(
                    anchor=top,
                    text=entry.letter,
                    color=WHITE,
                    kind=PrimitiveKind.MARK_LETTER,
                    disc_color=entry.color,
                )
            )
    return marks


def load_mask_png(path: Path, instance: int, shape: Tuple[int, int]) -> InstanceMask:
    """
    Import an external mask; non-zero pixels are members, a missing file is an empty mask.

    Raises:
        DimensionMismatch: If the image size differs from the view size
    """
    path = Path(path)
    if not path.exists():
        logger.debug(f"No mask file {path}; treating instance {instance} as not visible")
        return InstanceMask(instance_id=instance, bitmap=np.zeros(shape, dtype=bool))
    with Image.open(path) as image:
        # single-band masks are read raw; color masks count any non-zero RGB band
        if len(image.getbands()) == 1 and image.mode != "P":
            bitmap = np.asarray(image) != 0
        else:
            bitmap = np.asarray(image.convert("RGB")).any(axis=-1)
    if bitmap.shape != tuple(shape):
        raise DimensionMismatch(f"mask {path.name} is {bitmap.shape}, view is {tuple(shape)}")
    return InstanceMask(instance_id=instance, bitmap=bitmap)


def load_view_masks(
    mask_dir: Path, view: int, plan: MarkPlan, shape: Tuple[int, int]
) -> List[InstanceMask]:
    """Masks for every plan entry of one view, read from view{j}_inst{i}.png files."""
    return [
        load_mask_png(
            Path(mask_dir) / MASK_FILENAME.format(view=view, instance=entry.instance_id),
            entry.instance_id,
            shape,
        )
        for entry in plan.entries
    ]
