"""Software rasterizer: z-buffered point splats, an embedded labeled axis, camera rigs."""

import io
import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, PositiveFloat

from axisprompt.exceptions import InvalidAxisSpec
from axisprompt.font import text_bitmap
from axisprompt.models import (
    RGB,
    Camera,
    CameraIntrinsics,
    LineSegment,
    PrimitiveKind,
    Projection,
    Renderables,
    RenderedView,
    SceneFrame,
    TextLabel,
    Vec3,
)

logger = logging.getLogger(__name__)

DEFAULT_IMAGE_SIZE = 1024
DEFAULT_SPLAT_PX = 2
DEFAULT_ELEVATION = 35.0
DEFAULT_DISTANCE_SCALE = 1.2
DEFAULT_FOV_DEG = 60.0
BACKGROUND: RGB = (255, 255, 255)
POINT_COLOR: RGB = (128, 128, 128)
AXIS_COLORS: Tuple[RGB, RGB, RGB] = ((220, 0, 0), (0, 160, 0), (0, 0, 220))

INDOOR_TICK = 0.5
OUTDOOR_TICK = 5.0
OUTDOOR_EXTENT = 30.0
TRIVIEW_MARGIN = 0.05

NEAR_PLANE = 1e-6
DEPTH_BIAS = 0.05
LABEL_OFFSET_PX = 6
TEXT_SCALE = 2
DISC_RADIUS_PX = 12
MAX_LINE_SAMPLES = 8192
_TICK_DIRECTION = (1, 0, 0)


class AxisSpec(BaseModel):
    """Geometry and visibility of the embedded coordinate axis."""

    origin: Vec3 = (0.0, 0.0, 0.0)
    axis_lengths: Tuple[PositiveFloat, PositiveFloat, PositiveFloat]
    tick_interval: float = Field(INDOOR_TICK, gt=0)
    tick_size: float = Field(0.125, gt=0)
    show_ticks: bool = True
    show_labels: bool = True
    label_decimals: int = Field(1, ge=0)
    axis_colors: Tuple[RGB, RGB, RGB] = AXIS_COLORS

    @classmethod
    def for_scene(
        cls,
        scene: SceneFrame,
        tick_interval: Optional[float] = None,
        tick_size: Optional[float] = None,
        show_ticks: bool = True,
        show_labels: bool = True,
        label_decimals: Optional[int] = None,
    ) -> "AxisSpec":
        """
        Axis covering the scene, with indoor or outdoor tick defaults.

        Axis lengths are the scene extent rounded up to whole ticks.
        """
        extent = scene.bounds().extent
        if tick_interval is None:
            tick_interval = OUTDOOR_TICK if extent.max() > OUTDOOR_EXTENT else INDOOR_TICK
        if label_decimals is None:
            label_decimals = _decimals_for(tick_interval)
        lengths = tuple(
            max(math.ceil(e / tick_interval - 1e-9), 1) * tick_interval for e in extent
        )
        return cls(
            axis_lengths=lengths,
            tick_interval=tick_interval,
            tick_size=tick_size or 0.25 * tick_interval,
            show_ticks=show_ticks,
            show_labels=show_labels,
            label_decimals=label_decimals,
        )


def _decimals_for(step: float) -> int:
    for decimals in range(6):
        if abs(round(step, decimals) - step) < 1e-9:
            return decimals
    return 6


def _vec(values: np.ndarray) -> Vec3:
    return (float(values[0]), float(values[1]), float(values[2]))


def build_axis(scene: SceneFrame, spec: AxisSpec) -> Renderables:
    """
    Axis polylines, ticks and labels for one scene.

    Ticks every tick_interval carry numeric labels; the axis ends carry
    "X", "Y" and "Z". show_ticks=False drops tick segments and their
    numbers, show_labels=False drops every text primitive.

    Raises:
        InvalidAxisSpec: If the axis does not reach the far side of the scene
    """
    origin = np.asarray(spec.origin, dtype=np.float64)
    lengths = np.asarray(spec.axis_lengths, dtype=np.float64)
    if len(scene.cloud) and np.any(origin + lengths < scene.bounds().hi - 1e-9):
        raise InvalidAxisSpec(f"axis lengths {spec.axis_lengths} do not cover the scene")

    axes = Renderables()
    for a in range(3):
        direction = np.eye(3)[a]
        color = spec.axis_colors[a]
        end = origin + direction * lengths[a]
        axes.lines.append(
            LineSegment(
                start=_vec(origin), end=_vec(end), color=color, kind=PrimitiveKind.AXIS, width=2
            )
        )
        if spec.show_ticks:
            offset = -np.eye(3)[_TICK_DIRECTION[a]] * spec.tick_size
            count = math.floor(lengths[a] / spec.tick_interval + 1e-9)
            for k in range(count + 1):
                base = origin + direction * (k * spec.tick_interval)
                tip = base + offset
                axes.lines.append(
                    LineSegment(
                        start=_vec(base), end=_vec(tip), color=color, kind=PrimitiveKind.TICK
                    )
                )
                if spec.show_labels:
                    value = origin[a] + k * spec.tick_interval
                    axes.labels.append(
                        TextLabel(
                            anchor=_vec(tip),
                            text=f"{value:.{spec.label_decimals}f}",
                            kind=PrimitiveKind.TICK_LABEL,
                        )
                    )
        if spec.show_labels:
            axes.labels.append(
                TextLabel(
                    anchor=_vec(end + direction * spec.tick_size),
                    text="XYZ"[a],
                    color=color,
                    kind=PrimitiveKind.AXIS_NAME,
                )
            )
    return axes


def look_at(
    eye: np.ndarray,
    target: np.ndarray,
    intr: CameraIntrinsics,
    name: str = "",
    up: Sequence[float] = (0.0, 0.0, 1.0),
) -> Camera:
    """Perspective camera at eye looking at target, image-down along -up."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return Camera(name=name, intr=intr, rotation=rotation, translation=-rotation @ eye)


def make_camera_rig(
    scene: SceneFrame,
    n_views: int = 8,
    elevation: float = DEFAULT_ELEVATION,
    distance_scale: float = DEFAULT_DISTANCE_SCALE,
    image_size: int = DEFAULT_IMAGE_SIZE,
    fov_deg: float = DEFAULT_FOV_DEG,
) -> List[Camera]:
    """
    Perspective cameras evenly spaced in azimuth around the scene centroid.

    Args:
        scene: Normalized scene
        n_views: Number of cameras, the first at azimuth 0
        elevation: Degrees above the horizontal plane
        distance_scale: Orbit radius as a multiple of the scene diagonal
        image_size: Square image side in pixels
        fov_deg: Vertical field of view

    Returns:
        Cameras ordered by increasing azimuth
    """
    if n_views < 1:
        raise ValueError(f"n_views must be >= 1, got {n_views}")
    points = scene.cloud.positions
    centroid = points.mean(axis=0) if len(points) else np.zeros(3)
    diagonal = float(np.linalg.norm(scene.bounds().extent)) or 1.0
    radius = distance_scale * diagonal
    intr = CameraIntrinsics.from_fov(image_size, image_size, fov_deg)
    el = math.radians(elevation)
    cameras = []
    for k in range(n_views):
        az = 2.0 * math.pi * k / n_views
        offset = radius * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )
        cameras.append(look_at(centroid + offset, centroid, intr, name=f"view{k}"))
    return cameras


def make_triview(scene: SceneFrame, image_size: int = DEFAULT_IMAGE_SIZE) -> List[Camera]:
    """Orthographic top (-z), front (-y) and side (-x) cameras framing the scene AABB."""
    bounds = scene.bounds()
    center = bounds.center
    extent = bounds.extent
    standoff = float(np.linalg.norm(extent)) + 1.0
    half = (image_size - 1) / 2.0
    layouts = (
        ("top", (0.0, 0.0, -1.0), (0.0, -1.0, 0.0), (0, 1)),
        ("front", (0.0, -1.0, 0.0), (0.0, 0.0, -1.0), (0, 2)),
        ("side", (-1.0, 0.0, 0.0), (0.0, 0.0, -1.0), (1, 2)),
    )
    cameras = []
    for name, forward, down, (a, b) in layouts:
        span = max(extent[a], extent[b]) * (1.0 + 2.0 * TRIVIEW_MARGIN) or 1.0
        scale = image_size / span
        intr = CameraIntrinsics(
            fx=scale, fy=scale, cx=half, cy=half, width=image_size, height=image_size
        )
        f = np.asarray(forward)
        d = np.asarray(down)
        rotation = np.stack([np.cross(d, f), d, f])
        eye = center - f * standoff
        cameras.append(
            Camera(
                name=name,
                intr=intr,
                rotation=rotation,
                translation=-rotation @ eye,
                projection=Projection.ORTHOGRAPHIC,
            )
        )
    return cameras


def _pixel_centers(uv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    clipped = np.clip(uv, -1e6, 1e6)
    cols = np.floor(clipped[:, 0] + 0.5).astype(np.int64)
    rows = np.floor(clipped[:, 1] + 0.5).astype(np.int64)
    return cols, rows


def _square_offsets(radius: int) -> Tuple[np.ndarray, np.ndarray]:
    steps = np.arange(-(radius - 1), radius)
    du, dv = np.meshgrid(steps, steps, indexing="xy")
    return du.reshape(-1), dv.reshape(-1)


def fill_disc(image: np.ndarray, row: int, col: int, radius: int, color: RGB) -> None:
    """Fill a disc in place, clipped to the image."""
    height, width = image.shape[:2]
    r0, r1 = max(row - radius, 0), min(row + radius + 1, height)
    c0, c1 = max(col - radius, 0), min(col + radius + 1, width)
    if r0 >= r1 or c0 >= c1:
        return
    rr, cc = np.mgrid[r0:r1, c0:c1]
    inside = (rr - row) ** 2 + (cc - col) ** 2 <= radius**2
    image[rr[inside], cc[inside]] = color


def blit_mask(image: np.ndarray, mask: np.ndarray, top: int, left: int, color: RGB) -> None:
    """Paint the set pixels of mask onto image with its top-left corner at (top, left)."""
    height, width = image.shape[:2]
    rows, cols = np.nonzero(mask)
    rows = rows + top
    cols = cols + left
    inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    image[rows[inside], cols[inside]] = color


def _splat_points(
    uv: np.ndarray,
    depth_values: np.ndarray,
    colors: np.ndarray,
    splat_px: int,
    image: np.ndarray,
    depth: np.ndarray,
    index: np.ndarray,
) -> None:
    height, width = depth.shape
    visible = np.flatnonzero((depth_values > NEAR_PLANE) & np.all(np.isfinite(uv), axis=1))
    if len(visible) == 0:
        return
    cols, rows = _pixel_centers(uv[visible])
    du, dv = _square_offsets(splat_px)
    pu = (cols[:, None] + du[None, :]).reshape(-1)
    pv = (rows[:, None] + dv[None, :]).reshape(-1)
    ids = np.repeat(visible, len(du))
    zs = np.repeat(depth_values[visible], len(du))
    inside = (pu >= 0) & (pu < width) & (pv >= 0) & (pv < height)
    pixels = pv[inside] * width + pu[inside]
    ids = ids[inside]
    zs = zs[inside]
    # nearest point per pixel, ties to the lower index
    order = np.lexsort((ids, zs, pixels))
    pixels, ids, zs = pixels[order], ids[order], zs[order]
    first = np.ones(len(pixels), dtype=bool)
    first[1:] = pixels[1:] != pixels[:-1]
    pixels, ids, zs = pixels[first], ids[first], zs[first]
    depth.reshape(-1)[pixels] = zs
    index.reshape(-1)[pixels] = ids
    image.reshape(-1, 3)[pixels] = colors[ids]


def _stamp(
    image: np.ndarray,
    depth: np.ndarray,
    uv: np.ndarray,
    zs: np.ndarray,
    width_px: int,
    color: RGB,
    bias: float,
) -> None:
    height, width = depth.shape
    cols, rows = _pixel_centers(uv)
    du, dv = _square_offsets(width_px)
    pu = (cols[:, None] + du[None, :]).reshape(-1)
    pv = (rows[:, None] + dv[None, :]).reshape(-1)
    pz = np.repeat(zs, len(du))
    inside = (pu >= 0) & (pu < width) & (pv >= 0) & (pv < height)
    pu, pv, pz = pu[inside], pv[inside], pz[inside]
    visible = pz <= depth[pv, pu] + bias
    image[pv[visible], pu[visible]] = color


def _draw_segment(
    segment: LineSegment, cam: Camera, image: np.ndarray, depth: np.ndarray, bias: float
) -> None:
    start = np.asarray(segment.start, dtype=np.float64)
    end = np.asarray(segment.end, dtype=np.float64)
    ends_uv, ends_z = cam.project(np.stack([start, end]))
    if np.all(ends_z <= NEAR_PLANE):
        return
    if np.all(ends_z > NEAR_PLANE):
        length = float(np.linalg.norm(ends_uv[1] - ends_uv[0]))
        samples = int(min(math.ceil(length) * 2 + 2, MAX_LINE_SAMPLES))
    else:
        samples = MAX_LINE_SAMPLES
    t = np.linspace(0.0, 1.0, samples)
    uv, zs = cam.project(start + t[:, None] * (end - start))
    keep = zs > NEAR_PLANE
    _stamp(image, depth, uv[keep], zs[keep], segment.width, segment.color, bias)


def _draw_label(
    label: TextLabel, cam: Camera, image: np.ndarray, depth: np.ndarray, bias: float
) -> None:
    uv, zs = cam.project(np.asarray([label.anchor], dtype=np.float64))
    if zs[0] <= NEAR_PLANE or not np.all(np.isfinite(uv)):
        return
    cols, rows = _pixel_centers(uv)
    col, row = int(cols[0]), int(rows[0])
    height, width = depth.shape
    if not (0 <= row < height and 0 <= col < width):
        return
    if zs[0] > depth[row, col] + bias:
        return
    glyphs = text_bitmap(label.text, TEXT_SCALE)
    gh, gw = glyphs.shape
    if label.disc_color is not None:
        fill_disc(image, row, col, DISC_RADIUS_PX, label.disc_color)
        blit_mask(image, glyphs, row - gh // 2, col - gw // 2, label.color)
    else:
        blit_mask(image, glyphs, row - gh // 2, col + LABEL_OFFSET_PX, label.color)


def render_view(
    scene: SceneFrame,
    extras: Sequence[Renderables],
    cam: Camera,
    splat_px: int = DEFAULT_SPLAT_PX,
    background: RGB = BACKGROUND,
    depth_bias: float = DEPTH_BIAS,
) -> RenderedView:
    """
    Rasterize a scene and its overlay primitives from one camera.

    Points are splatted as squares of radius splat_px into a z-buffer.
    Lines and then text labels are drawn on top with a depth test against
    the point buffer; they never write depth or point_index.

    Args:
        scene: Normalized scene
        extras: Axis, mark and skeleton primitives
        cam: Camera
        splat_px: Splat radius (1 = single pixel)
        background: Color of empty pixels
        depth_bias: Tolerance (m) of the primitive depth test

    Returns:
        RenderedView with image, depth and point_index buffers
    """
    if splat_px < 1:
        raise ValueError(f"splat_px must be >= 1, got {splat_px}")
    height, width = cam.intr.height, cam.intr.width
    image = np.empty((height, width, 3), dtype=np.uint8)
    image[:] = background
    depth = np.full((height, width), np.inf)
    index = np.full((height, width), -1, dtype=np.int64)

    overlay = Renderables.merge(extras)
    cloud = scene.cloud
    if len(cloud):
        if cloud.colors is not None:
            colors = cloud.colors.copy()
        else:
            colors = np.empty((len(cloud), 3), dtype=np.uint8)
            colors[:] = POINT_COLOR
        for recolor in overlay.recolors:
            colors[recolor.indices] = recolor.color
        uv, zs = cam.project(cloud.positions)
        _splat_points(uv, zs, colors, splat_px, image, depth, index)

    for segment in overlay.lines:
        _draw_segment(segment, cam, image, depth, depth_bias)
    for label in overlay.labels:
        _draw_label(label, cam, image, depth, depth_bias)

    logger.debug(
        f"Rendered {cam.name or 'view'}: {int((index >= 0).sum())} filled pixels, "
        f"{len(overlay.lines)} lines, {len(overlay.labels)} labels"
    )
    return RenderedView(image=image, depth=depth, point_index=index, camera=cam)


def depth_to_gray(depth: np.ndarray) -> np.ndarray:
    """Map finite depth linearly from [near, far] to [255, 0]; empty pixels are 0."""
    gray = np.zeros(depth.shape, dtype=np.uint8)
    filled = np.isfinite(depth)
    if not filled.any():
        return gray
    values = depth[filled]
    near, far = float(values.min()), float(values.max())
    if far - near <= 0:
        gray[filled] = 255
    else:
        gray[filled] = np.rint(255.0 * (far - values) / (far - near)).astype(np.uint8)
    return gray


def render_depth_view(
    scene: SceneFrame, cam: Camera, splat_px: int = DEFAULT_SPLAT_PX
) -> np.ndarray:
    """Grayscale depth raster of the scene points (near = bright)."""
    return depth_to_gray(render_view(scene, [], cam, splat_px).depth)


def encode_png(raster: np.ndarray) -> bytes:
    """Encode an (H, W, 3) or (H, W) uint8 raster as PNG."""
    buffer = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(raster, dtype=np.uint8)).save(buffer, format="PNG")
    return buffer.getvalue()


def decode_png(payload: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(payload)) as image:
        return np.asarray(image).copy()
