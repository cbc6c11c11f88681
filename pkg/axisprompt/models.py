"""Pydantic models for scenes, cameras, marks, prompts and evaluation records."""

import base64
import colorsys
import hashlib
import json
import string
from enum import Enum
from typing import Annotated, Any, Dict, Iterable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from axisprompt.exceptions import UnfilledSlot

Vec3 = Tuple[float, float, float]
Channel = Annotated[int, Field(ge=0, le=255)]
RGB = Tuple[Channel, Channel, Channel]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
UNIT_TOLERANCE = 1e-6


def _vector_array(value: Any, name: str, width: int = 3) -> np.ndarray:
    """Coerce a value to a float64 array of shape (N, width)."""
    array = np.asarray(value, dtype=np.float64)
    if array.size == 0:
        array = array.reshape(0, width)
    if array.ndim != 2 or array.shape[1] != width:
        raise ValueError(f"{name} must have shape (N, {width}), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite")
    return array


def _matrix(value: Any, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64)
    if array.shape != (3, 3):
        raise ValueError(f"{name} must be a 3x3 matrix, got {array.shape}")
    return array


def _vector(value: Any, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=np.float64).reshape(-1)
    if array.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got {array.shape}")
    return array


def check_rotation(rotation: np.ndarray, name: str = "rotation") -> None:
    """Raise ValueError unless the matrix is orthonormal with determinant +1."""
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=UNIT_TOLERANCE):
        raise ValueError(f"{name} is not orthonormal")
    if abs(np.linalg.det(rotation) - 1.0) > UNIT_TOLERANCE:
        raise ValueError(f"{name} must be right-handed (det = +1)")


def default_palette(count: int = 12) -> List[RGB]:
    """
    Fully saturated hues ordered so that any prefix stays well separated.

    Args:
        count: Number of colors (hues are spaced 360/count degrees apart)

    Returns:
        List of RGB triples
    """
    order: List[int] = []
    step = count
    while step >= 1:
        for k in range(0, count, step):
            if k not in order:
                order.append(k)
        step //= 2
    palette: List[RGB] = []
    for k in order:
        r, g, b = colorsys.hsv_to_rgb(k / count, 1.0, 1.0)
        palette.append((round(r * 255), round(g * 255), round(b * 255)))
    return palette


# Geometry


class PointCloud(BaseModel):
    """Positions with optional colors, normals and instance labels, in meters."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    positions: np.ndarray = Field(..., description="(N, 3) float64 positions in meters")
    colors: Optional[np.ndarray] = Field(None, description="(N, 3) uint8 RGB colors")
    normals: Optional[np.ndarray] = Field(None, description="(N, 3) unit normals")
    instance_ids: Optional[np.ndarray] = Field(
        None, description="(N,) int64 instance ids, -1 marks an unlabeled point"
    )
    semantic_labels: Dict[int, str] = Field(
        default_factory=dict, description="Semantic label per instance id"
    )
    up_axis: Optional[int] = Field(
        None, ge=0, le=2, description="Index of the world axis pointing up, if declared"
    )

    @field_validator("positions", mode="before")
    @classmethod
    def _positions(cls, value: Any) -> np.ndarray:
        return _vector_array(value, "positions")

    @field_validator("normals", mode="before")
    @classmethod
    def _normals(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        return _vector_array(value, "normals")

    @field_validator("colors", mode="before")
    @classmethod
    def _colors(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        array = np.asarray(value)
        if array.size == 0:
            array = array.reshape(0, 3)
        if array.ndim != 2 or array.shape[1] != 3:
            raise ValueError(f"colors must have shape (N, 3), got {array.shape}")
        if array.dtype != np.uint8:
            if np.any(array < 0) or np.any(array > 255):
                raise ValueError("colors must lie in [0, 255]")
            array = np.rint(array).astype(np.uint8)
        return array

    @field_validator("instance_ids", mode="before")
    @classmethod
    def _instance_ids(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        array = np.asarray(value, dtype=np.int64).reshape(-1)
        if np.any(array < -1):
            raise ValueError("instance ids must be non-negative (or -1 for unlabeled)")
        return array

    @model_validator(mode="after")
    def _parallel_arrays(self) -> "PointCloud":
        count = len(self.positions)
        for name in ("colors", "normals", "instance_ids"):
            array = getattr(self, name)
            if array is not None and len(array) != count:
                raise ValueError(f"{name} has {len(array)} entries for {count} points")
        if self.normals is not None and count:
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
                raise ValueError("normals must have unit length")
        if self.semantic_labels:
            if self.instance_ids is None:
                raise ValueError("semantic labels require instance ids")
            present = set(self.instances())
            unused = sorted(k for k in self.semantic_labels if k not in present)
            if unused:
                raise ValueError(f"semantic labels reference instances without points: {unused}")
        return self

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def instances(self) -> List[int]:
        """Sorted instance ids that own at least one point."""
        if self.instance_ids is None:
            return []
        ids = np.unique(self.instance_ids)
        return [int(i) for i in ids if i >= 0]

    def instance_indices(self, instance: int) -> np.ndarray:
        """Indices of the points belonging to one instance."""
        if self.instance_ids is None:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.instance_ids == instance)

    def point_counts(self) -> Dict[int, int]:
        """Number of points per instance id."""
        if self.instance_ids is None:
            return {}
        ids, counts = np.unique(self.instance_ids[self.instance_ids >= 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def label(self, instance: int) -> str:
        """Semantic label of an instance, or a generic name."""
        return self.semantic_labels.get(instance, f"object {instance}")

    def subset(self, indices: np.ndarray) -> "PointCloud":
        """New cloud holding the given points, in the given order."""
        indices = np.asarray(indices, dtype=np.int64)
        ids = None if self.instance_ids is None else self.instance_ids[indices]
        labels = self.semantic_labels
        if ids is not None:
            kept = set(np.unique(ids).tolist())
            labels = {k: v for k, v in labels.items() if k in kept}
        return PointCloud(
            positions=self.positions[indices],
            colors=None if self.colors is None else self.colors[indices],
            normals=None if self.normals is None else self.normals[indices],
            instance_ids=ids,
            semantic_labels=labels,
            up_axis=self.up_axis,
        )

    def replace(self, **updates: Any) -> "PointCloud":
        """Validated copy with some fields replaced."""
        fields = {
            "positions": self.positions,
            "colors": self.colors,
            "normals": self.normals,
            "instance_ids": self.instance_ids,
            "semantic_labels": self.semantic_labels,
            "up_axis": self.up_axis,
        }
        fields.update(updates)
        return PointCloud(**fields)


class Aabb(BaseModel):
    """Axis-aligned bounding box in meters."""

    min: Vec3 = Field(..., description="Componentwise minimum corner")
    max: Vec3 = Field(..., description="Componentwise maximum corner")

    model_config = {
        "json_schema_extra": {"examples": [{"min": [0.0, 0.0, 0.0], "max": [1.0, 2.0, 0.75]}]}
    }

    @model_validator(mode="after")
    def _ordered(self) -> "Aabb":
        if any(lo > hi for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"box min {self.min} exceeds max {self.max}")
        return self

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Aabb":
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        return cls(min=tuple(float(v) for v in lo), max=tuple(float(v) for v in hi))

    @classmethod
    def from_center_size(cls, center: Iterable[float], size: Iterable[float]) -> "Aabb":
        c = np.asarray(list(center), dtype=np.float64)
        half = np.abs(np.asarray(list(size), dtype=np.float64)) / 2.0
        return cls(min=tuple(float(v) for v in c - half), max=tuple(float(v) for v in c + half))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.min, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.max, dtype=np.float64)

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def corners(self) -> np.ndarray:
        """The 8 corners; bit k of the corner index selects max along axis k."""
        lo, hi = self.lo, self.hi
        return np.array(
            [[hi[k] if (i >> k) & 1 else lo[k] for k in range(3)] for i in range(8)],
            dtype=np.float64,
        )


class Obb(BaseModel):
    """Oriented bounding box; axes are rows of a right-handed orthonormal frame."""

    center: Vec3
    axes: Tuple[Vec3, Vec3, Vec3]
    half_extents: Tuple[
        Annotated[float, Field(ge=0)], Annotated[float, Field(ge=0)], Annotated[float, Field(ge=0)]
    ]

    @model_validator(mode="after")
    def _frame(self) -> "Obb":
        check_rotation(np.asarray(self.axes, dtype=np.float64), "axes")
        return self

    def corners(self) -> np.ndarray:
        """The 8 corners; bit k of the corner index selects +half_extent along axis k."""
        axes = np.asarray(self.axes, dtype=np.float64)
        half = np.asarray(self.half_extents, dtype=np.float64)
        center = np.asarray(self.center, dtype=np.float64)
        signs = np.array([[1.0 if (i >> k) & 1 else -1.0 for k in range(3)] for i in range(8)])
        return center + (signs * half) @ axes


class SceneFrame(BaseModel):
    """A normalized scene and the rigid transform that produced it."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cloud: PointCloud
    rotation: np.ndarray = Field(..., description="3x3 rotation applied to the source cloud")
    translation: np.ndarray = Field(..., description="Translation applied after rotation")
    source_extent: np.ndarray = Field(..., description="AABB size of the source cloud")

    @field_validator("rotation", mode="before")
    @classmethod
    def _rotation(cls, value: Any) -> np.ndarray:
        rotation = _matrix(value, "rotation")
        check_rotation(rotation)
        return rotation

    @field_validator("translation", "source_extent", mode="before")
    @classmethod
    def _vectors(cls, value: Any) -> np.ndarray:
        return _vector(value, "vector")

    @model_validator(mode="after")
    def _origin(self) -> "SceneFrame":
        if len(self.cloud):
            lo = self.cloud.positions.min(axis=0)
            if np.any(np.abs(lo) > UNIT_TOLERANCE):
                raise ValueError(f"normalized cloud minimum must be the origin, got {lo}")
        return self

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        """Map source coordinates into the normalized frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_source(self, points: np.ndarray) -> np.ndarray:
        """Map normalized coordinates back to the source frame."""
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def bounds(self) -> Aabb:
        if not len(self.cloud):
            return Aabb(min=(0.0, 0.0, 0.0), max=(0.0, 0.0, 0.0))
        return Aabb.from_points(self.cloud.positions)


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics; orthographic cameras read fx, fy as pixels per meter."""

    fx: float = Field(..., gt=0, description="Horizontal focal length (px)")
    fy: float = Field(..., gt=0, description="Vertical focal length (px)")
    cx: float = Field(..., ge=0, description="Principal point column (px)")
    cy: float = Field(..., ge=0, description="Principal point row (px)")
    width: int = Field(..., gt=0, description="Image width (px)")
    height: int = Field(..., gt=0, description="Image height (px)")

    @model_validator(mode="after")
    def _principal_point(self) -> "CameraIntrinsics":
        if self.cx >= self.width or self.cy >= self.height:
            raise ValueError("principal point must lie inside the image")
        return self

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "CameraIntrinsics":
        """Square-pixel intrinsics from a vertical field of view, centered on the middle pixel."""
        focal = (height / 2.0) / np.tan(np.radians(fov_deg) / 2.0)
        return cls(
            fx=focal,
            fy=focal,
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            width=width,
            height=height,
        )


# Rendering


class Projection(str, Enum):
    PERSPECTIVE = "perspective"
    ORTHOGRAPHIC = "orthographic"


class Camera(BaseModel):
    """Camera with a world-to-camera pose; camera axes are right, down, forward."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str = ""
    intr: CameraIntrinsics
    rotation: np.ndarray
    translation: np.ndarray
    projection: Projection = Projection.PERSPECTIVE

    @field_validator("rotation", mode="before")
    @classmethod
    def _rotation(cls, value: Any) -> np.ndarray:
        rotation = _matrix(value, "rotation")
        check_rotation(rotation)
        return rotation

    @field_validator("translation", mode="before")
    @classmethod
    def _translation(cls, value: Any) -> np.ndarray:
        return _vector(value, "translation")

    @property
    def position(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2].copy()

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Project world points to pixel coordinates.

        Args:
            points: (N, 3) world points

        Returns:
            (uv, depth): (N, 2) pixel coordinates and (N,) camera-frame depth.
            Perspective coordinates of points at depth <= 0 are not meaningful.
        """
        cam = self.world_to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        depth = cam[:, 2]
        if self.projection == Projection.PERSPECTIVE:
            with np.errstate(divide="ignore", invalid="ignore"):
                u = self.intr.fx * cam[:, 0] / depth + self.intr.cx
                v = self.intr.fy * cam[:, 1] / depth + self.intr.cy
        else:
            u = self.intr.fx * cam[:, 0] + self.intr.cx
            v = self.intr.fy * cam[:, 1] + self.intr.cy
        return np.stack([u, v], axis=1), depth


class PrimitiveKind(str, Enum):
    AXIS = "axis"
    TICK = "tick"
    BOX = "box"
    SKELETON = "skeleton"
    TICK_LABEL = "tick_label"
    AXIS_NAME = "axis_name"
    MARK_LETTER = "mark_letter"


class LineSegment(BaseModel):
    start: Vec3
    end: Vec3
    color: RGB
    kind: PrimitiveKind
    width: int = Field(1, ge=1)


class TextLabel(BaseModel):
    """Screen-space text anchored at a 3D point."""

    anchor: Vec3
    text: str = Field(..., min_length=1)
    color: RGB = (0, 0, 0)
    kind: PrimitiveKind
    disc_color: Optional[RGB] = Field(
        None, description="When set, text is centered on a filled disc of this color"
    )


class PointRecolor(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    indices: np.ndarray
    color: RGB

    @field_validator("indices", mode="before")
    @classmethod
    def _indices(cls, value: Any) -> np.ndarray:
        return np.asarray(value, dtype=np.int64).reshape(-1)


class Renderables(BaseModel):
    """Line, text and recolor primitives drawn on top of a scene."""

    lines: List[LineSegment] = Field(default_factory=list)
    labels: List[TextLabel] = Field(default_factory=list)
    recolors: List[PointRecolor] = Field(default_factory=list)

    @classmethod
    def merge(cls, sets: Iterable["Renderables"]) -> "Renderables":
        merged = cls()
        for item in sets:
            merged.lines.extend(item.lines)
            merged.labels.extend(item.labels)
            merged.recolors.extend(item.recolors)
        return merged


class RenderedView(BaseModel):
    """A rasterized view with its depth buffer and pixel-to-point map."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray = Field(..., description="(H, W, 3) uint8 RGB")
    depth: np.ndarray = Field(..., description="(H, W) float64 meters, inf where empty")
    point_index: np.ndarray = Field(..., description="(H, W) int64 source index, -1 where empty")
    camera: Camera

    @model_validator(mode="after")
    def _buffers(self) -> "RenderedView":
        shape = (self.camera.intr.height, self.camera.intr.width)
        if self.image.shape != shape + (3,) or self.image.dtype != np.uint8:
            raise ValueError(f"image must be uint8 {shape + (3,)}, got {self.image.shape}")
        if self.depth.shape != shape or self.point_index.shape != shape:
            raise ValueError("depth and point_index must match the image size")
        if not np.array_equal(np.isfinite(self.depth), self.point_index >= 0):
            raise ValueError("depth must be finite exactly where a point is present")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.camera.intr.height, self.camera.intr.width)

    def metric_depth(self) -> np.ndarray:
        """Depth in meters with 0 for empty pixels."""
        return np.where(np.isfinite(self.depth), self.depth, 0.0)


# Marks


class MarkVariant(str, Enum):
    LETTER_MARK = "letter_mark"
    MARK_PLUS_CONTOUR = "mark_plus_contour"
    CONTOUR_ONLY = "contour_only"
    MASK_FILL = "mask_fill"
    BBOX2D = "bbox2d"
    POINT2D = "point2d"
    POLYGON2D = "polygon2d"
    AABB3D_RED = "aabb3d_red"
    AABB3D_COLORED = "aabb3d_colored"
    OBB3D = "obb3d"
    EDGE_POINTS_3D = "edge_points_3d"
    MARK_PLUS_EDGE_POINTS = "mark_plus_edge_points"
    LETTER_3D = "letter_3d"


class MarkStyle(BaseModel):
    variant: MarkVariant
    palette: List[RGB] = Field(default_factory=default_palette)
    dilation_px: int = Field(4, ge=0, description="Contour ring thickness in pixels")

    @model_validator(mode="after")
    def _palette(self) -> "MarkStyle":
        if not self.palette and self.variant != MarkVariant.AABB3D_RED:
            raise ValueError(f"{self.variant.value} needs a non-empty palette")
        return self


class MarkEntry(BaseModel):
    instance_id: int = Field(..., ge=0)
    letter: str = Field(..., pattern=r"^[A-Z]$")
    style: MarkStyle
    color: RGB


class MarkPlan(BaseModel):
    entries: List[MarkEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique(self) -> "MarkPlan":
        letters = [e.letter for e in self.entries]
        instances = [e.instance_id for e in self.entries]
        if len(set(letters)) != len(letters):
            raise ValueError("letters must be unique within a plan")
        if len(set(instances)) != len(instances):
            raise ValueError("each instance may appear at most once")
        return self

    def entry_for(self, instance: int) -> Optional[MarkEntry]:
        for entry in self.entries:
            if entry.instance_id == instance:
                return entry
        return None

    @property
    def style_name(self) -> Optional[str]:
        return self.entries[0].style.variant.value if self.entries else None


class InstanceMask(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    instance_id: int
    bitmap: np.ndarray = Field(..., description="(H, W) boolean membership")

    @field_validator("bitmap", mode="before")
    @classmethod
    def _bitmap(cls, value: Any) -> np.ndarray:
        array = np.asarray(value).astype(bool)
        if array.ndim != 2:
            raise ValueError(f"bitmap must be 2-D, got {array.shape}")
        return array

    @property
    def empty(self) -> bool:
        return not bool(self.bitmap.any())


# Prompts


class TaskKind(str, Enum):
    LOCALIZE = "localize"
    ROUTE_PLAN = "route_plan"
    GRASP = "grasp"
    RELEASE = "release"
    KEYPOINTS = "keypoints"
    GROUND_BOX = "ground_box"


class TaskTemplate(BaseModel):
    """Task wording with named {slot} substitutions and an answer contract."""

    kind: TaskKind
    body: str = Field(..., min_length=1)
    slots: Dict[str, str] = Field(default_factory=dict)
    answer_format_instruction: str = ""

    def referenced_slots(self) -> List[str]:
        names = []
        for text in (self.body, self.answer_format_instruction):
            for _, field_name, _, _ in string.Formatter().parse(text):
                if field_name is not None and field_name not in names:
                    names.append(field_name)
        return names

    def render(self) -> str:
        """
        Substitute slots into the body and append the answer instruction.

        Raises:
            UnfilledSlot: If the body references a slot that is not provided
        """
        missing = [name for name in self.referenced_slots() if name not in self.slots]
        if missing:
            raise UnfilledSlot(f"{self.kind.value} template needs slots: {missing}")
        text = self.body.format_map(self.slots)
        if self.answer_format_instruction:
            text = f"{text}\n{self.answer_format_instruction.format_map(self.slots)}"
        return text


def points_from_text(text: str) -> np.ndarray:
    """Parse "x y z" lines (comments start with '#') into an (N, 3) array."""
    rows = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ValueError(f"line {number}: expected 3 coordinates, got {len(fields)}")
        rows.append([float(f) for f in fields])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


class PromptBundle(BaseModel):
    """Everything sent for one scene: images, optional points text and task text."""

    scene_id: str = Field(..., min_length=1)
    images: List[bytes] = Field(..., min_length=1, description="PNG payloads in rig order")
    points_text: Optional[str] = None
    task_text: str = Field(..., min_length=1)
    cot: bool = False
    template_kind: TaskKind = TaskKind.LOCALIZE
    mark_style: Optional[str] = None
    n_views: int = Field(1, ge=1, description="Number of color views (depth rasters excluded)")

    @field_validator("images")
    @classmethod
    def _png(cls, value: List[bytes]) -> List[bytes]:
        for i, payload in enumerate(value):
            if not payload.startswith(PNG_SIGNATURE):
                raise ValueError(f"image {i} is not a PNG payload")
        return value

    @field_validator("points_text")
    @classmethod
    def _points(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            points_from_text(value)
        return value


# Client


class TextPart(BaseModel):
    type: Literal["text"] = "text"
    text: str


class ImageUrl(BaseModel):
    url: str
    detail: Optional[str] = None


class ImagePart(BaseModel):
    type: Literal["image_url"] = "image_url"
    image_url: ImageUrl

    @field_validator("image_url")
    @classmethod
    def _png_data_url(cls, value: ImageUrl) -> ImageUrl:
        prefix = "data:image/png;base64,"
        if not value.url.startswith(prefix):
            raise ValueError("image parts must be base64 PNG data URLs")
        payload = base64.b64decode(value.url[len(prefix) :], validate=True)
        if not payload.startswith(PNG_SIGNATURE):
            raise ValueError("image part does not decode to a PNG")
        return value

    @classmethod
    def from_png(cls, payload: bytes, detail: Optional[str] = None) -> "ImagePart":
        encoded = base64.b64encode(payload).decode("ascii")
        return cls(image_url=ImageUrl(url=f"data:image/png;base64,{encoded}", detail=detail))


ContentPart = Annotated[Union[TextPart, ImagePart], Field(discriminator="type")]


class ChatMessage(BaseModel):
    role: Literal["system", "user", "assistant"]
    content: List[ContentPart]


class ChatRequest(BaseModel):
    """A single-turn chat-completions request."""

    model: str = Field(..., min_length=1)
    messages: List[ChatMessage]
    temperature: float = Field(0.0, ge=0)
    max_tokens: int = Field(1024, gt=0)

    @model_validator(mode="after")
    def _single_turn(self) -> "ChatRequest":
        users = [m for m in self.messages if m.role == "user"]
        if len(users) != 1:
            raise ValueError(f"a request carries exactly one user message, got {len(users)}")
        return self

    def to_payload(self) -> Dict[str, Any]:
        return self.model_dump(exclude_none=True)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON payload."""
        canonical = json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ChatResponse(BaseModel):
    text: str
    model: str
    usage: Dict[str, int] = Field(default_factory=dict)
    latency: float = Field(0.0, ge=0, description="Seconds spent waiting for the answer")
    attempts: int = Field(1, ge=1)


class OracleConfig(BaseModel):
    """Behavior of the offline ground-truth oracle."""

    noise_sigma: float = Field(0.0, ge=0, description="Isotropic Gaussian noise (m)")
    seed: int = 0
    failure_rate: float = Field(0.0, ge=0, le=1, description="Probability of an unparseable answer")
    view_penalty: float = Field(
        0.0, ge=0, description="Noise grows by (1 + view_penalty / n_views)"
    )
    decimals: int = Field(2, ge=0, le=9)
    clearance: float = Field(0.25, ge=0, description="Planner safety margin (m)")
    grid_resolution: float = Field(0.1, gt=0, description="Planner occupancy cell size (m)")


# Ground truth and evaluation


class TargetTruth(BaseModel):
    letter: str
    instance_id: int
    label: str
    center: Vec3
    box: Aabb


class GroundTruth(BaseModel):
    """What an answer for one scene is scored against."""

    scene_id: str
    kind: TaskKind
    normalizer: float = Field(..., gt=0, description="Per-scene NRMSE normalizer (m)")
    targets: List[TargetTruth] = Field(default_factory=list)
    start_region: Optional[Aabb] = None
    goal_region: Optional[Aabb] = None
    obstacles: List[Aabb] = Field(default_factory=list)
    keypoints: Dict[str, Vec3] = Field(default_factory=dict)
    skeleton_edges: List[Tuple[str, str]] = Field(default_factory=list)
    bounds: Optional[Aabb] = None


class PredictionKind(str, Enum):
    POINT3D = "point3d"
    BOX3D = "box3d"
    PATH3D = "path3d"
    KEYPOINTS = "keypoints"


_PREDICTION_FIELDS = {
    PredictionKind.POINT3D: "point",
    PredictionKind.BOX3D: "box",
    PredictionKind.PATH3D: "path",
    PredictionKind.KEYPOINTS: "keypoints",
}


class Prediction(BaseModel):
    kind: PredictionKind
    point: Optional[Vec3] = None
    box: Optional[Aabb] = None
    path: Optional[List[Vec3]] = None
    keypoints: Optional[Dict[str, Vec3]] = None
    raw_text: str = ""
    parse_ok: bool = False

    @model_validator(mode="after")
    def _matching_field(self) -> "Prediction":
        expected = _PREDICTION_FIELDS[self.kind]
        for name in _PREDICTION_FIELDS.values():
            if name != expected and getattr(self, name) is not None:
                raise ValueError(f"{self.kind.value} prediction must not carry '{name}'")
        if self.parse_ok != (getattr(self, expected) is not None):
            raise ValueError(f"parse_ok must reflect whether '{expected}' is present")
        return self


class EvalRecord(BaseModel):
    """One scored object (or keypoint) of one scene."""

    scene_id: str
    instance_id: int = -1
    key: str = Field("", description="Mark letter or keypoint name")
    task: TaskKind
    prediction: Prediction
    truth_center: Vec3
    truth_box: Aabb
    normalizer: float = Field(..., gt=0)
    d_center: Optional[float] = Field(None, ge=0)
    d_bbx: Optional[float] = Field(None, ge=0)
    iou: Optional[float] = Field(None, ge=0, le=1)
    verdict: Optional[bool] = None
    parse_ok: bool

    @model_validator(mode="after")
    def _bbx_below_center(self) -> "EvalRecord":
        if self.d_center is not None and self.d_bbx is not None:
            if self.d_bbx > self.d_center + 1e-12:
                raise ValueError("to-bbx distance cannot exceed to-center distance")
        return self


Rate = Annotated[float, Field(ge=0, le=1)]


class RunSummary(BaseModel):
    """Aggregate metrics of an evaluation run."""

    nrmse_center: Optional[float] = Field(None, ge=0)
    nrmse_bbx: Optional[float] = Field(None, ge=0)
    success_rate: Optional[Rate] = None
    acc_025: Optional[Rate] = None
    acc_05: Optional[Rate] = None
    n_scenes: int = Field(..., ge=0)
    n_objects: int = Field(..., ge=0)
    parse_failure_rate: Rate
    failed_scenes: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _bbx_below_center(self) -> "RunSummary":
        if self.nrmse_center is not None and self.nrmse_bbx is not None:
            if self.nrmse_bbx > self.nrmse_center + 1e-12:
                raise ValueError("NRMSE to bbx cannot exceed NRMSE to center")
        return self
