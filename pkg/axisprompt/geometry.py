"""Point-cloud normalization, bounding volumes, normals, edge points and RGB-D unprojection."""

import logging
from typing import Literal, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from axisprompt.exceptions import (
    DegenerateGeometry,
    DimensionMismatch,
    EmptySelection,
    MissingNormals,
    TooFewPoints,
)
from axisprompt.models import Aabb, CameraIntrinsics, Obb, PointCloud, SceneFrame

logger = logging.getLogger(__name__)

DEFAULT_EDGE_K = 16
DEFAULT_EDGE_ANGLE = 35.0
RANK_TOLERANCE = 1e-10
_DIAGONAL = np.ones(3) / np.sqrt(3.0)


def _selection(cloud: PointCloud, instance: Optional[int]) -> np.ndarray:
    if instance is None:
        points = cloud.positions
    else:
        points = cloud.positions[cloud.instance_indices(instance)]
    if len(points) == 0:
        target = "cloud" if instance is None else f"instance {instance}"
        raise EmptySelection(f"{target} has no points")
    return points


def compute_aabb(cloud: PointCloud, instance: Optional[int] = None) -> Aabb:
    """
    Axis-aligned bounding box of a cloud or one of its instances.

    Args:
        cloud: Source cloud
        instance: Optional instance id restricting the selection

    Returns:
        Aabb spanning the selected points

    Raises:
        EmptySelection: If nothing is selected
    """
    return Aabb.from_points(_selection(cloud, instance))


def point_aabb_distance(points: np.ndarray, box: Aabb) -> np.ndarray:
    """Euclidean distance from each point to the box; 0 inside."""
    points = np.asarray(points, dtype=np.float64)
    residual = np.maximum(np.maximum(box.lo - points, 0.0), points - box.hi)
    return np.linalg.norm(residual, axis=-1)


def principal_axes(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Covariance eigen-decomposition in descending eigenvalue order.

    The first two axes are flipped to have a non-negative dot product with
    (1, 1, 1) and the third is their cross product, so the frame is
    right-handed and deterministic.

    Returns:
        (eigenvalues, axes) with axes as rows

    Raises:
        DegenerateGeometry: If the covariance has rank < 2
    """
    if len(points) < 3:
        raise DegenerateGeometry(f"need at least 3 points, got {len(points)}")
    centered = points - points.mean(axis=0)
    covariance = centered.T @ centered / len(points)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    axes = eigenvectors[:, order].T
    if eigenvalues[0] <= 0 or eigenvalues[1] <= RANK_TOLERANCE * eigenvalues[0]:
        raise DegenerateGeometry("points are collinear (covariance rank < 2)")
    for k in range(2):
        if axes[k] @ _DIAGONAL < 0:
            axes[k] = -axes[k]
    axes[2] = np.cross(axes[0], axes[1])
    return eigenvalues, axes


def compute_obb(cloud: PointCloud, instance: int) -> Obb:
    """
    PCA-oriented bounding box of one instance.

    Raises:
        EmptySelection: If the instance has no points
        DegenerateGeometry: If the instance points are collinear
    """
    points = _selection(cloud, instance)
    _, axes = principal_axes(points)
    local = points @ axes.T
    lo = local.min(axis=0)
    hi = local.max(axis=0)
    center = ((lo + hi) / 2.0) @ axes
    return Obb(
        center=tuple(float(v) for v in center),
        axes=tuple(tuple(float(v) for v in row) for row in axes),
        half_extents=tuple(float(v) for v in (hi - lo) / 2.0),
    )


def _yaw_rotation(points: np.ndarray, up_axis: int) -> np.ndarray:
    """Rotation about the up axis aligning the horizontal principal direction with x."""
    i, j = [(1, 2), (2, 0), (0, 1)][up_axis]
    planar = points[:, [i, j]]
    centered = planar - planar.mean(axis=0)
    eigenvalues, eigenvectors = np.linalg.eigh(centered.T @ centered / len(points))
    if eigenvalues[1] <= 0:
        raise DegenerateGeometry("points have no horizontal spread")
    major = eigenvectors[:, 1]
    if major.sum() < 0:
        major = -major
    minor = np.array([-major[1], major[0]])
    basis = np.eye(3)
    rotation = np.zeros((3, 3))
    rotation[0] = major[0] * basis[i] + major[1] * basis[j]
    rotation[1] = minor[0] * basis[i] + minor[1] * basis[j]
    rotation[2] = basis[up_axis]
    return rotation


def normalize_scene(cloud: PointCloud, align: Literal["pca", "none"] = "pca") -> SceneFrame:
    """
    Rotate a scene onto its principal axes and shift its AABB minimum to the origin.

    With align="pca", clouds that declare an up axis are only rotated about
    it (yaw); others get a full 3D PCA frame whose third axis is flipped to
    keep world-up pointing up.

    Args:
        cloud: Source cloud
        align: "pca" or "none"

    Returns:
        SceneFrame with the normalized cloud and the applied transform

    Raises:
        DegenerateGeometry: If PCA alignment is requested on degenerate input
    """
    positions = cloud.positions
    if align == "pca":
        if len(positions) < 3:
            raise DegenerateGeometry(f"PCA alignment needs at least 3 points, got {len(positions)}")
        if cloud.up_axis is not None:
            rotation = _yaw_rotation(positions, cloud.up_axis)
        else:
            _, rotation = principal_axes(positions)
            if rotation[2, 2] < 0:
                rotation[2] = -rotation[2]
                rotation[1] = -rotation[1]
    elif align == "none":
        rotation = np.eye(3)
    else:
        raise ValueError(f"unknown alignment '{align}'")

    if len(positions):
        rotated = positions @ rotation.T
        translation = -rotated.min(axis=0)
        extent = positions.max(axis=0) - positions.min(axis=0)
    else:
        rotated = positions
        translation = np.zeros(3)
        extent = np.zeros(3)

    normals = None if cloud.normals is None else cloud.normals @ rotation.T
    up_axis = 2 if align == "pca" else cloud.up_axis
    normalized = cloud.replace(positions=rotated + translation, normals=normals, up_axis=up_axis)
    logger.debug(f"Normalized {len(cloud)} points (align={align}), shift {translation}")
    return SceneFrame(
        cloud=normalized, rotation=rotation, translation=translation, source_extent=extent
    )


def estimate_normals(cloud: PointCloud, k: int = 8) -> PointCloud:
    """
    Per-point normals from k-nearest-neighbor covariance.

    Each normal is the least-eigenvalue eigenvector of its neighborhood,
    oriented so that it points away from the cloud centroid.

    Raises:
        TooFewPoints: If k < 3 or the cloud has fewer than k points
    """
    count = len(cloud)
    if k < 3 or count < k:
        raise TooFewPoints(f"need k >= 3 and at least k points (k={k}, points={count})")
    positions = cloud.positions
    _, neighbors = cKDTree(positions).query(positions, k=k)
    patches = positions[neighbors]
    centered = patches - patches.mean(axis=1, keepdims=True)
    covariances = np.einsum("nki,nkj->nij", centered, centered) / k
    _, eigenvectors = np.linalg.eigh(covariances)
    normals = eigenvectors[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    outward = positions - positions.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    normals[flip] = -normals[flip]
    return cloud.replace(normals=normals)


def extract_edge_points(
    cloud: PointCloud, k: int = DEFAULT_EDGE_K, angle_threshold: float = DEFAULT_EDGE_ANGLE
) -> np.ndarray:
    """
    Indices of points on geometric creases.

    A point qualifies when the largest angle between any two normals of its
    k-neighborhood reaches angle_threshold degrees. Normal sign is ignored.

    Raises:
        MissingNormals: If the cloud carries no normals
    """
    if cloud.normals is None:
        raise MissingNormals("edge extraction needs normals; run estimate_normals first")
    count = len(cloud)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    k = min(k, count)
    _, neighbors = cKDTree(cloud.positions).query(cloud.positions, k=k)
    neighbors = np.asarray(neighbors).reshape(count, k)
    patch = cloud.normals[neighbors]
    cosines = np.abs(np.einsum("nai,nbi->nab", patch, patch))
    min_cosine = np.clip(cosines.min(axis=(1, 2)), 0.0, 1.0)
    max_angle = np.degrees(np.arccos(min_cosine))
    return np.flatnonzero(max_angle >= angle_threshold)


def unproject_rgbd(
    color: Optional[np.ndarray],
    depth: np.ndarray,
    intr: CameraIntrinsics,
    stride: int = 1,
) -> PointCloud:
    """
    Back-project a depth image (meters, 0 = invalid) into camera-frame points.

    Args:
        color: Optional (H, W, 3) uint8 image aligned with depth
        depth: (H, W) depth in meters
        intr: Camera intrinsics
        stride: Pixel step in both directions

    Returns:
        PointCloud in row-major pixel order

    Raises:
        DimensionMismatch: If image sizes disagree with the intrinsics
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    expected = (intr.height, intr.width)
    if depth.shape != expected:
        raise DimensionMismatch(f"depth is {depth.shape}, intrinsics expect {expected}")
    if color is not None and color.shape[:2] != expected:
        raise DimensionMismatch(f"color is {color.shape[:2]}, intrinsics expect {expected}")

    v, u = np.mgrid[0 : intr.height : stride, 0 : intr.width : stride]
    d = depth[v, u].astype(np.float64)
    valid = np.isfinite(d) & (d > 0)
    u, v, d = u[valid], v[valid], d[valid]
    points = np.stack(
        [(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d], axis=1
    ).reshape(-1, 3)
    colors = None if color is None else color[v, u].reshape(-1, 3)
    return PointCloud(positions=points, colors=colors)


def voxel_keys(positions: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(positions / voxel).astype(np.int64)


def occupied_voxel_count(positions: np.ndarray, voxel: float) -> int:
    if len(positions) == 0:
        return 0
    return int(len(np.unique(voxel_keys(positions, voxel), axis=0)))


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    Keep one point per occupied voxel: the one nearest the voxel centroid.

    Representatives keep their original attributes and relative order.
    """
    if voxel <= 0:
        raise ValueError(f"voxel size must be positive, got {voxel}")
    count = len(cloud)
    if count == 0:
        return cloud
    positions = cloud.positions
    _, inverse, counts = np.unique(
        voxel_keys(positions, voxel), axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inverse, positions)
    centroids = sums / counts[:, None]
    distance = np.linalg.norm(positions - centroids[inverse], axis=1)
    order = np.lexsort((np.arange(count), distance, inverse))
    grouped = inverse[order]
    first = np.ones(count, dtype=bool)
    first[1:] = grouped[1:] != grouped[:-1]
    keep = np.sort(order[first])
    return cloud.subset(keep)
