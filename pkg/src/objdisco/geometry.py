"""Camera model, point containment, cross-frame box reprojection and box overlap.

Conventions: camera frames are right-handed with x right, y down and z forward;
pixel coordinates have their origin at the top-left corner. Poses map camera
coordinates to world coordinates, so a point seen in frame ``k`` lands in frame
``l`` through ``T_l^-1(T_k(x))``.

Every function here is pure and safe to call from concurrent workers.
"""

from __future__ import annotations

from typing import List, Optional

import numpy as np

from objdisco.errors import BehindCameraError
from objdisco.models.domain import BoundingBox, Frame, Intrinsics, PointCloud

DEFAULT_MIN_POINTS = 10


def project_point(K: Intrinsics, p) -> np.ndarray:
    """Project one camera-frame point to pixel coordinates.

    Args:
        K: Camera intrinsics.
        p: A 3-vector in camera coordinates.

    Returns:
        np.ndarray: The pixel ``(u, v)``.

    Raises:
        BehindCameraError: If ``p.z <= 0``.
    """
    x, y, z = (float(c) for c in np.asarray(p, dtype=np.float64).reshape(3))
    if z <= 0:
        raise BehindCameraError(f"point at depth {z} is behind the camera")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def project_points(K: Intrinsics, points: np.ndarray) -> np.ndarray:
    """Project ``(N, 3)`` camera-frame points; callers must pass ``z > 0`` only."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = points[:, 2]
    u = K.fx * points[:, 0] / z + K.cx
    v = K.fy * points[:, 1] / z + K.cy
    return np.stack([u, v], axis=1)


def unproject_point(K: Intrinsics, pixel, depth: float) -> np.ndarray:
    """Back-project a pixel with known depth to a camera-frame point."""
    u, v = (float(c) for c in np.asarray(pixel, dtype=np.float64).reshape(2))
    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])


def _in_box_mask(K: Intrinsics, points: np.ndarray, box: np.ndarray) -> np.ndarray:
    mask = points[:, 2] > 0
    if not np.any(mask):
        return mask
    uv = np.full((points.shape[0], 2), np.nan)
    uv[mask] = project_points(K, points[mask])
    with np.errstate(invalid="ignore"):
        inside = (
            (uv[:, 0] >= box[0])
            & (uv[:, 0] <= box[2])
            & (uv[:, 1] >= box[1])
            & (uv[:, 1] <= box[3])
        )
    return mask & inside


def points_in_box(cloud: PointCloud, K: Intrinsics, box: BoundingBox) -> PointCloud:
    """Return the points in front of the camera whose projections fall inside ``box``.

    The box boundary is inclusive.
    """
    mask = _in_box_mask(K, cloud.points, box.as_array())
    return PointCloud(cloud.points[mask])


def clip_box(extent, K: Intrinsics) -> Optional[BoundingBox]:
    """Clip ``[xmin, ymin, xmax, ymax]`` to the image; ``None`` if nothing remains."""
    xmin = max(float(extent[0]), 0.0)
    ymin = max(float(extent[1]), 0.0)
    xmax = min(float(extent[2]), float(K.width))
    ymax = min(float(extent[3]), float(K.height))
    if xmin >= xmax or ymin >= ymax:
        return None
    return BoundingBox(xmin, ymin, xmax, ymax)


def box_support(
    frame: Frame, box: BoundingBox, min_points: int = DEFAULT_MIN_POINTS
) -> Optional[np.ndarray]:
    """Return the world coordinates of the depth points supporting ``box``.

    ``None`` when fewer than ``min_points`` points project into the box.
    """
    support = points_in_box(frame.cloud, frame.intrinsics, box)
    if len(support) < min_points:
        return None
    return frame.pose.to_world(support.points)


def project_support(
    world_points: np.ndarray, frame: Frame, min_points: int = DEFAULT_MIN_POINTS
) -> Optional[BoundingBox]:
    """Project world points into ``frame`` and return their clipped min/max box.

    Points behind the target camera are dropped; ``None`` is returned when fewer
    than ``min_points`` survive or the clipped box is degenerate.
    """
    cam = frame.pose.to_camera(world_points)
    cam = cam[cam[:, 2] > 0]
    if cam.shape[0] < min_points:
        return None
    uv = project_points(frame.intrinsics, cam)
    extent = (uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())
    return clip_box(extent, frame.intrinsics)


def reproject_box(
    box: BoundingBox,
    frame_k: Frame,
    frame_l: Frame,
    min_points: int = DEFAULT_MIN_POINTS,
) -> Optional[BoundingBox]:
    """Transfer a proposal box from frame ``k`` into frame ``l`` through its depth points.

    Args:
        box: A proposal box in frame ``k``.
        frame_k: Source frame.
        frame_l: Target frame; must share intrinsics with ``frame_k``.
        min_points: Minimum number of supporting points, at least 1.

    Returns:
        Optional[BoundingBox]: The reprojected box, or ``None`` when the support is
        too thin or lands outside the target image.
    """
    if min_points < 1:
        raise ValueError("min_points must be at least 1")
    if frame_k.intrinsics != frame_l.intrinsics:
        raise ValueError("frames must share intrinsics")
    world = box_support(frame_k, box, min_points)
    if world is None:
        return None
    return project_support(world, frame_l, min_points)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise intersection over union of ``(N, 4)`` and ``(M, 4)`` box arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, 0 when disjoint."""
    return float(iou_matrix(a.as_array(), b.as_array())[0, 0])


def nms(boxes, scores, iou_threshold: float = 0.7) -> List[int]:
    """Class-agnostic non-maximum suppression.

    Boxes are visited by descending score (ties keep input order); a box is
    suppressed when its IoU with an already kept box exceeds ``iou_threshold``.

    Returns:
        List[int]: Indices of kept boxes in ascending index order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if boxes.shape[0] == 0:
        return []
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    overlaps = iou_matrix(boxes, boxes)
    keep: List[int] = []
    suppressed = np.zeros(boxes.shape[0], dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= overlaps[i] > iou_threshold
    return sorted(keep)
