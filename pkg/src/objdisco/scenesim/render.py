"""Depth rendering of a world from one camera.

Occlusion is resolved on a coarse z-buffer: the image is cut into square pixel
bins and each bin is owned by the object of its nearest front-facing sample.
A sample is visible when it faces the camera, projects inside the image and
belongs to the object owning its bin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from objdisco.geometry import project_points
from objdisco.models.domain import BoundingBox, Frame, GroundTruthBox, PointCloud
from objdisco.scenesim.world import CameraSite, World

logger = logging.getLogger(__name__)

_NEAR = 1e-6


@dataclass
class RenderedView:
    """A rendered frame plus the simulator-side bookkeeping proposals need."""

    frame: Frame
    pixels: np.ndarray
    """``(N, 2)`` noise-free projections of the cloud points."""
    owners: np.ndarray
    """``(N,)`` object index of every cloud point."""
    tight_boxes: Dict[int, BoundingBox]
    """Visible extent of every object with at least two distinct visible pixels."""
    view_buckets: Dict[int, int]
    """Viewing-azimuth bucket of every visible object, keyed by object index."""


def view_bucket(world: World, obj_index: int, camera_center: np.ndarray) -> int:
    """Bucket of the camera's azimuth around the object, relative to its yaw."""
    obj = world.objects[obj_index]
    delta = camera_center[:2] - obj.center[:2]
    azimuth = (np.arctan2(delta[1], delta[0]) - obj.yaw) % (2.0 * np.pi)
    buckets = world.config.view_buckets
    return int(azimuth / (2.0 * np.pi) * buckets) % buckets


def view_offset(world: World, bucket: int) -> np.ndarray:
    """The descriptor offset of a viewing bucket."""
    theta = 2.0 * np.pi * bucket / world.config.view_buckets
    u1, u2 = world.view_basis
    return world.config.view_amplitude * (np.cos(theta) * u1 + np.sin(theta) * u2)


def _bin_owner_mask(
    pixels: np.ndarray, depth: np.ndarray, owner: np.ndarray, width: int, bin_size: int
) -> np.ndarray:
    cols = (width + bin_size - 1) // bin_size
    bins = (pixels[:, 1] // bin_size).astype(np.int64) * cols + (pixels[:, 0] // bin_size).astype(np.int64)
    order = np.lexsort((depth, bins))
    first_bins, first = np.unique(bins[order], return_index=True)
    bin_owner = owner[order[first]]
    return bin_owner[np.searchsorted(first_bins, bins)] == owner


def render_frame(
    world: World,
    camera: CameraSite,
    depth_noise: Optional[float] = None,
    seed: int = 0,
) -> RenderedView:
    """Render the visible points and ground-truth boxes seen by ``camera``.

    Args:
        world: The environment.
        camera: Grid camera to render from.
        depth_noise: Gaussian noise sigma along each viewing ray, meters.
            Defaults to the scene config value.
        seed: Noise seed of this frame.

    Returns:
        RenderedView: The frame (without proposals) and visibility bookkeeping.
    """
    config = world.config
    sigma = config.depth_noise if depth_noise is None else depth_noise
    K = world.intrinsics
    pose = camera.pose

    if world.objects:
        samples = np.concatenate([o.samples for o in world.objects])
        normals = np.concatenate([o.normals for o in world.objects])
        owner = np.concatenate(
            [np.full(o.samples.shape[0], i, dtype=np.int64) for i, o in enumerate(world.objects)]
        )
    else:
        samples, normals, owner = np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)

    cam = pose.to_camera(samples)
    facing = np.einsum("ij,ij->i", normals, pose.center - samples) > 0
    ahead = cam[:, 2] > _NEAR
    pixels = np.full((cam.shape[0], 2), -1.0)
    pixels[ahead] = project_points(K, cam[ahead])
    inside = (
        ahead
        & (pixels[:, 0] >= 0) & (pixels[:, 0] < K.width)
        & (pixels[:, 1] >= 0) & (pixels[:, 1] < K.height)
    )
    candidates = np.flatnonzero(facing & inside)

    visible = np.zeros(cam.shape[0], dtype=bool)
    if candidates.size:
        visible[candidates] = _bin_owner_mask(
            pixels[candidates], cam[candidates, 2], owner[candidates], K.width, config.zbuffer_bin
        )
    idx = np.flatnonzero(visible)

    rng = np.random.default_rng(seed)
    points = cam[idx]
    if sigma > 0 and idx.size:
        rays = points / np.linalg.norm(points, axis=1, keepdims=True)
        points = points + rays * rng.normal(0.0, sigma, size=(idx.size, 1))

    front_counts = np.bincount(owner[candidates], minlength=len(world.objects))
    visible_counts = np.bincount(owner[idx], minlength=len(world.objects))
    min_w, min_h = config.min_box_size

    tight_boxes: Dict[int, BoundingBox] = {}
    gt_boxes = []
    buckets: Dict[int, int] = {}
    for i, obj in enumerate(world.objects):
        if visible_counts[i] == 0:
            continue
        buckets[i] = view_bucket(world, i, pose.center)
        uv = pixels[idx[owner[idx] == i]]
        xmin, ymin = uv.min(axis=0)
        xmax, ymax = uv.max(axis=0)
        if xmin >= xmax or ymin >= ymax:
            continue
        box = BoundingBox(float(xmin), float(ymin), float(xmax), float(ymax))
        tight_boxes[i] = box
        if visible_counts[i] < config.visibility_fraction * front_counts[i]:
            continue
        if box.width >= min_w and box.height >= min_h:
            gt_boxes.append(GroundTruthBox(box, obj.instance_id))

    frame = Frame(
        id=camera.frame_id,
        location_id=camera.location_id,
        pose=pose,
        intrinsics=K,
        cloud=PointCloud(points),
        gt_boxes=gt_boxes,
    )
    return RenderedView(
        frame=frame,
        pixels=pixels[idx],
        owners=owner[idx],
        tight_boxes=tight_boxes,
        view_buckets=buckets,
    )
