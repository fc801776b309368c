"""Synthetic environment: point-sampled cuboid objects and a grid of posed cameras.

World frame: x and y horizontal, z up. Cameras sit on a regular grid at a fixed
height and look horizontally in ``orientations`` evenly spaced headings. An
object's identity (category, size, latent code, surface samples) depends on the
seed alone; its placement depends on the seed and the layout index, so two
layouts are two scans of the same objects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import FrozenSet, List, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from objdisco.config import SceneConfig
from objdisco.errors import OvercrowdedWorldError
from objdisco.models.domain import CameraPose, Instance, Intrinsics
from objdisco.utils import derive_seed

logger = logging.getLogger(__name__)

# Outward normals of the six cuboid faces, in object coordinates.
_FACE_NORMALS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64
)


@dataclass
class WorldObject:
    """One object instance: identity, placement and surface samples."""

    instance_id: int
    category: str
    size: np.ndarray
    latent: np.ndarray
    center: np.ndarray
    yaw: float
    samples: np.ndarray
    """``(S, 3)`` surface samples in world coordinates."""
    normals: np.ndarray
    """``(S, 3)`` outward unit normals of the samples, world coordinates."""

    @property
    def footprint_radius(self) -> float:
        """Radius of the circle around the footprint, meters."""
        return 0.5 * float(np.hypot(self.size[0], self.size[1]))


@dataclass(frozen=True)
class CameraSite:
    """A posed camera of the grid."""

    frame_id: str
    location_id: str
    pose: CameraPose


@dataclass
class World:
    """A generated environment."""

    config: SceneConfig
    seed: int
    layout: int
    intrinsics: Intrinsics
    objects: List[WorldObject]
    cameras: List[CameraSite]
    background: np.ndarray
    view_basis: np.ndarray
    """``(2, d)`` orthonormal directions spanned by the view component."""
    instances: List[Instance] = field(default_factory=list)


def build_intrinsics(config: SceneConfig) -> Intrinsics:
    """Pinhole intrinsics of the scene camera."""
    cx, cy = config.principal_point
    return Intrinsics(config.fx, config.fy, cx, cy, config.image_width, config.image_height)


def location_id(row: int, col: int) -> str:
    """Stable id of a grid location, e.g. ``r00c03``."""
    return f"r{row:02d}c{col:02d}"


def camera_rotation(heading: float) -> np.ndarray:
    """Camera-to-world rotation of a horizontal camera facing ``heading`` radians.

    The camera z axis points along the heading, y points down and x to the right.
    """
    c, s = np.cos(heading), np.sin(heading)
    return np.column_stack([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])


def camera_grid(config: SceneConfig) -> List[CameraSite]:
    """Cameras for every grid location and heading, centered in the room."""
    mid_x, mid_y = config.room_size[0] / 2.0, config.room_size[1] / 2.0
    sites: List[CameraSite] = []
    for row in range(config.grid_rows):
        for col in range(config.grid_cols):
            loc = location_id(row, col)
            center = np.array(
                [
                    mid_x + (col - (config.grid_cols - 1) / 2.0) * config.grid_spacing,
                    mid_y + (row - (config.grid_rows - 1) / 2.0) * config.grid_spacing,
                    config.camera_height,
                ]
            )
            for k in range(config.orientations):
                heading = 2.0 * np.pi * k / config.orientations
                pose = CameraPose(camera_rotation(heading), center)
                sites.append(CameraSite(f"{loc}_o{k}", loc, pose))
    return sites


def grid_adjacency(config: SceneConfig) -> FrozenSet[Tuple[str, str]]:
    """8-connected neighboring location pairs of the camera grid."""
    pairs = set()
    for row in range(config.grid_rows):
        for col in range(config.grid_cols):
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    r, c = row + dr, col + dc
                    if (dr, dc) == (0, 0) or not (0 <= r < config.grid_rows and 0 <= c < config.grid_cols):
                        continue
                    pairs.add((location_id(row, col), location_id(r, c)))
    return frozenset(pairs)


def _sample_cuboid(size: np.ndarray, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    w, d, h = size
    areas = np.array([d * h, d * h, w * h, w * h, w * d, w * d])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    local = rng.uniform(-0.5, 0.5, size=(count, 3)) * size
    normals = _FACE_NORMALS[faces]
    axis = np.argmax(np.abs(normals), axis=1)
    local[np.arange(count), axis] = normals[np.arange(count), axis] * size[axis] / 2.0
    return local, normals


def generate_world(config: SceneConfig, seed: int, layout: int = 0) -> World:
    """Generate objects and cameras.

    Objects are placed by rejection sampling: footprint circles must be disjoint,
    lie inside the room, and keep ``camera_clearance`` from every camera center.

    Raises:
        OvercrowdedWorldError: If an object finds no valid spot within
            ``max_placement_tries`` draws.
    """
    dim = config.descriptor_dim
    identity = np.random.default_rng(derive_seed(seed, "identity"))
    placement = np.random.default_rng(derive_seed(seed, "layout", layout))
    cameras = camera_grid(config)
    cam_xy = np.stack([c.pose.center[:2] for c in cameras]) if cameras else np.zeros((0, 2))

    background = identity.normal(0.0, 1.0 / np.sqrt(dim), size=dim)
    view_basis = np.linalg.qr(identity.normal(size=(dim, 2)))[0].T

    objects: List[WorldObject] = []
    room = np.asarray(config.room_size, dtype=np.float64)
    for i in range(config.object_count):
        category = config.categories[i % len(config.categories)]
        size = identity.uniform(category.size_min, category.size_max)
        latent = identity.normal(0.0, 1.0 / np.sqrt(dim), size=dim)
        local, local_normals = _sample_cuboid(size, config.samples_per_object, identity)
        radius = 0.5 * float(np.hypot(size[0], size[1]))

        if not np.all(room > 2 * radius):
            raise OvercrowdedWorldError(f"object {i} does not fit in the room")
        for _ in range(config.max_placement_tries):
            xy = placement.uniform(radius, room - radius)
            yaw = float(placement.uniform(0.0, 2.0 * np.pi))
            base = float(placement.uniform(*config.object_base_height))
            if cam_xy.shape[0] and np.min(np.linalg.norm(cam_xy - xy, axis=1)) - radius < config.camera_clearance:
                continue
            if any(np.linalg.norm(o.center[:2] - xy) <= o.footprint_radius + radius for o in objects):
                continue
            break
        else:
            raise OvercrowdedWorldError(
                f"could not place object {i} after {config.max_placement_tries} tries"
            )

        center = np.array([xy[0], xy[1], base + size[2] / 2.0])
        rot = Rotation.from_euler("z", yaw).as_matrix()
        objects.append(
            WorldObject(
                instance_id=i,
                category=category.name,
                size=size,
                latent=latent,
                center=center,
                yaw=yaw,
                samples=local @ rot.T + center,
                normals=local_normals @ rot.T,
            )
        )

    logger.debug("world seed=%d layout=%d objects=%d cameras=%d", seed, layout, len(objects), len(cameras))
    return World(
        config=config,
        seed=seed,
        layout=layout,
        intrinsics=build_intrinsics(config),
        objects=objects,
        cameras=cameras,
        background=background,
        view_basis=view_basis,
        instances=[Instance(o.instance_id, o.category) for o in objects],
    )
