"""Deterministic synthetic environment standing in for a robot's RGB-D scans.

The same seed yields the same objects in every scan; the layout index moves them.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Tuple

from objdisco.config import SceneConfig
from objdisco.models.domain import Dataset, Frame
from objdisco.scenesim.proposals import descriptor, generate_proposals, size_filter
from objdisco.scenesim.render import RenderedView, render_frame
from objdisco.scenesim.world import (
    CameraSite,
    World,
    WorldObject,
    camera_grid,
    generate_world,
    grid_adjacency,
)
from objdisco.utils import derive_seed

logger = logging.getLogger(__name__)

SCAN_LAYOUTS: Dict[str, int] = {"train": 0, "test": 1}


def simulate_scan(world: World, scan: str) -> List[Frame]:
    """Render every camera of ``world`` and generate its proposals.

    Per-frame seeds derive from the world seed, the scan name and the frame id.
    """
    frames = []
    for camera in world.cameras:
        frame_seed = derive_seed(world.seed, scan, camera.frame_id)
        view = render_frame(world, camera, seed=derive_seed(frame_seed, "render"))
        view.frame.proposals = generate_proposals(view, world, derive_seed(frame_seed, "proposals"))
        frames.append(view.frame)
    return frames


def simulate_dataset(config: SceneConfig, seed: int) -> Tuple[Dataset, Dict[str, World]]:
    """Simulate the train and test scans of one environment."""
    worlds = {scan: generate_world(config, seed, layout) for scan, layout in SCAN_LAYOUTS.items()}
    dataset = Dataset(
        instances=list(worlds["train"].instances),
        scans={scan: simulate_scan(world, scan) for scan, world in worlds.items()},
    )
    for scan, frames in dataset.scans.items():
        logger.info(
            "simulate scan=%s frames=%d proposals=%d gt_boxes=%d",
            scan,
            len(frames),
            sum(len(f.proposals) for f in frames),
            sum(len(f.gt_boxes) for f in frames),
        )
    return dataset, worlds


__all__ = [
    "CameraSite",
    "RenderedView",
    "SCAN_LAYOUTS",
    "World",
    "WorldObject",
    "camera_grid",
    "descriptor",
    "generate_proposals",
    "generate_world",
    "grid_adjacency",
    "render_frame",
    "simulate_dataset",
    "simulate_scan",
    "size_filter",
]
