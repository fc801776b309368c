from typing import Optional, Sequence

import numpy as np
import pytest

from objdisco.models import (
    BoundingBox,
    CameraPose,
    Frame,
    GroundTruthBox,
    Intrinsics,
    PointCloud,
    Proposal,
)

SMALL_K = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


def identity_pose(t=(0.0, 0.0, 0.0)) -> CameraPose:
    return CameraPose(np.eye(3), np.asarray(t, dtype=np.float64))


def make_frame(
    frame_id: str,
    boxes: Sequence[Sequence[float]] = (),
    *,
    location_id: Optional[str] = None,
    pose: Optional[CameraPose] = None,
    points: Optional[np.ndarray] = None,
    intrinsics: Intrinsics = SMALL_K,
    labels: Optional[Sequence[Optional[int]]] = None,
    features: Optional[np.ndarray] = None,
    gt: Sequence[tuple] = (),
) -> Frame:
    labels = list(labels) if labels is not None else [None] * len(boxes)
    proposals = [
        Proposal(
            frame_id=frame_id,
            box=BoundingBox(*box),
            feature=features[i] if features is not None else np.ones(4),
            gt_label=labels[i],
        )
        for i, box in enumerate(boxes)
    ]
    return Frame(
        id=frame_id,
        location_id=location_id or frame_id,
        pose=pose or identity_pose(),
        intrinsics=intrinsics,
        cloud=PointCloud(points if points is not None else np.zeros((0, 3))),
        proposals=proposals,
        gt_boxes=[GroundTruthBox(BoundingBox(*b), i) for b, i in gt],
    )


def plane_points(x0: float, x1: float, y0: float, y1: float, z: float, n: int = 11) -> np.ndarray:
    xs, ys = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
    return np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, z)])


@pytest.fixture
def K() -> Intrinsics:
    return SMALL_K


OBJECT_HALF = 0.2
OBJECT_DEPTH = 2.0
BACKGROUND_BOX = (80.0, 80.0, 95.0, 95.0)


def object_box(shift: float, pad: float = 1.0) -> tuple:
    """Pixel box of the square test object seen from a camera moved ``shift`` along x."""
    scale = SMALL_K.fx / OBJECT_DEPTH
    return (
        SMALL_K.cx + scale * (-OBJECT_HALF - shift) - pad,
        SMALL_K.cy - scale * OBJECT_HALF - pad,
        SMALL_K.cx + scale * (OBJECT_HALF - shift) + pad,
        SMALL_K.cy + scale * OBJECT_HALF + pad,
    )


def plane_scene(shifts: Sequence[float], feature_dim: int = 6, seed: int = 0) -> list:
    """Frames looking at one square object, each with a disjoint background proposal.

    Proposal 0 of every frame is the object, proposal 1 an empty background box.
    """
    rng = np.random.default_rng(seed)
    world = plane_points(-OBJECT_HALF, OBJECT_HALF, -OBJECT_HALF, OBJECT_HALF, OBJECT_DEPTH)
    object_feature = rng.normal(size=feature_dim)
    frames = []
    for k, shift in enumerate(shifts):
        t = np.array([shift, 0.0, 0.0])
        features = np.stack(
            [object_feature + 0.05 * rng.normal(size=feature_dim), rng.normal(size=feature_dim)]
        )
        frames.append(
            make_frame(
                f"f{k}",
                [object_box(shift), BACKGROUND_BOX],
                pose=identity_pose(t),
                points=world - t,
                labels=[1, None],
                features=features,
            )
        )
    return frames
