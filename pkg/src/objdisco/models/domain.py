"""Domain types.

Geometric observations, proposals, self-supervision units and learned models.
Array-valued fields are numpy ``float64`` arrays; coordinates follow a right-handed
camera frame with x right, y down and z forward, and pixel origin at the top-left.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from objdisco.errors import InvalidPoseError

ProposalRef = Tuple[str, int]
"""A proposal addressed as ``(frame_id, proposal_index)``."""

POSE_TOLERANCE = 1e-9


def _as_array(value, shape: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform ``x_world = R @ x_cam + t``."""

    R: np.ndarray
    t: np.ndarray
    tolerance: float = field(default=POSE_TOLERANCE, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Validate that ``R`` is a rotation."""
        R = _as_array(self.R, (3, 3), "R")
        t = _as_array(self.t, (3,), "t")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidPoseError("pose contains non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > self.tolerance:
            raise InvalidPoseError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > self.tolerance:
            raise InvalidPoseError("rotation determinant is not +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.t

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Map ``(N, 3)`` camera-frame points to the world frame."""
        return points @ self.R.T + self.t

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map ``(N, 3)`` world-frame points into this camera's frame."""
        return (points - self.t) @ self.R


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics and image size, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        """Validate focal lengths and principal point."""
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with continuous coordinates."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        """Reject empty or inverted boxes."""
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(
                f"degenerate box ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        """Horizontal extent in pixels."""
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        """Vertical extent in pixels."""
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        """Box area in square pixels."""
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        """Return ``[xmin, ymin, xmax, ymax]``."""
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax])

    @classmethod
    def from_array(cls, values) -> "BoundingBox":
        """Box from ``(xmin, ymin, xmax, ymax)``."""
        xmin, ymin, xmax, ymax = (float(v) for v in values)
        return cls(xmin, ymin, xmax, ymax)


@dataclass
class PointCloud:
    """Points in the owning frame's camera coordinates, meters."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotated object box, used only for evaluation."""

    box: BoundingBox
    instance_id: int


@dataclass
class Proposal:
    """A class-agnostic candidate box with its frozen descriptor."""

    frame_id: str
    box: BoundingBox
    feature: np.ndarray
    gt_label: Optional[int] = None
    score: float = 1.0

    def __post_init__(self) -> None:
        feature = np.asarray(self.feature, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(feature)):
            raise ValueError("proposal feature contains non-finite entries")
        self.feature = feature


@dataclass
class Frame:
    """A posed RGB-D observation with its proposals and annotations."""

    id: str
    location_id: str
    pose: CameraPose
    intrinsics: Intrinsics
    cloud: PointCloud
    proposals: List[Proposal] = field(default_factory=list)
    gt_boxes: List[GroundTruthBox] = field(default_factory=list)

    def proposal_boxes(self) -> np.ndarray:
        """Return proposal boxes as an ``(N, 4)`` array."""
        if not self.proposals:
            return np.zeros((0, 4))
        return np.stack([p.box.as_array() for p in self.proposals])

    def gt_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ground-truth boxes ``(M, 4)`` and instance ids ``(M,)``."""
        if not self.gt_boxes:
            return np.zeros((0, 4)), np.zeros((0,), dtype=np.int64)
        boxes = np.stack([g.box.as_array() for g in self.gt_boxes])
        ids = np.array([g.instance_id for g in self.gt_boxes], dtype=np.int64)
        return boxes, ids


@dataclass(frozen=True)
class Instance:
    """A physical object instance and its coarse category."""

    instance_id: int
    category: str


@dataclass(frozen=True, order=True)
class MatchPair:
    """Two proposals in different frames asserted to show the same object."""

    a: ProposalRef
    b: ProposalRef
    iou_score: float

    def __post_init__(self) -> None:
        if self.a[0] == self.b[0]:
            raise ValueError("a match must join proposals of different frames")


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive from a match, negative disjoint from the anchor in its frame."""

    anchor: ProposalRef
    positive: ProposalRef
    negative: ProposalRef


@dataclass
class EmbeddingModel:
    """Linear projection followed by L2 normalization."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError(
                f"W {self.W.shape} and b {self.b.shape} do not describe a projection"
            )
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("model parameters must be finite")

    @property
    def input_dim(self) -> int:
        """Descriptor dimension ``d``."""
        return int(self.W.shape[1])

    @property
    def output_dim(self) -> int:
        """Embedding dimension."""
        return int(self.W.shape[0])

    def copy(self) -> "EmbeddingModel":
        """Independent copy of the weights."""
        return EmbeddingModel(self.W.copy(), self.b.copy())


@dataclass
class AdamState:
    """Adam moment accumulators shaped like ``(W, b)``."""

    m_W: np.ndarray
    m_b: np.ndarray
    v_W: np.ndarray
    v_b: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, model: EmbeddingModel) -> "AdamState":
        """Zero moments shaped like ``model``."""
        return cls(
            m_W=np.zeros_like(model.W),
            m_b=np.zeros_like(model.b),
            v_W=np.zeros_like(model.W),
            v_b=np.zeros_like(model.b),
        )


@dataclass
class Cluster:
    """A mean-shift basin.

    ``members`` index into the embedding list the clustering was run on.
    """

    id: int
    mode: np.ndarray
    members: List[int]

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class LabeledSet:
    """Labeled embeddings for nearest-neighbor detection."""

    embeddings: np.ndarray
    labels: np.ndarray
    missing_classes: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if embeddings.ndim != 2:
            embeddings = embeddings.reshape(self.labels.shape[0], -1) if embeddings.size else np.zeros((0, 0))
        self.embeddings = embeddings
        if self.embeddings.shape[0] != self.labels.shape[0]:
            raise ValueError("embeddings and labels differ in length")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class Detection:
    """A labeled, scored box; score is ``2.0 - mindist``."""

    frame_id: str
    box: BoundingBox
    label: int
    score: float


def flatten_proposals(frames: List[Frame]) -> List[Tuple[ProposalRef, Proposal]]:
    """All proposals of ``frames`` in sorted frame-id order, with their refs."""
    out: List[Tuple[ProposalRef, Proposal]] = []
    for frame in sorted(frames, key=lambda f: f.id):
        out.extend(((frame.id, i), p) for i, p in enumerate(frame.proposals))
    return out


@dataclass
class Dataset:
    """One environment: its instances and the frames of each scan.

    The ``train`` scan feeds association, training and discovery; the ``test``
    scan, a second placement of the same objects, is held out for detection.
    """

    instances: List[Instance]
    scans: Dict[str, List[Frame]] = field(default_factory=dict)

    @property
    def train(self) -> List[Frame]:
        """Frames of the ``train`` scan."""
        return self.scans.get("train", [])

    @property
    def test(self) -> List[Frame]:
        """Frames of the ``test`` scan."""
        return self.scans.get("test", [])
