"""Configuration models and project-wide constants.

Every knob of the pipeline lives in one validated tree rooted at
:class:`PipelineConfig`; it is read from a JSON file and never from the
environment.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from objdisco.errors import ConfigError

FORMAT_VERSION = 1
EMBEDDING_DIM = 128
DEFAULT_OUTPUT_DIR = "runs/default"
AP_INTERPOLATION = "all-points"
BASELINE_LABEL = "raw-feature baseline"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CategorySpec(_Strict):
    """An object category of the simulated environment."""

    name: str = Field(..., min_length=1, description="Category name")
    recall: float = Field(..., ge=0.0, le=1.0, description="Proposal recall target")
    size_min: Tuple[float, float, float] = Field(
        ..., description="Minimum (width, depth, height) in meters"
    )
    size_max: Tuple[float, float, float] = Field(
        ..., description="Maximum (width, depth, height) in meters"
    )

    @model_validator(mode="after")
    def _check_sizes(self) -> "CategorySpec":
        if any(lo <= 0 or hi < lo for lo, hi in zip(self.size_min, self.size_max)):
            raise ValueError(f"invalid size range for category {self.name!r}")
        return self


DEFAULT_CATEGORIES: List[CategorySpec] = [
    CategorySpec(name="cereal box", recall=0.51, size_min=(0.30, 0.11, 0.38), size_max=(0.42, 0.16, 0.50)),
    CategorySpec(name="can", recall=0.55, size_min=(0.19, 0.19, 0.24), size_max=(0.24, 0.24, 0.32)),
    CategorySpec(name="soap", recall=0.70, size_min=(0.24, 0.14, 0.19), size_max=(0.34, 0.19, 0.27)),
    CategorySpec(name="bottle", recall=0.68, size_min=(0.17, 0.17, 0.42), size_max=(0.22, 0.22, 0.55)),
    CategorySpec(name="other", recall=0.70, size_min=(0.24, 0.24, 0.24), size_max=(0.44, 0.40, 0.44)),
]


class SceneConfig(_Strict):
    """Synthetic environment and sensor model."""

    room_size: Tuple[float, float] = Field((6.0, 6.0), description="Room extent (x, y), meters")
    object_count: int = Field(30, ge=0, description="Number of object instances")
    categories: List[CategorySpec] = Field(default_factory=lambda: list(DEFAULT_CATEGORIES), min_length=1)
    object_base_height: Tuple[float, float] = Field((0.35, 0.8), description="Range of object base heights, meters")
    grid_rows: int = Field(5, ge=1, description="Camera grid rows")
    grid_cols: int = Field(5, ge=1, description="Camera grid columns")
    grid_spacing: float = Field(0.5, gt=0, description="Distance between grid locations, meters")
    orientations: int = Field(6, ge=1, description="Camera headings per location")
    camera_height: float = Field(0.7, gt=0, description="Camera height above the floor, meters")
    camera_clearance: float = Field(0.6, ge=0, description="Minimum horizontal distance from any object to any camera, meters")
    image_width: int = Field(640, ge=8)
    image_height: int = Field(480, ge=8)
    fx: float = Field(500.0, gt=0)
    fy: float = Field(500.0, gt=0)
    cx: Optional[float] = Field(None, description="Principal point x; image center when omitted")
    cy: Optional[float] = Field(None, description="Principal point y; image center when omitted")
    depth_noise: float = Field(0.005, ge=0, description="Depth noise sigma along the ray, meters")
    descriptor_dim: int = Field(64, ge=2, description="Descriptor dimension d")
    descriptor_noise: float = Field(0.03, ge=0, description="Per-entry descriptor noise sigma")
    view_amplitude: float = Field(0.5, ge=0, description="Norm of the view-dependent descriptor component")
    view_buckets: int = Field(12, ge=1, description="Number of viewing-azimuth buckets")
    box_jitter: float = Field(2.0, ge=0, description="Proposal corner jitter sigma, pixels")
    false_positive_rate: float = Field(0.5, ge=0, description="Mean false-positive proposals per frame (Poisson)")
    min_box_size: Tuple[float, float] = Field((33.0, 25.0), description="Minimum (width, height) of kept boxes, pixels")
    samples_per_object: int = Field(500, ge=8, description="Surface samples per cuboid")
    visibility_fraction: float = Field(0.25, ge=0, le=1, description="Visible share of front-facing samples for a ground-truth box")
    zbuffer_bin: int = Field(8, ge=1, description="Z-buffer bin size, pixels")
    max_placement_tries: int = Field(1000, ge=1)
    nms_iou: float = Field(0.7, gt=0, le=1, description="Proposal NMS IoU threshold")

    @model_validator(mode="after")
    def _check_intrinsics(self) -> "SceneConfig":
        cx = self.image_width / 2 if self.cx is None else self.cx
        cy = self.image_height / 2 if self.cy is None else self.cy
        if not (0 <= cx < self.image_width and 0 <= cy < self.image_height):
            raise ValueError("principal point must lie inside the image")
        return self

    @property
    def principal_point(self) -> Tuple[float, float]:
        """``(cx, cy)``, the image center unless set."""
        cx = self.image_width / 2 if self.cx is None else self.cx
        cy = self.image_height / 2 if self.cy is None else self.cy
        return cx, cy


class AssociationConfig(_Strict):
    """Cross-frame matching and triplet mining."""

    iou_threshold: float = Field(0.1, gt=0, lt=1, description="Reprojection IoU threshold th")
    min_points: int = Field(10, ge=1, description="Minimum depth support of a reprojection")
    radius: Optional[float] = Field(None, ge=0, description="Camera-center radius; 1.5 grid steps when omitted")
    grid_adjacency: bool = Field(False, description="Restrict pairs to 8-connected grid neighbors")
    min_shared: float = Field(0.5, ge=0, le=1, description="Required depth-support agreement of a match; 0 disables")
    support_radius: float = Field(0.03, gt=0, description="Distance at which two world points coincide, meters")
    negatives_per_pair: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)


class TrainConfig(_Strict):
    """Metric learning schedule."""

    margin: float = Field(1.0, gt=0, description="Triplet margin M")
    learning_rate: float = Field(1e-4, gt=0)
    decay: float = Field(0.94, gt=0, le=1, description="Multiplicative learning-rate decay")
    decay_interval: int = Field(1000, ge=1, description="Steps between decays")
    steps: int = Field(2000, ge=0)
    embedding_dim: int = Field(EMBEDDING_DIM, ge=1)
    batch_radius: Optional[float] = Field(None, ge=0, description="Batch neighborhood radius; one grid step when omitted")
    seed: int = Field(0, description="Initialization and batch sampling seed")


class DiscoveryConfig(_Strict):
    """Mean-shift discovery and its evaluation."""

    bandwidth: float = Field(0.6, gt=0, description="Featured bandwidth")
    bandwidths: List[float] = Field(default_factory=lambda: [0.4, 0.5, 0.6, 0.7, 0.8], min_length=1)
    kernel: Literal["flat", "gaussian"] = "flat"
    tolerance: float = Field(1e-4, gt=0)
    max_iter: int = Field(300, ge=1)
    merge_factor: float = Field(0.5, gt=0, description="Modes closer than merge_factor * bandwidth merge")
    min_cluster_size: int = Field(8, ge=1)
    gt_iou: float = Field(0.5, gt=0, le=1, description="IoU for assigning proposals to ground truth")


class DetectionConfig(_Strict):
    """Few-shot and cluster-labeled detection, and AP evaluation."""

    shots: List[int] = Field(default_factory=lambda: [1, 3, 5, 10], min_length=1)
    featured_shots: int = Field(5, ge=1)
    trials: int = Field(3, ge=1, description="Few-shot samplings averaged per n")
    include_all_labeled: bool = Field(True, description="Add the every-labeled-proposal row")
    nms_iou: float = Field(0.7, gt=0, le=1)
    background_threshold: Optional[float] = Field(None, gt=0, le=2)
    ap_iou: float = Field(0.5, gt=0, le=1)
    rollup_exclude: List[str] = Field(default_factory=lambda: ["cereal box"])


STAGES: Tuple[str, ...] = ("simulate", "associate", "mine", "train", "embed", "discover", "detect", "evaluate")


class PipelineConfig(_Strict):
    """Root configuration of a pipeline run."""

    seed: int = Field(0, description="Global seed; all sub-seeds derive from it")
    output_dir: str = Field(DEFAULT_OUTPUT_DIR)
    dataset_dir: Optional[str] = Field(None, description="Dataset location; <output_dir>/dataset when omitted")
    simulate: bool = Field(True, description="Simulate the dataset when it is absent")
    scene: SceneConfig = Field(default_factory=SceneConfig)
    association: AssociationConfig = Field(default_factory=AssociationConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    discovery: DiscoveryConfig = Field(default_factory=DiscoveryConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)

    @property
    def dataset_path(self) -> Path:
        """Dataset directory; ``<output_dir>/dataset`` unless set."""
        if self.dataset_dir is not None:
            return Path(self.dataset_dir)
        return Path(self.output_dir) / "dataset"

    def canonical_json(self) -> str:
        """Sorted, compact JSON of the whole config, the input of the config hash."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def load_config(path: Optional[str | Path] = None, **overrides) -> PipelineConfig:
    """Read a JSON config (defaults when ``path`` is None) and apply overrides.

    Overrides with value ``None`` are ignored.

    Raises:
        ConfigError: On unreadable files, malformed JSON or invalid values.
    """
    try:
        data = {}
        if path is not None:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top-level JSON value must be an object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig.model_validate(data)
    except ConfigError:
        raise
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}") from e
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
