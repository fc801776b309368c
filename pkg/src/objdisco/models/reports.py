"""Report models.

Everything a run emits as JSON. Float fields keep full precision so that two
runs with the same config and seed produce byte-identical files.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from objdisco.config import AP_INTERPOLATION, BASELINE_LABEL, FORMAT_VERSION


class RunMetadata(BaseModel):
    """Attribution block embedded in every report."""

    config_hash: str
    seed: int
    format_version: int = FORMAT_VERSION


class InstanceDiscovery(BaseModel):
    """Dominant-cluster scores of one instance."""

    instance_id: int
    dominant_cluster_id: Optional[int] = None
    precision: float = Field(..., ge=0.0, le=1.0)
    recall: float = Field(..., ge=0.0, le=1.0)
    support: int = Field(..., ge=0, description="Proposals labeled with this instance")


class DiscoveryReport(BaseModel):
    """Discovery quality at one bandwidth."""

    bandwidth: float
    n_clusters: int
    avg_precision: float
    avg_recall: float
    instances: List[InstanceDiscovery] = Field(default_factory=list)
    excluded_instances: List[int] = Field(
        default_factory=list, description="Instances without any labeled proposal"
    )


class SweepRow(BaseModel):
    """One point of the precision/recall versus bandwidth curve."""

    bandwidth: float
    avg_precision: float
    avg_recall: float
    n_clusters: int


class DiscoverySummary(BaseModel):
    """The discovery stage report."""

    metadata: RunMetadata
    featured: DiscoveryReport
    best_bandwidth: float
    sweep: List[SweepRow]
    labeled_clusters: int = Field(0, description="Clusters given an instance label")


class TrainingSummary(BaseModel):
    """The training stage report."""

    metadata: RunMetadata
    matches: int
    triplets_first_epoch: int
    applied_steps: int
    skipped_steps: int
    final_loss: Optional[float] = None


class InstanceAP(BaseModel):
    """Average precision of one instance; ``None`` when it has no ground truth."""

    instance_id: int
    category: str
    ap: Optional[float] = None


class MethodEvaluation(BaseModel):
    """mAP of one detector configuration."""

    method: str
    shots: Optional[str] = None
    mean_ap: float
    per_instance: List[InstanceAP]
    per_category: Dict[str, float] = Field(default_factory=dict)


class FewShotRow(BaseModel):
    """Few-shot sweep row: learned embedding versus the raw-feature baseline."""

    shots: str
    embedding_map: float
    baseline_map: float


class EvaluationReport(BaseModel):
    """The evaluation stage report."""

    metadata: RunMetadata
    ap_interpolation: str = AP_INTERPOLATION
    baseline_label: str = BASELINE_LABEL
    iou_threshold: float
    rollup_excluded_categories: List[str] = Field(default_factory=list)
    methods: List[MethodEvaluation]
    few_shot: List[FewShotRow]
