"""Data models.

Exports the domain types and the report models.
"""

from .domain import (
    AdamState,
    BoundingBox,
    CameraPose,
    Dataset,
    Cluster,
    Detection,
    EmbeddingModel,
    Frame,
    GroundTruthBox,
    Instance,
    Intrinsics,
    LabeledSet,
    MatchPair,
    PointCloud,
    Proposal,
    ProposalRef,
    Triplet,
    flatten_proposals,
)
from .reports import (
    DiscoveryReport,
    DiscoverySummary,
    EvaluationReport,
    FewShotRow,
    InstanceAP,
    InstanceDiscovery,
    MethodEvaluation,
    RunMetadata,
    SweepRow,
    TrainingSummary,
)

__all__ = [
    # domain
    "AdamState",
    "BoundingBox",
    "CameraPose",
    "Dataset",
    "Cluster",
    "Detection",
    "EmbeddingModel",
    "Frame",
    "GroundTruthBox",
    "Instance",
    "Intrinsics",
    "LabeledSet",
    "MatchPair",
    "PointCloud",
    "Proposal",
    "ProposalRef",
    "Triplet",
    "flatten_proposals",
    # reports
    "DiscoveryReport",
    "DiscoverySummary",
    "EvaluationReport",
    "FewShotRow",
    "InstanceAP",
    "InstanceDiscovery",
    "MethodEvaluation",
    "RunMetadata",
    "SweepRow",
    "TrainingSummary",
]
