"""Object discovery by mean-shift clustering of proposal embeddings.

Also holds the dominant-cluster evaluation: for every labeled instance, the
cluster holding most of its proposals is scored by precision (share of the
cluster showing the instance) and recall (share of the instance's proposals in
the cluster).
"""

from __future__ import annotations

import logging
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from objdisco.config import DiscoveryConfig
from objdisco.geometry import iou_matrix
from objdisco.models.domain import BoundingBox, Cluster, Frame, GroundTruthBox
from objdisco.models.reports import DiscoveryReport, InstanceDiscovery, SweepRow

logger = logging.getLogger(__name__)

Labels = Sequence[Optional[int]]


def _shift(modes: np.ndarray, X: np.ndarray, bandwidth: float, kernel: str) -> np.ndarray:
    dist = cdist(modes, X)
    if kernel == "flat":
        weights = (dist <= bandwidth).astype(np.float64)
    else:
        weights = np.exp(-0.5 * (dist / bandwidth) ** 2)
    total = weights.sum(axis=1)
    shifted = modes.copy()
    ok = total > 0
    shifted[ok] = (weights[ok] @ X) / total[ok, None]
    return shifted


def converge_modes(
    embeddings: np.ndarray, bandwidth: float, config: Optional[DiscoveryConfig] = None
) -> np.ndarray:
    """Run mean-shift from every point and return the ``(N, D)`` converged modes.

    Each seed moves to the (kernel-weighted) mean of the points around it until it
    shifts less than the tolerance or the iteration cap is reached.
    """
    config = config or DiscoveryConfig()
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    modes = X.copy()
    active = np.ones(X.shape[0], dtype=bool)
    for _ in range(config.max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        shifted = _shift(modes[idx], X, bandwidth, config.kernel)
        moved = np.linalg.norm(shifted - modes[idx], axis=1)
        modes[idx] = shifted
        active[idx[moved < config.tolerance]] = False
    return modes


def mean_shift(
    embeddings, bandwidth: float, config: Optional[DiscoveryConfig] = None
) -> List[Cluster]:
    """Cluster embeddings by mean shift.

    Converged modes closer than ``merge_factor * bandwidth`` to an earlier mode
    join that mode's cluster (lowest seed index wins); every point belongs to the
    cluster of the mode its own seed converged to.

    Args:
        embeddings: ``(N, D)`` points; ``(N,)`` is read as 1-D data.
        bandwidth: Kernel radius, positive.
        config: Kernel, tolerance, iteration cap and merge factor.

    Returns:
        List[Cluster]: Clusters with ids ``0..K-1``; members index ``embeddings``.
    """
    config = config or DiscoveryConfig()
    X = np.asarray(embeddings, dtype=np.float64)
    if X.size == 0:
        return []
    modes = converge_modes(X, bandwidth, config)
    merge_radius = config.merge_factor * bandwidth

    clusters: List[Cluster] = []
    centers = np.zeros((0, modes.shape[1]))
    for i, mode in enumerate(modes):
        if centers.shape[0]:
            near = np.flatnonzero(np.linalg.norm(centers - mode, axis=1) <= merge_radius)
            if near.size:
                clusters[int(near[0])].members.append(i)
                continue
        clusters.append(Cluster(id=len(clusters), mode=mode.copy(), members=[i]))
        centers = np.vstack([centers, mode])
    return clusters


def filter_clusters(clusters: Iterable[Cluster], min_size: int = 8) -> List[Cluster]:
    """Keep clusters with at least ``min_size`` members, preserving order."""
    if min_size < 1:
        raise ValueError("min_size must be at least 1")
    return [c for c in clusters if len(c) >= min_size]


def label_proposals_by_gt(
    proposals: Sequence[BoundingBox],
    gt_boxes: Sequence[GroundTruthBox],
    iou_th: float = 0.5,
) -> List[Optional[int]]:
    """Label each proposal with the instance of its best-overlapping ground-truth box.

    A proposal stays unlabeled when its best IoU is below ``iou_th``; ties go to
    the earlier ground-truth box.
    """
    if not 0 < iou_th <= 1:
        raise ValueError("iou_th must lie in (0, 1]")
    if not proposals:
        return []
    if not gt_boxes:
        return [None] * len(proposals)
    overlaps = iou_matrix(
        np.stack([b.as_array() for b in proposals]),
        np.stack([g.box.as_array() for g in gt_boxes]),
    )
    best = np.argmax(overlaps, axis=1)
    labels: List[Optional[int]] = []
    for i, j in enumerate(best):
        labels.append(gt_boxes[int(j)].instance_id if overlaps[i, j] >= iou_th else None)
    return labels


def label_frames(frames: Sequence[Frame], iou_th: float = 0.5) -> List[Optional[int]]:
    """Ground-truth label of every proposal of ``frames``, in :func:`flatten_proposals` order."""
    labels: List[Optional[int]] = []
    for frame in sorted(frames, key=lambda f: f.id):
        labels.extend(label_proposals_by_gt([p.box for p in frame.proposals], frame.gt_boxes, iou_th))
    return labels


def discovery_pr(
    clusters: Sequence[Cluster],
    labels: Labels,
    bandwidth: float = 0.0,
    instances: Optional[Iterable[int]] = None,
) -> DiscoveryReport:
    """Score every instance by its dominant cluster.

    Args:
        clusters: Clusters whose members index ``labels``.
        labels: Per-proposal instance label (``None`` for unlabeled).
        bandwidth: Recorded in the report.
        instances: Instances expected in the evaluation; those without a single
            labeled proposal are excluded and listed. Defaults to the labels seen.

    Returns:
        DiscoveryReport: Per-instance and averaged precision and recall.
    """
    totals = Counter(label for label in labels if label is not None)
    expected = sorted(set(totals) | set(instances or ()))
    excluded = [i for i in expected if totals.get(i, 0) == 0]

    per_cluster: Dict[int, Counter] = {
        c.id: Counter(labels[m] for m in c.members if labels[m] is not None)
        for c in clusters
    }
    sizes = {c.id: len(c) for c in clusters}

    rows: List[InstanceDiscovery] = []
    for instance in expected:
        if instance in excluded:
            continue
        best_id: Optional[int] = None
        best_key = (0, 0, 0)
        for cid, counts in per_cluster.items():
            key = (counts.get(instance, 0), sizes[cid], -cid)
            if key[0] > 0 and key > best_key:
                best_id, best_key = cid, key
        if best_id is None:
            rows.append(InstanceDiscovery(instance_id=instance, precision=0.0, recall=0.0, support=totals[instance]))
            continue
        hits = best_key[0]
        rows.append(
            InstanceDiscovery(
                instance_id=instance,
                dominant_cluster_id=best_id,
                precision=hits / sizes[best_id],
                recall=hits / totals[instance],
                support=totals[instance],
            )
        )

    avg_p = float(np.mean([r.precision for r in rows])) if rows else 0.0
    avg_r = float(np.mean([r.recall for r in rows])) if rows else 0.0
    return DiscoveryReport(
        bandwidth=bandwidth,
        n_clusters=len(clusters),
        avg_precision=avg_p,
        avg_recall=avg_r,
        instances=rows,
        excluded_instances=excluded,
    )


def sweep_bandwidths(
    embeddings: np.ndarray,
    labels: Labels,
    config: DiscoveryConfig,
    instances: Optional[Iterable[int]] = None,
) -> List[DiscoveryReport]:
    """Cluster, filter and score the embeddings at every configured bandwidth."""
    reports = []
    expected = list(instances) if instances is not None else None
    for bandwidth in config.bandwidths:
        clusters = filter_clusters(mean_shift(embeddings, bandwidth, config), config.min_cluster_size)
        report = discovery_pr(clusters, labels, bandwidth, expected)
        logger.info(
            "discovery bandwidth=%.3f clusters=%d precision=%.3f recall=%.3f",
            bandwidth, report.n_clusters, report.avg_precision, report.avg_recall,
        )
        reports.append(report)
    return reports


def sweep_rows(reports: Iterable[DiscoveryReport]) -> List[SweepRow]:
    """One table row per bandwidth report."""
    return [
        SweepRow(
            bandwidth=r.bandwidth,
            avg_precision=r.avg_precision,
            avg_recall=r.avg_recall,
            n_clusters=r.n_clusters,
        )
        for r in reports
    ]


def best_bandwidth(reports: Sequence[DiscoveryReport]) -> float:
    """Bandwidth with the highest harmonic mean of average precision and recall."""
    def f1(r: DiscoveryReport) -> float:
        total = r.avg_precision + r.avg_recall
        return 2 * r.avg_precision * r.avg_recall / total if total > 0 else 0.0

    best = max(reports, key=lambda r: (f1(r), -r.bandwidth))
    return best.bandwidth


def label_clusters_by_majority(clusters: Iterable[Cluster], labels: Labels) -> Dict[int, int]:
    """Name each cluster after its majority instance, as a human labeler would.

    A cluster is labeled only when one instance holds at least half of its members.
    """
    named: Dict[int, int] = {}
    for cluster in clusters:
        counts = Counter(labels[m] for m in cluster.members if labels[m] is not None)
        if not counts:
            continue
        instance, hits = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if 2 * hits >= len(cluster):
            named[cluster.id] = instance
    return named
