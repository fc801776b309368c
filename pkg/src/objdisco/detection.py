"""Nearest-neighbor detection in the embedding space and its mAP evaluation.

A detector is a small labeled set of embeddings. Every proposal takes the label
of its nearest labeled embedding with score ``2.0 - mindist``; for unit vectors
distances lie in ``[0, 2]`` so scores do too. Background is left to the ranking
unless an explicit distance threshold is configured.
"""

from __future__ import annotations

import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from objdisco.errors import EmptyLabeledSetError
from objdisco.geometry import iou_matrix, nms
from objdisco.models.domain import (
    BoundingBox,
    Cluster,
    Detection,
    Frame,
    Instance,
    LabeledSet,
    flatten_proposals,
)
from objdisco.models.reports import InstanceAP, MethodEvaluation

logger = logging.getLogger(__name__)


def knn_detect(
    labeled: LabeledSet,
    embeddings: np.ndarray,
    frame_ids: Sequence[str],
    boxes: Sequence[BoundingBox],
    background_threshold: Optional[float] = None,
) -> List[Detection]:
    """Label query proposals by their nearest labeled embedding.

    Args:
        labeled: The labeled set ``D``; must be nonempty.
        embeddings: ``(Q, D)`` unit embeddings of the queries.
        frame_ids: Frame of each query.
        boxes: Box of each query.
        background_threshold: When set, queries farther than this from every
            labeled embedding are treated as background and emit nothing.

    Returns:
        List[Detection]: One detection per kept query, in query order. Ties go to
        the lowest labeled index.
    """
    if len(labeled) == 0:
        raise EmptyLabeledSetError("nearest-neighbor detection needs labeled examples")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[0] == 0:
        return []
    dist = cdist(embeddings, labeled.embeddings)
    nearest = np.argmin(dist, axis=1)
    mindist = np.clip(dist[np.arange(dist.shape[0]), nearest], 0.0, 2.0)
    detections = []
    for q, (fid, box) in enumerate(zip(frame_ids, boxes)):
        if background_threshold is not None and mindist[q] > background_threshold:
            continue
        detections.append(
            Detection(fid, box, int(labeled.labels[nearest[q]]), float(2.0 - mindist[q]))
        )
    return detections


def cluster_labeled_detector(
    clusters: Iterable[Cluster],
    cluster_labels: Mapping[int, int],
    embeddings: np.ndarray,
) -> LabeledSet:
    """Gather every member of every labeled cluster under its cluster's label.

    Raises:
        EmptyLabeledSetError: If no cluster carries a label.
    """
    rows: List[int] = []
    labels: List[int] = []
    for cluster in clusters:
        if cluster.id not in cluster_labels:
            continue
        rows.extend(cluster.members)
        labels.extend([cluster_labels[cluster.id]] * len(cluster))
    if not rows:
        raise EmptyLabeledSetError("no labeled cluster to build a detector from")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    return LabeledSet(embeddings[rows], np.asarray(labels))


def few_shot_sample(
    labels: Sequence[Optional[int]],
    embeddings: np.ndarray,
    n: Optional[int],
    seed: int,
    classes: Optional[Iterable[int]] = None,
) -> LabeledSet:
    """Draw up to ``n`` labeled examples per class, uniformly and seeded.

    Args:
        labels: Ground-truth instance of each training proposal (``None`` if none).
        embeddings: Embeddings aligned with ``labels``.
        n: Examples per class; ``None`` takes every labeled proposal.
        seed: Sampling seed.
        classes: Classes to sample; those absent from ``labels`` are recorded in
            ``missing_classes``. Defaults to the classes present.
    """
    by_class: Dict[int, List[int]] = {}
    for row, label in enumerate(labels):
        if label is not None:
            by_class.setdefault(int(label), []).append(row)
    wanted = sorted(set(classes) if classes is not None else set(by_class))
    missing = tuple(c for c in wanted if c not in by_class)

    rng = np.random.default_rng(seed)
    rows: List[int] = []
    out_labels: List[int] = []
    for cls in wanted:
        pool = by_class.get(cls)
        if not pool:
            continue
        if n is None or n >= len(pool):
            picks = pool
        else:
            picks = sorted(pool[int(i)] for i in rng.choice(len(pool), size=n, replace=False))
        rows.extend(picks)
        out_labels.extend([cls] * len(picks))
    embeddings = np.asarray(embeddings, dtype=np.float64)
    dim = embeddings.shape[1] if embeddings.ndim == 2 else 0
    chosen = embeddings[rows] if rows else np.zeros((0, dim))
    return LabeledSet(chosen, np.asarray(out_labels, dtype=np.int64), missing)


def detect_frames(
    labeled: LabeledSet,
    frames: Sequence[Frame],
    embeddings: np.ndarray,
    nms_iou: float = 0.7,
    background_threshold: Optional[float] = None,
) -> List[Detection]:
    """Run :func:`knn_detect` over all proposals of ``frames``.

    ``embeddings`` is aligned with :func:`flatten_proposals` of ``frames``.
    Proposals go through per-frame class-agnostic NMS first.
    """
    flat = flatten_proposals(list(frames))
    keep: List[int] = []
    start = 0
    for frame in sorted(frames, key=lambda f: f.id):
        count = len(frame.proposals)
        if count:
            scores = [p.score for p in frame.proposals]
            keep.extend(start + i for i in nms(frame.proposal_boxes(), scores, nms_iou))
        start += count
    embeddings = np.asarray(embeddings, dtype=np.float64)
    logger.debug("detect frames=%d queries=%d labeled=%d", len(frames), len(keep), len(labeled))
    return knn_detect(
        labeled,
        embeddings[keep] if keep else np.zeros((0, embeddings.shape[1] if embeddings.ndim == 2 else 0)),
        [flat[i][0][0] for i in keep],
        [flat[i][1].box for i in keep],
        background_threshold,
    )


def _interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def average_precision(
    detections: Sequence[Detection],
    gt_boxes: Mapping[str, Sequence[BoundingBox]],
    iou_th: float = 0.5,
) -> Optional[float]:
    """All-points interpolated AP of one class.

    Detections are ranked by descending score (stable). Each is matched to the
    still-unmatched ground-truth box of its frame with the highest IoU, if that
    IoU reaches ``iou_th``; matched detections are true positives.

    Returns:
        Optional[float]: AP in ``[0, 1]``, or ``None`` when the class has no
        ground-truth box.
    """
    n_gt = sum(len(v) for v in gt_boxes.values())
    if n_gt == 0:
        return None
    if not detections:
        return 0.0
    gt_arrays = {
        fid: np.stack([b.as_array() for b in boxes])
        for fid, boxes in gt_boxes.items()
        if boxes
    }
    used = {fid: np.zeros(arr.shape[0], dtype=bool) for fid, arr in gt_arrays.items()}
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = detections[i]
        arr = gt_arrays.get(det.frame_id)
        if arr is None:
            continue
        overlaps = iou_matrix(det.box.as_array(), arr)[0]
        overlaps[used[det.frame_id]] = -1.0
        j = int(np.argmax(overlaps))
        if overlaps[j] >= iou_th:
            used[det.frame_id][j] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    return _interpolated_ap(recall, precision)


def mean_ap(aps: Mapping[int, Optional[float]] | Iterable[Optional[float]]) -> float:
    """Arithmetic mean of the defined APs.

    Raises:
        ValueError: If no AP is defined.
    """
    values = aps.values() if isinstance(aps, Mapping) else aps
    defined = sorted(float(v) for v in values if v is not None)
    if not defined:
        raise ValueError("mean_ap needs at least one defined AP")
    return float(np.mean(defined))


def mean_ap_over_environments(
    environments: Iterable[Mapping[int, Optional[float]]],
) -> float:
    """Mean over environments of each environment's mean over instances."""
    per_env = sorted(mean_ap(env) for env in environments)
    if not per_env:
        raise ValueError("no environment to average")
    return float(np.mean(per_env))


def evaluate_detections(
    method: str,
    detections: Sequence[Detection],
    frames: Sequence[Frame],
    instances: Sequence[Instance],
    iou_th: float = 0.5,
    rollup_exclude: Iterable[str] = (),
    shots: Optional[str] = None,
) -> MethodEvaluation:
    """Per-instance AP, mAP and per-category rollups of one detector."""
    gt: Dict[int, Dict[str, List[BoundingBox]]] = {}
    for frame in frames:
        for g in frame.gt_boxes:
            gt.setdefault(g.instance_id, {}).setdefault(frame.id, []).append(g.box)
    by_label: Dict[int, List[Detection]] = {}
    for det in detections:
        by_label.setdefault(det.label, []).append(det)

    per_instance = [
        InstanceAP(
            instance_id=inst.instance_id,
            category=inst.category,
            ap=average_precision(by_label.get(inst.instance_id, []), gt.get(inst.instance_id, {}), iou_th),
        )
        for inst in sorted(instances, key=lambda i: i.instance_id)
    ]
    excluded = set(rollup_exclude)
    per_category: Dict[str, float] = {}
    for category in sorted({r.category for r in per_instance} - excluded):
        aps = [r.ap for r in per_instance if r.category == category and r.ap is not None]
        if aps:
            per_category[category] = float(np.mean(aps))
    return MethodEvaluation(
        method=method,
        shots=shots,
        mean_ap=mean_ap(r.ap for r in per_instance),
        per_instance=per_instance,
        per_category=per_category,
    )


def aggregate_trials(evaluations: Sequence[MethodEvaluation]) -> MethodEvaluation:
    """Average repeated samplings of one detector configuration.

    Per-instance APs are averaged over the trials where they are defined; the
    overall mAP is the mean over trials of each trial's mAP.
    """
    if not evaluations:
        raise ValueError("no evaluation to aggregate")
    first = evaluations[0]
    per_instance = []
    for k, row in enumerate(first.per_instance):
        aps = [e.per_instance[k].ap for e in evaluations if e.per_instance[k].ap is not None]
        per_instance.append(
            InstanceAP(
                instance_id=row.instance_id,
                category=row.category,
                ap=float(np.mean(aps)) if aps else None,
            )
        )
    categories = sorted({c for e in evaluations for c in e.per_category})
    per_category = {
        c: float(np.mean([e.per_category[c] for e in evaluations if c in e.per_category]))
        for c in categories
    }
    return MethodEvaluation(
        method=first.method,
        shots=first.shots,
        mean_ap=mean_ap_over_environments(
            {r.instance_id: r.ap for r in e.per_instance} for e in evaluations
        ),
        per_instance=per_instance,
        per_category=per_category,
    )
