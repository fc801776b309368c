"""Noisy class-agnostic proposal generator and frozen descriptors.

True proposals are jittered ground-truth boxes kept with their category's
recall; false positives are random boxes over background. Every kept box gets
a descriptor mixing the latent codes of the objects it covers, a view-dependent
offset per object and a background code for the uncovered area.
"""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import numpy as np

from objdisco.discovery import label_proposals_by_gt
from objdisco.geometry import clip_box, iou_matrix, nms
from objdisco.models.domain import BoundingBox, Proposal
from objdisco.scenesim.render import RenderedView, view_offset
from objdisco.scenesim.world import World
from objdisco.utils import derive_seed

logger = logging.getLogger(__name__)

TRUE_SCORE_RANGE = (0.5, 1.0)
FALSE_SCORE_RANGE = (0.01, 0.5)
_FP_TRIES = 20


def size_filter(boxes: Sequence[BoundingBox], min_w: float, min_h: float) -> List[BoundingBox]:
    """Keep boxes at least ``min_w`` wide and ``min_h`` tall (inclusive)."""
    if min_w < 0 or min_h < 0:
        raise ValueError("minimum box size must be non-negative")
    return [b for b in boxes if b.width >= min_w and b.height >= min_h]


def _intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    return max(w, 0.0) * max(h, 0.0)


def descriptor(
    box: BoundingBox,
    view: RenderedView,
    world: World,
    noise: Optional[float] = None,
    seed: int = 0,
) -> np.ndarray:
    """Frozen feature of ``box``.

    Objects with visible points inside the box contribute ``latent + view offset``
    weighted by their point counts; the covered share of the box (union of their
    visible extents clipped to the box, capped at 1) scales that mix against the
    background code. Gaussian noise is added last.
    """
    sigma = world.config.descriptor_noise if noise is None else noise
    uv = view.pixels
    inside = (
        (uv[:, 0] >= box.xmin) & (uv[:, 0] <= box.xmax)
        & (uv[:, 1] >= box.ymin) & (uv[:, 1] <= box.ymax)
    )
    objects, counts = np.unique(view.owners[inside], return_counts=True)

    feature = np.zeros_like(world.background)
    covered = 0.0
    if objects.size:
        weights = counts / counts.sum()
        for obj_index, weight in zip(objects.tolist(), weights):
            obj = world.objects[obj_index]
            feature += weight * (obj.latent + view_offset(world, view.view_buckets[obj_index]))
            extent = view.tight_boxes.get(obj_index)
            if extent is not None:
                covered += _intersection_area(box, extent)
    kappa = min(1.0, covered / box.area)
    feature = kappa * feature + (1.0 - kappa) * world.background
    if sigma > 0:
        feature = feature + np.random.default_rng(seed).normal(0.0, sigma, size=feature.shape)
    return feature


def _jittered(box: BoundingBox, sigma: float, view: RenderedView, rng: np.random.Generator) -> Optional[BoundingBox]:
    corners = box.as_array()
    if sigma > 0:
        corners = corners + rng.normal(0.0, sigma, size=4)
    xs = sorted((corners[0], corners[2]))
    ys = sorted((corners[1], corners[3]))
    return clip_box((xs[0], ys[0], xs[1], ys[1]), view.frame.intrinsics)


def _false_positive(view: RenderedView, world: World, rng: np.random.Generator) -> Optional[BoundingBox]:
    K = view.frame.intrinsics
    min_w, min_h = world.config.min_box_size
    extents = [b.as_array() for b in view.tight_boxes.values()]
    occupied = np.stack(extents) if extents else None
    for _ in range(_FP_TRIES):
        w = rng.uniform(max(min_w, 1.0), max(min_w, 1.0, K.width / 3.0))
        h = rng.uniform(max(min_h, 1.0), max(min_h, 1.0, K.height / 3.0))
        x = rng.uniform(0.0, max(K.width - w, 0.0))
        y = rng.uniform(0.0, max(K.height - h, 0.0))
        box = clip_box((x, y, x + w, y + h), K)
        if box is None:
            continue
        if occupied is None or not np.any(iou_matrix(box.as_array(), occupied) > 0):
            return box
    return None


def generate_proposals(view: RenderedView, world: World, seed: int) -> List[Proposal]:
    """Sample proposals for a rendered frame and attach descriptors and gt labels.

    Each ground-truth box yields a jittered proposal with its category's recall;
    a Poisson number of false positives is drawn over background; class-agnostic
    NMS runs on objectness scores. Jittered boxes below the minimum size are
    dropped like the ground truth they came from.
    """
    config = world.config
    rng = np.random.default_rng(seed)
    recall = {c.name: c.recall for c in config.categories}
    category = {o.instance_id: o.category for o in world.objects}
    min_w, min_h = config.min_box_size

    boxes: List[BoundingBox] = []
    scores: List[float] = []
    for gt in view.frame.gt_boxes:
        if rng.random() >= recall[category[gt.instance_id]]:
            continue
        box = _jittered(gt.box, config.box_jitter, view, rng)
        if box is not None and size_filter([box], min_w, min_h):
            boxes.append(box)
            scores.append(float(rng.uniform(*TRUE_SCORE_RANGE)))

    for _ in range(int(rng.poisson(config.false_positive_rate))):
        box = _false_positive(view, world, rng)
        if box is not None:
            boxes.append(box)
            scores.append(float(rng.uniform(*FALSE_SCORE_RANGE)))

    keep = nms(np.stack([b.as_array() for b in boxes]), scores, config.nms_iou) if boxes else []
    kept = [boxes[i] for i in keep]
    labels = label_proposals_by_gt(kept, view.frame.gt_boxes, 0.5)
    proposals = [
        Proposal(
            frame_id=view.frame.id,
            box=box,
            feature=descriptor(box, view, world, seed=derive_seed(seed, "descriptor", k)),
            gt_label=label,
            score=scores[i],
        )
        for k, (i, box, label) in enumerate(zip(keep, kept, labels))
    ]
    return proposals
