"""Cross-frame proposal association and triplet mining.

Two proposals in different frames denote the same object when the depth points
of one, carried into the other frame with the known camera poses, produce a box
overlapping the other proposal by at least ``th``. Non-overlapping proposals of the
same frame are different objects, which supplies negatives for free.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from objdisco.geometry import (
    DEFAULT_MIN_POINTS,
    box_support,
    iou_matrix,
    project_support,
)
from objdisco.models.domain import Frame, MatchPair, ProposalRef, Triplet

logger = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLD = 0.1
DEFAULT_SUPPORT_RADIUS = 0.03

Supports = List[Optional[np.ndarray]]


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Which frame pairs are compared.

    Attributes:
        radius: Maximum distance between camera centers, meters.
        adjacency: Optional set of ``(location_id, location_id)`` pairs that may be
            compared; same-location pairs are always allowed.
    """

    radius: float
    adjacency: Optional[FrozenSet[Tuple[str, str]]] = None

    def admits(self, frame_k: Frame, frame_l: Frame) -> bool:
        """Whether the two frames are close enough, and adjacent if required."""
        dist = float(np.linalg.norm(frame_k.pose.center - frame_l.pose.center))
        if dist > self.radius + 1e-9:
            return False
        if self.adjacency is None or frame_k.location_id == frame_l.location_id:
            return True
        pair = (frame_k.location_id, frame_l.location_id)
        return pair in self.adjacency or pair[::-1] in self.adjacency


def proposal_supports(frame: Frame, min_points: int = DEFAULT_MIN_POINTS) -> Supports:
    """World-space depth support of every proposal of ``frame`` (``None`` if too thin)."""
    return [box_support(frame, p.box, min_points) for p in frame.proposals]


def shared_support(a: np.ndarray, b: np.ndarray, radius: float) -> float:
    """Agreement between two world-space depth supports, in [0, 1].

    Returns the larger of the fraction of ``a`` within ``radius`` of some point of
    ``b`` and the fraction of ``b`` within ``radius`` of ``a``, so a proposal cut
    by the image border still agrees with its full view.
    """
    if len(a) == 0 or len(b) == 0:
        return 0.0
    a_in_b = cKDTree(b).query(a, distance_upper_bound=radius)[0] <= radius
    b_in_a = cKDTree(a).query(b, distance_upper_bound=radius)[0] <= radius
    return float(max(a_in_b.mean(), b_in_a.mean()))


def match_frames(
    frame_k: Frame,
    frame_l: Frame,
    th: float = DEFAULT_IOU_THRESHOLD,
    min_points: int = DEFAULT_MIN_POINTS,
    supports_k: Optional[Supports] = None,
    min_shared: float = 0.0,
    support_radius: float = DEFAULT_SUPPORT_RADIUS,
    supports_l: Optional[Supports] = None,
) -> List[MatchPair]:
    """Match proposals of ``frame_k`` to proposals of ``frame_l``.

    Every proposal of ``k`` is reprojected into ``l``; pairs whose IoU reaches ``th``
    are candidates and a greedy pass in descending IoU keeps each proposal at most
    once. Ties go to the lower ``(index_k, index_l)``.

    With ``min_shared > 0`` a candidate also needs its two depth supports to
    describe the same surface: :func:`shared_support` of the pair must reach
    ``min_shared``. A reprojection that only grazes a neighboring object's box
    fails this even when the box overlap passes ``th``.

    Args:
        frame_k: Source frame.
        frame_l: Target frame, distinct from ``frame_k``.
        th: IoU threshold in (0, 1).
        min_points: Minimum depth support of a reprojection.
        supports_k: Precomputed :func:`proposal_supports` of ``frame_k``.
        min_shared: Required support agreement in [0, 1]; 0 disables the check.
        support_radius: Distance in meters at which two world points coincide.
        supports_l: Precomputed :func:`proposal_supports` of ``frame_l``.

    Returns:
        List[MatchPair]: One-to-one matches ordered by descending IoU.
    """
    if frame_k.id == frame_l.id:
        raise ValueError("match_frames needs two distinct frames")
    if not 0.0 < th < 1.0:
        raise ValueError(f"th must lie in (0, 1), got {th}")
    if not 0.0 <= min_shared <= 1.0:
        raise ValueError(f"min_shared must lie in [0, 1], got {min_shared}")
    if not frame_k.proposals or not frame_l.proposals:
        return []
    if frame_k.intrinsics != frame_l.intrinsics:
        raise ValueError("frames must share intrinsics")
    if supports_k is None:
        supports_k = proposal_supports(frame_k, min_points)
    if min_shared > 0 and supports_l is None:
        supports_l = proposal_supports(frame_l, min_points)

    boxes_l = frame_l.proposal_boxes()
    candidates: List[Tuple[float, int, int]] = []
    for i, support in enumerate(supports_k):
        if support is None:
            continue
        moved = project_support(support, frame_l, min_points)
        if moved is None:
            continue
        overlaps = iou_matrix(moved.as_array(), boxes_l)[0]
        for j in np.flatnonzero(overlaps >= th):
            if min_shared > 0:
                other = supports_l[int(j)]
                if other is None or shared_support(support, other, support_radius) < min_shared:
                    continue
            candidates.append((float(overlaps[j]), i, int(j)))

    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_k: set[int] = set()
    used_l: set[int] = set()
    matches: List[MatchPair] = []
    for score, i, j in candidates:
        if i in used_k or j in used_l:
            continue
        used_k.add(i)
        used_l.add(j)
        matches.append(MatchPair((frame_k.id, i), (frame_l.id, j), score))
    return matches


def candidate_pairs(
    frames: Sequence[Frame], neighborhood: NeighborhoodSpec
) -> List[Tuple[Frame, Frame]]:
    """Unordered frame pairs admitted by ``neighborhood``, sorted by frame id."""
    ordered = sorted(frames, key=lambda f: f.id)
    return [(k, l) for k, l in combinations(ordered, 2) if neighborhood.admits(k, l)]


def build_matches(
    dataset: Sequence[Frame],
    neighborhood: NeighborhoodSpec,
    th: float = DEFAULT_IOU_THRESHOLD,
    min_points: int = DEFAULT_MIN_POINTS,
    workers: int = 1,
    min_shared: float = 0.0,
    support_radius: float = DEFAULT_SUPPORT_RADIUS,
) -> List[MatchPair]:
    """Union of :func:`match_frames` over every admitted frame pair.

    Pairs are visited in sorted frame-id order and the output keeps that order, so
    the result does not depend on ``workers``.
    """
    pairs = candidate_pairs(dataset, neighborhood)
    if not pairs:
        return []
    supports: Dict[str, Supports] = {
        f.id: proposal_supports(f, min_points) for f in dataset
    }

    def run(pair: Tuple[Frame, Frame]) -> List[MatchPair]:
        k, l = pair
        return match_frames(
            k,
            l,
            th,
            min_points,
            supports_k=supports[k.id],
            min_shared=min_shared,
            support_radius=support_radius,
            supports_l=supports[l.id],
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(p) for p in pairs]

    matches = [m for chunk in results for m in chunk]
    logger.info("association frame_pairs=%d matches=%d", len(pairs), len(matches))
    return matches


def _disjoint_candidates(frame: Frame) -> List[List[int]]:
    boxes = frame.proposal_boxes()
    overlaps = iou_matrix(boxes, boxes)
    return [
        [j for j in range(len(frame.proposals)) if j != i and overlaps[i, j] == 0.0]
        for i in range(len(frame.proposals))
    ]


def mine_triplets(
    matches: Iterable[MatchPair],
    frames: Mapping[str, Frame] | Sequence[Frame],
    rng_seed: int,
    negatives_per_pair: int = 1,
) -> List[Triplet]:
    """Turn matches into triplets with same-frame, non-overlapping negatives.

    Each match yields up to two anchor/positive orderings; each ordering draws
    ``negatives_per_pair`` distinct negatives uniformly from the anchor frame's
    proposals with IoU exactly 0 against the anchor. Orderings without an eligible
    negative are dropped.
    """
    if not isinstance(frames, Mapping):
        frames = {f.id: f for f in frames}
    rng = np.random.default_rng(rng_seed)
    eligible: Dict[str, List[List[int]]] = {}
    triplets: List[Triplet] = []
    for match in matches:
        for anchor, positive in ((match.a, match.b), (match.b, match.a)):
            frame_id, index = anchor
            if frame_id not in eligible:
                eligible[frame_id] = _disjoint_candidates(frames[frame_id])
            pool = eligible[frame_id][index]
            if not pool:
                continue
            count = min(negatives_per_pair, len(pool))
            picks = rng.choice(len(pool), size=count, replace=False)
            for pick in picks:
                negative: ProposalRef = (frame_id, pool[int(pick)])
                triplets.append(Triplet(anchor, positive, negative))
    return triplets
