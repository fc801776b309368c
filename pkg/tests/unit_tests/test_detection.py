import itertools

import numpy as np
import pytest

from objdisco.detection import (
    aggregate_trials,
    average_precision,
    cluster_labeled_detector,
    detect_frames,
    evaluate_detections,
    few_shot_sample,
    knn_detect,
    mean_ap,
    mean_ap_over_environments,
)
from objdisco.errors import EmptyLabeledSetError
from objdisco.models import BoundingBox, Cluster, Detection, Instance, LabeledSet

from .conftest import make_frame

BOX = BoundingBox(0, 0, 10, 10)


def unit(*v: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_knn_exact_match_scores_two() -> None:
    labeled = LabeledSet(np.stack([unit(1, 0), unit(0, 1)]), [3, 4])
    (det,) = knn_detect(labeled, unit(0, 1)[None], ["f"], [BOX])
    assert det.label == 4
    assert det.score == pytest.approx(2.0)


def test_knn_antipodal_scores_zero() -> None:
    labeled = LabeledSet(unit(1, 0, 0)[None], [8])
    (det,) = knn_detect(labeled, unit(-1, 0, 0)[None], ["f"], [BOX])
    assert det.label == 8
    assert det.score == pytest.approx(0.0)


def test_knn_nearest_label_and_score() -> None:
    query = np.array([1.0, 0.0, 0.0])
    labeled = LabeledSet(np.array([[1.0, 0.4, 0.0], [1.0, 0.0, 0.3]]), [1, 2])
    (det,) = knn_detect(labeled, query[None], ["f"], [BOX])
    assert det.label == 2
    assert det.score == pytest.approx(1.7)


def test_knn_ties_go_to_first_entry() -> None:
    labeled = LabeledSet(np.stack([unit(1, 0), unit(1, 0)]), [5, 6])
    (det,) = knn_detect(labeled, unit(1, 0)[None], ["f"], [BOX])
    assert det.label == 5


def test_knn_background_threshold() -> None:
    labeled = LabeledSet(unit(1, 0)[None], [1])
    queries = np.stack([unit(1, 0), unit(-1, 0)])
    dets = knn_detect(labeled, queries, ["f", "f"], [BOX, BOX], background_threshold=1.0)
    assert [d.score for d in dets] == [pytest.approx(2.0)]


def test_knn_requires_labeled_examples() -> None:
    with pytest.raises(EmptyLabeledSetError):
        knn_detect(LabeledSet(np.zeros((0, 2)), []), unit(1, 0)[None], ["f"], [BOX])


def test_adding_entries_never_lowers_scores() -> None:
    rng = np.random.default_rng(0)
    queries = rng.normal(size=(15, 4))
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    base = rng.normal(size=(3, 4))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    extra = np.vstack([base, queries[:2] * -1])
    ids, boxes = ["f"] * 15, [BOX] * 15
    before = knn_detect(LabeledSet(base, [0, 1, 2]), queries, ids, boxes)
    after = knn_detect(LabeledSet(extra, [0, 1, 2, 3, 4]), queries, ids, boxes)
    assert all(a.score >= b.score - 1e-12 for a, b in zip(after, before))


def test_cluster_labeled_detector() -> None:
    embeddings = np.eye(12)
    clusters = [Cluster(0, np.zeros(12), list(range(8))), Cluster(1, np.zeros(12), [8, 9, 10, 11])]
    labeled = cluster_labeled_detector(clusters, {0: 42}, embeddings)
    assert len(labeled) == 8
    assert set(labeled.labels.tolist()) == {42}
    with pytest.raises(EmptyLabeledSetError):
        cluster_labeled_detector(clusters, {}, embeddings)


def test_few_shot_sample() -> None:
    labels = [c for c in range(10) for _ in range(4)] + [None, None]
    embeddings = np.random.default_rng(1).normal(size=(42, 3))
    one = few_shot_sample(labels, embeddings, 1, seed=3)
    assert len(one) == 10
    assert sorted(one.labels.tolist()) == list(range(10))
    again = few_shot_sample(labels, embeddings, 1, seed=3)
    np.testing.assert_array_equal(one.embeddings, again.embeddings)
    everything = few_shot_sample(labels, embeddings, 9, seed=3)
    assert len(everything) == 40
    assert len(few_shot_sample(labels, embeddings, None, seed=0)) == 40


def test_few_shot_notes_missing_classes() -> None:
    sample = few_shot_sample([1, 1, 2], np.eye(3), 1, seed=0, classes=[1, 2, 7])
    assert sample.missing_classes == (7,)
    assert sorted(sample.labels.tolist()) == [1, 2]


def _det(frame: str, box, score: float) -> Detection:
    return Detection(frame, BoundingBox(*box), 1, score)


def test_ap_single_exact_detection() -> None:
    gt = {"f": [BoundingBox(0, 0, 10, 10)]}
    assert average_precision([_det("f", (0, 0, 10, 10), 1.0)], gt) == 1.0


def test_ap_without_detections_or_gt() -> None:
    assert average_precision([], {"f": [BOX]}) == 0.0
    assert average_precision([_det("f", (0, 0, 10, 10), 1.0)], {}) is None


def test_ap_staircase() -> None:
    gt = {"f": [BoundingBox(0, 0, 10, 10), BoundingBox(50, 50, 60, 60)]}
    dets = [
        _det("f", (0, 0, 10, 10), 0.9),
        _det("f", (20, 20, 30, 30), 0.8),
        _det("f", (50, 50, 60, 60), 0.7),
    ]
    assert average_precision(dets, gt) == pytest.approx(5 / 6)


def test_duplicate_detection_is_false_positive() -> None:
    gt = {"f": [BoundingBox(0, 0, 10, 10)]}
    dets = [_det("f", (0, 0, 10, 10), 0.9), _det("f", (0, 0, 10, 10), 0.8)]
    assert average_precision(dets, gt) == pytest.approx(1.0)
    dets = [_det("f", (0, 0, 10, 10), 0.8), _det("g", (0, 0, 10, 10), 0.9)]
    assert average_precision(dets, gt) == pytest.approx(0.5)


def _brute_force_ap(dets, gt, iou_th=0.5) -> float:
    """Area under the precision envelope, evaluated at every score-order prefix."""
    from objdisco.geometry import iou

    n_gt = sum(len(v) for v in gt.values())
    order = sorted(dets, key=lambda d: -d.score)
    used = set()
    points = []
    tp = 0
    for k, det in enumerate(order, start=1):
        candidates = [
            (iou(det.box, g), j) for j, g in enumerate(gt.get(det.frame_id, [])) if (det.frame_id, j) not in used
        ]
        if candidates:
            best, j = max(candidates, key=lambda c: (c[0], -c[1]))
            if best >= iou_th:
                used.add((det.frame_id, j))
                tp += 1
        points.append((tp / n_gt, tp / k))
    area = 0.0
    prev_recall = 0.0
    for r in sorted({r for r, _ in points}):
        if r == 0:
            continue
        best_precision = max(p for rr, p in points if rr >= r)
        area += (r - prev_recall) * best_precision
        prev_recall = r
    return area


def test_ap_matches_brute_force() -> None:
    rng = np.random.default_rng(6)
    for _ in range(40):
        n_gt = int(rng.integers(1, 4))
        gt_boxes = [BoundingBox(30.0 * j, 0, 30.0 * j + 20, 20) for j in range(n_gt)]
        gt = {"f": gt_boxes}
        dets = []
        for _ in range(int(rng.integers(1, 7))):
            j = int(rng.integers(0, 4))
            dx = float(rng.uniform(-8, 8))
            dets.append(_det("f", (30.0 * j + dx, 0, 30.0 * j + 20 + dx, 20), float(rng.uniform())))
        assert average_precision(dets, gt) == pytest.approx(_brute_force_ap(dets, gt))


def test_mean_ap() -> None:
    assert mean_ap({3: 0.4}) == pytest.approx(0.4)
    assert mean_ap({1: 1.0, 2: 0.0, 3: None}) == pytest.approx(0.5)
    aps = [0.1, 0.7, 0.25, 0.9]
    for perm in itertools.permutations(aps):
        assert mean_ap(perm) == pytest.approx(np.mean(aps))
    with pytest.raises(ValueError):
        mean_ap({1: None})


def test_detect_frames_applies_nms() -> None:
    frame = make_frame(
        "f",
        [(0, 0, 10, 10), (0, 0, 10, 9.8), (40, 40, 60, 60)],
        features=np.eye(3),
    )
    frame.proposals[0].score = 0.9
    frame.proposals[1].score = 0.5
    labeled = LabeledSet(np.eye(3)[[0, 2]], [1, 2])
    dets = detect_frames(labeled, [frame], np.eye(3), nms_iou=0.7)
    assert [(d.box, d.label) for d in dets] == [
        (BoundingBox(0, 0, 10, 10), 1),
        (BoundingBox(40, 40, 60, 60), 2),
    ]


def test_evaluate_and_aggregate() -> None:
    frame = make_frame("f", gt=[((0, 0, 10, 10), 1), ((50, 50, 60, 60), 2)])
    instances = [Instance(1, "can"), Instance(2, "soap"), Instance(3, "soap")]
    perfect = [
        Detection("f", BoundingBox(0, 0, 10, 10), 1, 2.0),
        Detection("f", BoundingBox(50, 50, 60, 60), 2, 2.0),
    ]
    good = evaluate_detections("m", perfect, [frame], instances, shots="1")
    assert good.mean_ap == pytest.approx(1.0)
    assert [r.ap for r in good.per_instance] == [1.0, 1.0, None]
    assert good.per_category == {"can": 1.0, "soap": 1.0}

    half = evaluate_detections("m", perfect[:1], [frame], instances, rollup_exclude=["can"], shots="1")
    assert half.mean_ap == pytest.approx(0.5)
    assert half.per_category == {"soap": 0.0}

    combined = aggregate_trials([good, half])
    assert combined.mean_ap == pytest.approx(0.75)
    assert [r.ap for r in combined.per_instance] == [1.0, 0.5, None]


def test_mean_ap_over_environments() -> None:
    envs = [{1: 1.0, 2: 0.0}, {1: 0.25, 2: None}]
    assert mean_ap_over_environments(envs) == pytest.approx((0.5 + 0.25) / 2)
    with pytest.raises(ValueError):
        mean_ap_over_environments([])
