import itertools

import numpy as np
import pytest

from objdisco.config import DiscoveryConfig
from objdisco.discovery import (
    best_bandwidth,
    converge_modes,
    discovery_pr,
    filter_clusters,
    label_clusters_by_majority,
    label_frames,
    label_proposals_by_gt,
    mean_shift,
    sweep_bandwidths,
)
from objdisco.models import BoundingBox, Cluster, GroundTruthBox
from objdisco.models.reports import DiscoveryReport

from .conftest import make_frame


def _cluster(cid: int, members) -> Cluster:
    return Cluster(id=cid, mode=np.zeros(1), members=list(members))


def test_two_separated_pairs() -> None:
    clusters = mean_shift(np.array([0.0, 0.1, 5.0, 5.1]), bandwidth=1.0)
    assert len(clusters) == 2
    assert clusters[0].members == [0, 1]
    assert clusters[1].members == [2, 3]
    assert clusters[0].mode[0] == pytest.approx(0.05)
    assert clusters[1].mode[0] == pytest.approx(5.05)


def test_identical_points_form_one_cluster() -> None:
    X = np.tile([0.3, -0.2, 0.9], (6, 1))
    clusters = mean_shift(X, bandwidth=0.5)
    assert len(clusters) == 1
    np.testing.assert_allclose(clusters[0].mode, X[0])


def test_wide_bandwidth_gives_single_basin() -> None:
    X = np.random.default_rng(0).uniform(-1, 1, size=(25, 3))
    clusters = mean_shift(X, bandwidth=10.0)
    assert len(clusters) == 1
    assert clusters[0].members == list(range(25))


def test_tiny_bandwidth_gives_one_cluster_per_point() -> None:
    X = np.random.default_rng(1).uniform(-1, 1, size=(12, 2))
    assert len(mean_shift(X, bandwidth=1e-6)) == 12


def test_empty_input() -> None:
    assert mean_shift(np.zeros((0, 4)), bandwidth=0.5) == []


def test_partition_covers_every_point() -> None:
    X = np.random.default_rng(2).normal(size=(40, 3))
    clusters = mean_shift(X, bandwidth=0.8)
    members = sorted(m for c in clusters for m in c.members)
    assert members == list(range(40))


@pytest.mark.parametrize("kernel", ["flat", "gaussian"])
def test_modes_match_brute_force_iteration(kernel) -> None:
    X = np.random.default_rng(3).normal(size=(20, 3))
    bandwidth = 1.2
    config = DiscoveryConfig(kernel=kernel, tolerance=1e-9, max_iter=2000)
    modes = converge_modes(X, bandwidth, config)
    for start, mode in zip(X, modes):
        y = start.copy()
        for _ in range(2000):
            d = np.linalg.norm(X - y, axis=1)
            w = (d <= bandwidth).astype(float) if kernel == "flat" else np.exp(-0.5 * (d / bandwidth) ** 2)
            nxt = w @ X / w.sum()
            if np.linalg.norm(nxt - y) < 1e-12:
                break
            y = nxt
        np.testing.assert_allclose(mode, y, atol=1e-3)


def test_filter_clusters() -> None:
    clusters = [_cluster(0, range(3)), _cluster(1, range(8)), _cluster(2, range(20))]
    assert filter_clusters(clusters, 1) == clusters
    assert [c.id for c in filter_clusters(clusters, 8)] == [1, 2]
    assert filter_clusters(clusters, 21) == []
    with pytest.raises(ValueError):
        filter_clusters(clusters, 0)


def test_label_proposals_by_gt() -> None:
    gt = [
        GroundTruthBox(BoundingBox(0, 0, 5.5, 10), 7),
        GroundTruthBox(BoundingBox(0, 0, 6, 10), 9),
        GroundTruthBox(BoundingBox(100, 100, 110, 110), 3),
    ]
    proposals = [
        BoundingBox(100, 100, 110, 110),
        BoundingBox(50, 50, 60, 60),
        # IoU 0.55 with instance 7 and 0.6 with instance 9
        BoundingBox(0, 0, 10, 10),
    ]
    assert label_proposals_by_gt(proposals, gt, 0.5) == [3, None, 9]
    assert label_proposals_by_gt(proposals, [], 0.5) == [None, None, None]


def test_label_frames_relabels_at_the_given_iou() -> None:
    b = make_frame("b", [(0, 0, 10, 10)], gt=[((0, 0, 10, 10), 7)])
    # Stored labels are None; (0, 0, 10, 12) overlaps instance 3 by 5/6.
    a = make_frame("a", [(0, 0, 10, 10), (0, 0, 10, 12), (50, 50, 60, 60)], gt=[((0, 0, 10, 10), 3)])
    assert label_frames([b, a], 0.5) == [3, 3, None, 7]
    assert label_frames([b, a], 0.9) == [3, None, None, 7]


def test_perfect_cluster_scores_one() -> None:
    report = discovery_pr([_cluster(0, range(10))], [4] * 10)
    assert report.avg_precision == 1.0
    assert report.avg_recall == 1.0


def test_dominant_cluster_precision_and_recall() -> None:
    # Instance A=1 has 12 proposals: 9 in cluster 0, 3 in cluster 1.
    labels = [1] * 9 + [2] + [1] * 3 + [2] * 7
    clusters = [_cluster(0, range(10)), _cluster(1, range(10, 20))]
    report = discovery_pr(clusters, labels)
    row = next(r for r in report.instances if r.instance_id == 1)
    assert row.dominant_cluster_id == 0
    assert row.precision == pytest.approx(0.9)
    assert row.recall == pytest.approx(0.75)


def test_instance_without_proposals_is_excluded() -> None:
    report = discovery_pr([_cluster(0, range(3))], [1, 1, None], instances=[1, 5])
    assert report.excluded_instances == [5]
    assert [r.instance_id for r in report.instances] == [1]


def test_dominant_tie_prefers_larger_cluster() -> None:
    labels = [1, 1, 1, 1, None, None]
    clusters = [_cluster(0, [0, 1]), _cluster(1, [2, 3, 4, 5])]
    row = discovery_pr(clusters, labels).instances[0]
    assert row.dominant_cluster_id == 1
    assert row.precision == pytest.approx(0.5)


def test_discovery_pr_permutation_invariant() -> None:
    rng = np.random.default_rng(4)
    labels = [int(x) if x < 4 else None for x in rng.integers(0, 5, size=30)]
    members = np.array_split(rng.permutation(30), 5)
    clusters = [_cluster(i, m) for i, m in enumerate(members)]
    base = discovery_pr(clusters, labels)
    for order in itertools.islice(itertools.permutations(clusters), 10):
        other = discovery_pr(list(order), labels)
        assert other.avg_precision == pytest.approx(base.avg_precision)
        assert other.avg_recall == pytest.approx(base.avg_recall)


def test_sweep_reports_every_bandwidth() -> None:
    rng = np.random.default_rng(5)
    blobs = np.vstack([rng.normal(c, 0.05, size=(10, 2)) for c in (0.0, 3.0)])
    labels = [1] * 10 + [2] * 10
    config = DiscoveryConfig(bandwidths=[0.5, 1.0], min_cluster_size=5)
    reports = sweep_bandwidths(blobs, labels, config)
    assert [r.bandwidth for r in reports] == [0.5, 1.0]
    assert all(r.n_clusters == 2 for r in reports)
    assert all(r.avg_precision == 1.0 and r.avg_recall == 1.0 for r in reports)
    assert best_bandwidth(reports) == 0.5


def test_best_bandwidth_uses_f1() -> None:
    reports = [
        DiscoveryReport(bandwidth=0.4, n_clusters=9, avg_precision=1.0, avg_recall=0.2),
        DiscoveryReport(bandwidth=0.6, n_clusters=5, avg_precision=0.8, avg_recall=0.7),
        DiscoveryReport(bandwidth=0.8, n_clusters=2, avg_precision=0.3, avg_recall=1.0),
    ]
    assert best_bandwidth(reports) == 0.6


def test_majority_labels() -> None:
    labels = [1, 1, 2, None, 3, 3, 4, 5]
    clusters = [_cluster(0, [0, 1, 2, 3]), _cluster(1, [4, 5, 6, 7]), _cluster(2, [6, 7, 2])]
    assert label_clusters_by_majority(clusters, labels) == {0: 1, 1: 3}
