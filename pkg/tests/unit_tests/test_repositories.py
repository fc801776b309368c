import json

import numpy as np
import pytest

from objdisco.errors import DatasetError
from objdisco.metriclearn import LossRecord, init_model
from objdisco.models import BoundingBox, Cluster, Dataset, Detection, Instance, MatchPair, Triplet
from objdisco.repositories import ArtifactRepository, DatasetRepository
from objdisco.repositories.dataset_repository import decode_cloud, encode_cloud

from .conftest import make_frame, plane_scene

INSTANCES = [Instance(1, "can"), Instance(2, "soap")]


def scan_frames():
    frames = plane_scene([0.0, 0.1, -0.2])
    frames[0].gt_boxes = make_frame("x", gt=[((39.0, 39.0, 61.0, 61.0), 1)]).gt_boxes
    frames[1].proposals[0].score = 0.625
    frames.append(make_frame("f9", location_id="f9"))
    return frames


def test_scan_round_trip(tmp_path) -> None:
    repo = DatasetRepository(tmp_path)
    frames = scan_frames()
    repo.write_scan("train", frames, INSTANCES, descriptor_dim=6)
    loaded, instances = repo.read_scan("train")

    assert instances == INSTANCES
    assert [f.id for f in loaded] == sorted(f.id for f in frames)
    by_id = {f.id: f for f in frames}
    for got in loaded:
        want = by_id[got.id]
        assert got.location_id == want.location_id
        assert got.intrinsics == want.intrinsics
        np.testing.assert_allclose(got.pose.R, want.pose.R)
        np.testing.assert_allclose(got.pose.t, want.pose.t)
        np.testing.assert_array_equal(got.cloud.points, want.cloud.points.astype(np.float32))
        assert [p.box for p in got.proposals] == [p.box for p in want.proposals]
        assert [p.gt_label for p in got.proposals] == [p.gt_label for p in want.proposals]
        assert [p.score for p in got.proposals] == [p.score for p in want.proposals]
        for p, q in zip(got.proposals, want.proposals):
            np.testing.assert_array_equal(p.feature, q.feature)
        assert got.gt_boxes == want.gt_boxes


def test_writes_are_byte_identical(tmp_path) -> None:
    frames = scan_frames()
    dataset = Dataset(instances=INSTANCES, scans={"train": frames, "test": frames[:2]})
    DatasetRepository(tmp_path / "a").write_dataset(dataset, 6)
    DatasetRepository(tmp_path / "b").write_dataset(dataset, 6)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    loaded = DatasetRepository(tmp_path / "a").read_dataset()
    assert [f.id for f in loaded.test] == ["f0", "f1"]


def test_missing_scan(tmp_path) -> None:
    repo = DatasetRepository(tmp_path)
    assert not repo.has_scan("train")
    with pytest.raises(DatasetError):
        repo.read_scan("train")


def _manifest(repo: DatasetRepository) -> dict:
    return json.loads(repo.path("train/manifest.json").read_text())


def test_rejects_non_orthonormal_pose(tmp_path) -> None:
    repo = DatasetRepository(tmp_path)
    repo.write_scan("train", scan_frames(), INSTANCES, 6)
    manifest = _manifest(repo)
    manifest["frames"][0]["R"][0] = 1.5
    repo.write_json("train/manifest.json", manifest)
    with pytest.raises(DatasetError):
        repo.read_scan("train")


def test_rejects_duplicate_frame_ids(tmp_path) -> None:
    repo = DatasetRepository(tmp_path)
    repo.write_scan("train", scan_frames(), INSTANCES, 6)
    manifest = _manifest(repo)
    manifest["frames"].append(manifest["frames"][0])
    repo.write_json("train/manifest.json", manifest)
    with pytest.raises(DatasetError):
        repo.read_scan("train")
    with pytest.raises(DatasetError):
        repo.write_scan("dup", [make_frame("a"), make_frame("a")], INSTANCES, 4)


def test_rejects_truncated_cloud(tmp_path) -> None:
    repo = DatasetRepository(tmp_path)
    repo.write_scan("train", scan_frames(), INSTANCES, 6)
    path = repo.path("train/clouds/f0.bin")
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(DatasetError):
        repo.read_scan("train")


def test_rejects_wrong_descriptor_columns(tmp_path) -> None:
    repo = DatasetRepository(tmp_path)
    repo.write_scan("train", scan_frames(), INSTANCES, 6)
    manifest = _manifest(repo)
    manifest["descriptor_dim"] = 7
    repo.write_json("train/manifest.json", manifest)
    with pytest.raises(DatasetError):
        repo.read_scan("train")


def test_cloud_codec() -> None:
    frame = plane_scene([0.0])[0]
    decoded = decode_cloud(encode_cloud(frame.cloud))
    np.testing.assert_array_equal(decoded.points, frame.cloud.points.astype(np.float32))
    with pytest.raises(DatasetError):
        decode_cloud(b"XXXX\x00\x00\x00\x00")


def test_stage_bookkeeping(tmp_path) -> None:
    repo = ArtifactRepository(tmp_path)
    assert repo.stage_key("associate") is None
    repo.mark_done("associate", "abc", {"matches": 3})
    assert repo.is_fresh("associate", "abc")
    assert not repo.is_fresh("associate", "abd")
    assert repo.read_json("associate/stage.json")["summary"] == {"matches": 3}


def test_match_and_triplet_files(tmp_path) -> None:
    repo = ArtifactRepository(tmp_path)
    matches = [MatchPair(("r00c00_o0", 0), ("r00c01_o1", 3), 0.4375), MatchPair(("a", 2), ("b", 1), 0.1)]
    triplets = [Triplet(("a", 2), ("b", 1), ("a", 0))]
    repo.write_matches(matches)
    repo.write_triplets(triplets)
    assert repo.read_matches() == matches
    assert repo.read_triplets() == triplets
    assert repo.read_text("associate/matches.tsv").splitlines()[0] == "# frame_a\tindex_a\tframe_b\tindex_b\tiou"

    repo.write_matches([])
    assert repo.read_matches() == []


def test_model_and_trace_files(tmp_path) -> None:
    repo = ArtifactRepository(tmp_path)
    model = init_model(6, seed=2, output_dim=5)
    repo.write_model(model)
    loaded = repo.read_model()
    np.testing.assert_array_equal(loaded.W, model.W)
    np.testing.assert_array_equal(loaded.b, model.b)

    trace = [LossRecord(0, 1e-4, 3.25, 12), LossRecord(2, 1e-4 * 0.94, 0.1 + 0.2, 7)]
    repo.write_loss_trace(trace)
    assert repo.read_loss_trace() == trace

    repo.write_bytes("train/model.bin", repo.read_bytes("train/model.bin")[:-8])
    with pytest.raises(DatasetError):
        repo.read_model()


def test_embeddings_and_clusters(tmp_path) -> None:
    repo = ArtifactRepository(tmp_path)
    values = np.random.default_rng(0).normal(size=(4, 3))
    repo.write_embeddings("train_embedded", values)
    np.testing.assert_array_equal(repo.read_embeddings("train_embedded"), values)

    refs = [("a", 0), ("a", 1), ("b", 0), ("b", 1)]
    clusters = [Cluster(0, values[[0, 2]].mean(axis=0), [0, 2]), Cluster(1, values[[1, 3]].mean(axis=0), [1, 3])]
    repo.write_clusters(clusters, refs)
    loaded = repo.read_clusters(refs, values)
    assert [(c.id, c.members) for c in loaded] == [(0, [0, 2]), (1, [1, 3])]
    np.testing.assert_allclose(loaded[0].mode, clusters[0].mode)
    with pytest.raises(DatasetError):
        repo.read_clusters(refs[:2], values)


def test_detection_runs(tmp_path) -> None:
    repo = ArtifactRepository(tmp_path)
    dets = [Detection("r01c02_o3", BoundingBox(1.5, 2.0, 30.25, 40.0), 4, 1.7), Detection("x", BoundingBox(0, 0, 1, 1), 1, 0.0)]
    repo.write_detection_runs([("ssod-dist", "5", 0, dets), ("cluster-labeled", "-", 0, dets[:1])])
    runs = repo.read_detection_runs()
    assert runs[("ssod-dist", "5", 0)] == dets
    assert runs[("cluster-labeled", "-", 0)] == dets[:1]
