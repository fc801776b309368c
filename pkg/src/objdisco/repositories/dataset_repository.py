"""Dataset repository.

On-disk layout, one directory per scan::

    <root>/<scan>/manifest.json
    <root>/<scan>/clouds/<frame_id>.bin      magic, count, little-endian float32 xyz
    <root>/<scan>/proposals/<frame_id>.csv   index, box, score, gt_label, f0..f{d-1}
    <root>/<scan>/gt/<frame_id>.csv          instance_id, box
"""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from objdisco.config import FORMAT_VERSION
from objdisco.errors import DatasetError, InvalidPoseError
from objdisco.models.domain import (
    BoundingBox,
    CameraPose,
    Dataset,
    Frame,
    GroundTruthBox,
    Instance,
    Intrinsics,
    PointCloud,
    Proposal,
)

from .base import BaseRepository

logger = logging.getLogger(__name__)

CLOUD_MAGIC = b"ODPC"
LOAD_POSE_TOLERANCE = 1e-6
BOX_COLUMNS = ["xmin", "ymin", "xmax", "ymax"]
GT_COLUMNS = ["instance_id", *BOX_COLUMNS]


def proposal_columns(dim: int) -> List[str]:
    """Header of a proposal table with ``dim`` feature columns."""
    return ["index", *BOX_COLUMNS, "score", "gt_label", *(f"f{i}" for i in range(dim))]


def encode_cloud(cloud: PointCloud) -> bytes:
    """Magic and point count, then the little-endian float32 ``(N, 3)`` points."""
    header = CLOUD_MAGIC + np.array([len(cloud)], dtype="<u4").tobytes()
    return header + cloud.points.astype("<f4").tobytes()


def decode_cloud(data: bytes, name: str = "cloud") -> PointCloud:
    """Inverse of :func:`encode_cloud`; a size mismatch is a :class:`DatasetError`."""
    if len(data) < 8 or data[:4] != CLOUD_MAGIC:
        raise DatasetError(f"{name}: not a point cloud file")
    count = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    if len(data) != 8 + 12 * count:
        raise DatasetError(f"{name}: header says {count} points, payload has {(len(data) - 8) / 12:g}")
    points = np.frombuffer(data[8:], dtype="<f4").astype(np.float64).reshape(count, 3)
    return PointCloud(points)


class DatasetRepository(BaseRepository):
    """Dataset access layer."""

    def has_scan(self, scan: str) -> bool:
        """Whether the scan's manifest exists."""
        return self.exists(f"{scan}/manifest.json")

    def write_scan(
        self, scan: str, frames: Sequence[Frame], instances: Sequence[Instance], descriptor_dim: int
    ) -> None:
        """Write one scan: manifest plus per-frame cloud, proposal and gt files."""
        if len({f.id for f in frames}) != len(frames):
            raise DatasetError(f"scan {scan!r} has duplicate frame ids")
        intrinsics = frames[0].intrinsics if frames else None
        records: List[Dict[str, Any]] = []
        for frame in sorted(frames, key=lambda f: f.id):
            if frame.intrinsics != intrinsics:
                raise DatasetError(f"frame {frame.id} does not share the scan intrinsics")
            record = {
                "frame_id": frame.id,
                "location_id": frame.location_id,
                "R": [float(v) for v in frame.pose.R.reshape(-1)],
                "t": [float(v) for v in frame.pose.t],
                "cloud": f"clouds/{frame.id}.bin",
                "proposals": f"proposals/{frame.id}.csv",
                "gt": f"gt/{frame.id}.csv",
            }
            self.write_bytes(f"{scan}/{record['cloud']}", encode_cloud(frame.cloud))
            self.write_table(f"{scan}/{record['proposals']}", self._proposal_table(frame, descriptor_dim))
            self.write_table(f"{scan}/{record['gt']}", self._gt_table(frame))
            records.append(record)

        manifest = {
            "version": FORMAT_VERSION,
            "scan": scan,
            "descriptor_dim": descriptor_dim,
            "intrinsics": None if intrinsics is None else {
                "fx": intrinsics.fx,
                "fy": intrinsics.fy,
                "cx": intrinsics.cx,
                "cy": intrinsics.cy,
                "width": intrinsics.width,
                "height": intrinsics.height,
            },
            "instances": [
                {"instance_id": i.instance_id, "category": i.category}
                for i in sorted(instances, key=lambda i: i.instance_id)
            ],
            "frames": records,
        }
        self.write_json(f"{scan}/manifest.json", manifest)
        logger.info("dataset write scan=%s frames=%d root=%s", scan, len(records), self.root)

    def write_dataset(self, dataset: Dataset, descriptor_dim: int) -> None:
        """Write every scan: manifest, clouds, proposals and ground truth."""
        for scan, frames in sorted(dataset.scans.items()):
            self.write_scan(scan, frames, dataset.instances, descriptor_dim)

    def read_scan(self, scan: str) -> tuple[List[Frame], List[Instance]]:
        """Read one scan back.

        Raises:
            DatasetError: On missing files, wrong versions, duplicate frame ids,
                malformed tables or non-orthonormal poses.
        """
        manifest = self.read_json(f"{scan}/manifest.json")
        try:
            if manifest["version"] != FORMAT_VERSION:
                raise DatasetError(f"scan {scan!r}: unsupported format version {manifest['version']}")
            dim = int(manifest["descriptor_dim"])
            instances = [Instance(int(i["instance_id"]), str(i["category"])) for i in manifest["instances"]]
            records = manifest["frames"]
            intrinsics = Intrinsics(**manifest["intrinsics"]) if records else None
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, DatasetError):
                raise
            raise DatasetError(f"scan {scan!r}: malformed manifest: {e}") from e

        ids = [r.get("frame_id") for r in records]
        if len(set(ids)) != len(ids):
            raise DatasetError(f"scan {scan!r}: duplicate frame ids in manifest")

        frames = []
        for record in records:
            frame_id = record["frame_id"]
            try:
                pose = CameraPose(
                    np.asarray(record["R"], dtype=np.float64).reshape(3, 3),
                    np.asarray(record["t"], dtype=np.float64),
                    tolerance=LOAD_POSE_TOLERANCE,
                )
            except (InvalidPoseError, ValueError) as e:
                raise DatasetError(f"frame {frame_id}: invalid pose: {e}") from e
            cloud = decode_cloud(self.read_bytes(f"{scan}/{record['cloud']}"), record["cloud"])
            proposals = self._read_proposals(f"{scan}/{record['proposals']}", frame_id, dim)
            gt_boxes = self._read_gt(f"{scan}/{record['gt']}")
            frames.append(
                Frame(
                    id=frame_id,
                    location_id=record["location_id"],
                    pose=pose,
                    intrinsics=intrinsics,
                    cloud=cloud,
                    proposals=proposals,
                    gt_boxes=gt_boxes,
                )
            )
        logger.debug("dataset read scan=%s frames=%d", scan, len(frames))
        return frames, instances

    def read_dataset(self, scans: Sequence[str] = ("train", "test")) -> Dataset:
        """Read the requested scans; instances come from the last one read."""
        instances: List[Instance] = []
        loaded: Dict[str, List[Frame]] = {}
        for scan in scans:
            frames, instances = self.read_scan(scan)
            loaded[scan] = frames
        return Dataset(instances=instances, scans=loaded)

    def _proposal_table(self, frame: Frame, dim: int) -> pd.DataFrame:
        columns = proposal_columns(dim)
        if not frame.proposals:
            table = pd.DataFrame({c: pd.Series(dtype="float64") for c in columns})
            table["index"] = table["index"].astype("int64")
            table["gt_label"] = table["gt_label"].astype("Int64")
            return table
        boxes = frame.proposal_boxes()
        features = np.stack([p.feature for p in frame.proposals])
        if features.shape[1] != dim:
            raise DatasetError(f"frame {frame.id}: descriptors have dimension {features.shape[1]}, expected {dim}")
        table = pd.DataFrame(
            {
                "index": np.arange(len(frame.proposals), dtype=np.int64),
                **{c: boxes[:, k] for k, c in enumerate(BOX_COLUMNS)},
                "score": [p.score for p in frame.proposals],
                "gt_label": pd.array([p.gt_label for p in frame.proposals], dtype="Int64"),
                **{f"f{i}": features[:, i] for i in range(dim)},
            }
        )
        return table[columns]

    def _gt_table(self, frame: Frame) -> pd.DataFrame:
        boxes, ids = frame.gt_arrays()
        return pd.DataFrame(
            {"instance_id": ids, **{c: boxes[:, k] for k, c in enumerate(BOX_COLUMNS)}}
        )[GT_COLUMNS]

    def _read_proposals(self, relative: str, frame_id: str, dim: int) -> List[Proposal]:
        table = self.read_table(relative, proposal_columns(dim), dtype={"gt_label": "Int64"})
        if list(table["index"]) != list(range(len(table))):
            raise DatasetError(f"{relative}: proposal indices must be 0..N-1 in order")
        boxes = table[BOX_COLUMNS].to_numpy(dtype=np.float64)
        features = table[[f"f{i}" for i in range(dim)]].to_numpy(dtype=np.float64)
        proposals = []
        for k in range(len(table)):
            label = table["gt_label"].iloc[k]
            try:
                box = BoundingBox.from_array(boxes[k])
            except ValueError as e:
                raise DatasetError(f"{relative} row {k}: {e}") from e
            proposals.append(
                Proposal(
                    frame_id=frame_id,
                    box=box,
                    feature=features[k],
                    gt_label=None if pd.isna(label) else int(label),
                    score=float(table["score"].iloc[k]),
                )
            )
        return proposals

    def _read_gt(self, relative: str) -> List[GroundTruthBox]:
        table = self.read_table(relative, GT_COLUMNS)
        boxes = table[BOX_COLUMNS].to_numpy(dtype=np.float64)
        try:
            return [
                GroundTruthBox(BoundingBox.from_array(boxes[k]), int(table["instance_id"].iloc[k]))
                for k in range(len(table))
            ]
        except ValueError as e:
            raise DatasetError(f"{relative}: {e}") from e
