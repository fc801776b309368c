"""Artifact repository.

Every pipeline stage owns ``<output>/<stage>/``; its ``stage.json`` records the
cache key the outputs were produced under.
"""

from __future__ import annotations

import io
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from objdisco.config import FORMAT_VERSION
from objdisco.errors import DatasetError
from objdisco.metriclearn import LossRecord
from objdisco.models.domain import (
    BoundingBox,
    Cluster,
    Detection,
    EmbeddingModel,
    MatchPair,
    ProposalRef,
    Triplet,
)
from objdisco.models.reports import FewShotRow, SweepRow

from .base import BaseRepository

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"ODEM"
MATCH_COLUMNS = ["frame_a", "index_a", "frame_b", "index_b", "iou"]
TRIPLET_COLUMNS = [
    "anchor_frame", "anchor_index", "positive_frame", "positive_index", "negative_frame", "negative_index",
]
LOSS_COLUMNS = ["step", "lr_effective", "loss", "triplets_in_batch"]
CLUSTER_COLUMNS = ["cluster_id", "frame_id", "proposal_index"]
SWEEP_COLUMNS = ["bandwidth", "avg_precision", "avg_recall", "n_clusters"]
DETECTION_COLUMNS = ["frame_id", "x1", "y1", "x2", "y2", "label", "score"]
RUN_COLUMNS = ["method", "shots", "trial"]
FEW_SHOT_COLUMNS = ["shots", "embedding_map", "baseline_map"]


def encode_model(model: EmbeddingModel) -> bytes:
    """Magic, format version and both dimensions, then float64 ``W`` and ``b``."""
    header = MODEL_MAGIC + np.array(
        [FORMAT_VERSION, model.input_dim, model.output_dim], dtype="<u4"
    ).tobytes()
    return header + model.W.astype("<f8").tobytes() + model.b.astype("<f8").tobytes()


def decode_model(data: bytes) -> EmbeddingModel:
    """Inverse of :func:`encode_model`."""
    if len(data) < 16 or data[:4] != MODEL_MAGIC:
        raise DatasetError("not an embedding model file")
    version, d, dim = (int(v) for v in np.frombuffer(data[4:16], dtype="<u4"))
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported model format version {version}")
    if len(data) != 16 + 8 * (dim * d + dim):
        raise DatasetError("model file is truncated")
    values = np.frombuffer(data[16:], dtype="<f8").astype(np.float64)
    return EmbeddingModel(values[: dim * d].reshape(dim, d), values[dim * d:])


class ArtifactRepository(BaseRepository):
    """Stage artifact access layer."""

    # Stage bookkeeping

    def stage_key(self, stage: str) -> Optional[str]:
        """Cache key recorded by the stage's last run, if any."""
        if not self.exists(f"{stage}/stage.json"):
            return None
        try:
            return self.read_json(f"{stage}/stage.json").get("key")
        except DatasetError:
            return None

    def is_fresh(self, stage: str, key: str) -> bool:
        """Whether the stage last ran with ``key``."""
        return self.stage_key(stage) == key

    def mark_done(self, stage: str, key: str, summary: Optional[Dict[str, Any]] = None) -> None:
        """Record the stage's cache key and summary in ``stage.json``."""
        self.write_json(
            f"{stage}/stage.json",
            {"stage": stage, "key": key, "format_version": FORMAT_VERSION, "summary": summary or {}},
        )

    # Association

    def write_matches(self, matches: Sequence[MatchPair]) -> None:
        """Write ``associate/matches.tsv``."""
        rows = [(m.a[0], m.a[1], m.b[0], m.b[1], m.iou_score) for m in matches]
        self._write_tsv("associate/matches.tsv", pd.DataFrame(rows, columns=MATCH_COLUMNS))

    def read_matches(self) -> List[MatchPair]:
        """Read ``associate/matches.tsv``."""
        table = self._read_tsv("associate/matches.tsv", MATCH_COLUMNS)
        return [
            MatchPair((r.frame_a, int(r.index_a)), (r.frame_b, int(r.index_b)), float(r.iou))
            for r in table.itertuples(index=False)
        ]

    def write_triplets(self, triplets: Sequence[Triplet]) -> None:
        """Write ``mine/triplets.tsv``."""
        rows = [(*t.anchor, *t.positive, *t.negative) for t in triplets]
        self._write_tsv("mine/triplets.tsv", pd.DataFrame(rows, columns=TRIPLET_COLUMNS))

    def read_triplets(self) -> List[Triplet]:
        """Read ``mine/triplets.tsv``."""
        table = self._read_tsv("mine/triplets.tsv", TRIPLET_COLUMNS)
        return [
            Triplet(
                (r.anchor_frame, int(r.anchor_index)),
                (r.positive_frame, int(r.positive_index)),
                (r.negative_frame, int(r.negative_index)),
            )
            for r in table.itertuples(index=False)
        ]

    # Training

    def write_model(self, model: EmbeddingModel) -> None:
        """Write ``train/model.bin``."""
        self.write_bytes("train/model.bin", encode_model(model))

    def read_model(self) -> EmbeddingModel:
        """Read ``train/model.bin``."""
        return decode_model(self.read_bytes("train/model.bin"))

    def write_loss_trace(self, trace: Sequence[LossRecord]) -> None:
        """Write ``train/loss_trace.csv``."""
        rows = [(r.step, r.lr_effective, r.loss, r.triplets_in_batch) for r in trace]
        self.write_table("train/loss_trace.csv", pd.DataFrame(rows, columns=LOSS_COLUMNS))

    def read_loss_trace(self) -> List[LossRecord]:
        """Read ``train/loss_trace.csv``."""
        table = self.read_table("train/loss_trace.csv", LOSS_COLUMNS)
        return [
            LossRecord(int(r.step), float(r.lr_effective), float(r.loss), int(r.triplets_in_batch))
            for r in table.itertuples(index=False)
        ]

    # Embeddings

    def write_embeddings(self, name: str, values: np.ndarray) -> None:
        """Write ``embed/<name>.npy``."""
        buffer = io.BytesIO()
        np.save(buffer, np.ascontiguousarray(values, dtype="<f8"), allow_pickle=False)
        self.write_bytes(f"embed/{name}.npy", buffer.getvalue())

    def read_embeddings(self, name: str) -> np.ndarray:
        """Read ``embed/<name>.npy``."""
        data = self.read_bytes(f"embed/{name}.npy")
        try:
            return np.load(io.BytesIO(data), allow_pickle=False).astype(np.float64)
        except ValueError as e:
            raise DatasetError(f"embed/{name}.npy: {e}") from e

    # Discovery

    def write_clusters(self, clusters: Sequence[Cluster], refs: Sequence[ProposalRef]) -> None:
        """Write one ``discover/clusters.csv`` row per clustered proposal."""
        rows = [(c.id, *refs[m]) for c in clusters for m in c.members]
        self.write_table("discover/clusters.csv", pd.DataFrame(rows, columns=CLUSTER_COLUMNS))

    def read_clusters(self, refs: Sequence[ProposalRef], embeddings: np.ndarray) -> List[Cluster]:
        """Rebuild clusters; modes are recomputed as the mean of member embeddings."""
        table = self.read_table("discover/clusters.csv", CLUSTER_COLUMNS)
        row_of = {ref: i for i, ref in enumerate(refs)}
        members: Dict[int, List[int]] = {}
        for r in table.itertuples(index=False):
            ref = (str(r.frame_id), int(r.proposal_index))
            if ref not in row_of:
                raise DatasetError(f"cluster {r.cluster_id} references unknown proposal {ref}")
            members.setdefault(int(r.cluster_id), []).append(row_of[ref])
        return [
            Cluster(cid, embeddings[rows].mean(axis=0), rows)
            for cid, rows in sorted(members.items())
        ]

    def write_sweep(self, rows: Sequence[SweepRow]) -> None:
        """Write ``discover/pr_sweep.csv``."""
        table = pd.DataFrame([r.model_dump() for r in rows], columns=SWEEP_COLUMNS)
        self.write_table("discover/pr_sweep.csv", table)

    # Detection

    def write_detection_runs(self, runs: Sequence[Tuple[str, str, int, Sequence[Detection]]]) -> None:
        """Write every detector run as ``method, shots, trial`` plus detection columns."""
        rows = [
            (method, shots, trial, d.frame_id, *d.box.as_array().tolist(), d.label, d.score)
            for method, shots, trial, dets in runs
            for d in dets
        ]
        self.write_table(
            "detect/all_detections.csv", pd.DataFrame(rows, columns=RUN_COLUMNS + DETECTION_COLUMNS)
        )

    def read_detection_runs(self) -> Dict[Tuple[str, str, int], List[Detection]]:
        """Detections of every run, keyed by ``(method, shots, trial)``."""
        table = self.read_table(
            "detect/all_detections.csv",
            RUN_COLUMNS + DETECTION_COLUMNS,
            dtype={"method": str, "shots": str, "frame_id": str},
        )
        runs: Dict[Tuple[str, str, int], List[Detection]] = {}
        for r in table.itertuples(index=False):
            runs.setdefault((r.method, r.shots, int(r.trial)), []).append(
                Detection(
                    str(r.frame_id),
                    BoundingBox(float(r.x1), float(r.y1), float(r.x2), float(r.y2)),
                    int(r.label),
                    float(r.score),
                )
            )
        return runs

    def write_detections(self, detections: Sequence[Detection]) -> None:
        """Write the featured run to ``detect/detections.csv``."""
        rows = [(d.frame_id, *d.box.as_array().tolist(), d.label, d.score) for d in detections]
        self.write_table("detect/detections.csv", pd.DataFrame(rows, columns=DETECTION_COLUMNS))

    # Evaluation

    def write_few_shot(self, rows: Sequence[FewShotRow]) -> None:
        """Write ``evaluate/few_shot.csv``."""
        table = pd.DataFrame([r.model_dump() for r in rows], columns=FEW_SHOT_COLUMNS)
        self.write_table("evaluate/few_shot.csv", table)

    def _write_tsv(self, relative: str, table: pd.DataFrame) -> None:
        body = table.to_csv(index=False, header=False, sep="\t", lineterminator="\n")
        self.write_text(relative, "# " + "\t".join(table.columns) + "\n" + body)

    def _read_tsv(self, relative: str, columns: Sequence[str]) -> pd.DataFrame:
        text = self.read_text(relative)
        header, _, body = text.partition("\n")
        if header != "# " + "\t".join(columns):
            raise DatasetError(f"{self.path(relative)}: unexpected header {header!r}")
        if not body.strip():
            return pd.DataFrame(columns=list(columns))
        try:
            return pd.read_csv(
                io.StringIO(body), sep="\t", header=None, names=list(columns),
                dtype={c: str for c in columns if "frame" in c}, float_precision="round_trip",
            )
        except (ValueError, pd.errors.ParserError) as e:
            raise DatasetError(f"{self.path(relative)}: {e}") from e
