"""Define the self-supervised object discovery pipeline.

One node per stage: simulate, associate, mine, train, embed, discover, detect,
evaluate. Stages exchange data through the run directory, not the graph state,
and each records a cache key in ``<output>/<stage>/stage.json``; a stage whose
key is unchanged is skipped unless the run is forced.
"""

from __future__ import annotations

import json
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from langgraph.graph import END, START, StateGraph
from langgraph.runtime import Runtime
from pydantic import BaseModel

from objdisco.association import NeighborhoodSpec, build_matches
from objdisco.config import BASELINE_LABEL, FORMAT_VERSION, STAGES
from objdisco.context import Context
from objdisco.detection import (
    aggregate_trials,
    cluster_labeled_detector,
    detect_frames,
    evaluate_detections,
    few_shot_sample,
)
from objdisco.discovery import (
    best_bandwidth,
    discovery_pr,
    filter_clusters,
    label_clusters_by_majority,
    label_frames,
    mean_shift,
    sweep_bandwidths,
    sweep_rows,
)
from objdisco.errors import ConfigError, DatasetError, EmptyLabeledSetError, ObjdiscoError, StageError
from objdisco.metriclearn import TripletSource, embed_batch, raw_embedding, train
from objdisco.models.domain import Dataset, Detection, Frame, flatten_proposals
from objdisco.models.reports import (
    DiscoverySummary,
    EvaluationReport,
    FewShotRow,
    MethodEvaluation,
    RunMetadata,
    TrainingSummary,
)
from objdisco.repositories import ArtifactRepository, DatasetRepository
from objdisco.scenesim import SCAN_LAYOUTS, grid_adjacency, simulate_dataset
from objdisco.state import InputState, State
from objdisco.utils import derive_seed, sha256_files, sha256_text

logger = logging.getLogger(__name__)

SSOD_DIST = "ssod-dist"
CLUSTER_LABELED = "cluster-labeled"
NO_SHOTS = "-"

Update = Dict[str, Any]
Summary = Dict[str, Any]
RunId = Tuple[str, str, int]


def _section(model: BaseModel) -> str:
    return json.dumps(model.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def _metadata(ctx: Context) -> RunMetadata:
    return RunMetadata(config_hash=ctx.config_hash, seed=ctx.config.seed)


def _artifacts(ctx: Context) -> ArtifactRepository:
    return ArtifactRepository(ctx.config.output_dir)


def _load(ctx: Context, scans: Sequence[str]) -> Dataset:
    return DatasetRepository(ctx.config.dataset_path).read_dataset(scans)


def _features(frames: Sequence[Frame], dim: int) -> np.ndarray:
    flat = flatten_proposals(list(frames))
    if not flat:
        return np.zeros((0, dim))
    return np.stack([p.feature for _, p in flat])


def _run_cached(
    stage: str,
    ctx: Context,
    parts: Sequence[str],
    compute: Callable[[ArtifactRepository], Summary],
    present: Callable[[], bool] = lambda: True,
) -> Update:
    artifacts = _artifacts(ctx)
    key = sha256_text(stage, str(FORMAT_VERSION), *parts)
    if not ctx.force and artifacts.is_fresh(stage, key) and present():
        summary = artifacts.read_json(f"{stage}/stage.json").get("summary", {})
        logger.info("stage=%s cached=True", stage)
    else:
        artifacts.ensure_dir(stage)
        summary = compute(artifacts)
        artifacts.mark_done(stage, key, summary)
        fields = " ".join(f"{k}={v}" for k, v in summary.items())
        logger.info("stage=%s cached=False %s", stage, fields)
    return {"completed": [stage], "keys": {stage: key}, "summaries": {stage: summary}}


def _stage(name: str, body: Callable[[State, Context], Update]):
    def node(state: State, runtime: Runtime[Context]) -> Update:
        if state.stop_after not in STAGES:
            raise ConfigError(f"unknown stage {state.stop_after!r}; expected one of {', '.join(STAGES)}")
        try:
            return body(state, runtime.context)
        except (ConfigError, StageError):
            logger.error("stage=%s status=failed", name)
            raise
        except (DatasetError, OSError) as e:
            logger.error("stage=%s status=failed error=%s", name, type(e).__name__)
            raise DatasetError(f"stage '{name}' failed: {e}") from e
        except ObjdiscoError as e:
            logger.error("stage=%s status=failed error=%s", name, type(e).__name__)
            raise StageError(name, e) from e
        except Exception as e:
            logger.exception("stage=%s status=failed", name)
            raise StageError(name, e) from e

    node.__name__ = name
    return node


# Stages


def simulate(state: State, ctx: Context) -> Update:
    """Simulate the train and test scans, or adopt an existing dataset."""
    config = ctx.config
    datasets = DatasetRepository(config.dataset_path)

    def present() -> bool:
        return all(datasets.has_scan(scan) for scan in SCAN_LAYOUTS)

    if not config.simulate:
        if not present():
            raise DatasetError(f"no dataset at {config.dataset_path} and simulation is disabled")
        parts = [sha256_files([datasets.path(scan, "manifest.json") for scan in SCAN_LAYOUTS])]

        def compute(artifacts: ArtifactRepository) -> Summary:
            return _dataset_summary(_load(ctx, tuple(SCAN_LAYOUTS)))
    else:
        parts = [_section(config.scene), str(config.seed)]

        def compute(artifacts: ArtifactRepository) -> Summary:
            dataset, _ = simulate_dataset(config.scene, derive_seed(config.seed, "scene"))
            datasets.write_dataset(dataset, config.scene.descriptor_dim)
            return _dataset_summary(dataset)

    return _run_cached("simulate", ctx, parts, compute, present)


def _dataset_summary(dataset: Dataset) -> Summary:
    summary: Summary = {"instances": len(dataset.instances)}
    for scan, frames in sorted(dataset.scans.items()):
        summary[f"{scan}_frames"] = len(frames)
        summary[f"{scan}_proposals"] = sum(len(f.proposals) for f in frames)
        summary[f"{scan}_gt_boxes"] = sum(len(f.gt_boxes) for f in frames)
    return summary


def associate(state: State, ctx: Context) -> Update:
    """Match train-scan proposals across neighboring frames."""
    config = ctx.config
    cfg = config.association

    def compute(artifacts: ArtifactRepository) -> Summary:
        frames = _load(ctx, ("train",)).train
        radius = cfg.radius if cfg.radius is not None else 1.5 * config.scene.grid_spacing
        adjacency = grid_adjacency(config.scene) if cfg.grid_adjacency else None
        matches = build_matches(
            frames,
            NeighborhoodSpec(radius, adjacency),
            cfg.iou_threshold,
            cfg.min_points,
            cfg.workers,
            min_shared=cfg.min_shared,
            support_radius=cfg.support_radius,
        )
        artifacts.write_matches(matches)
        labels = {(f.id, i): p.gt_label for f in frames for i, p in enumerate(f.proposals)}
        labeled = [m for m in matches if labels[m.a] is not None and labels[m.b] is not None]
        correct = sum(labels[m.a] == labels[m.b] for m in labeled)
        return {
            "matches": len(matches),
            "match_precision": round(correct / len(labeled), 6) if labeled else None,
        }

    parts = [state.keys["simulate"], _section(cfg), _section(config.scene)]
    return _run_cached("associate", ctx, parts, compute)


def _triplet_source(ctx: Context, matches, frames) -> TripletSource:
    return TripletSource(
        matches, frames, derive_seed(ctx.config.seed, "mine"), ctx.config.association.negatives_per_pair
    )


def mine(state: State, ctx: Context) -> Update:
    """Mine the first epoch of triplets from the matches."""

    def compute(artifacts: ArtifactRepository) -> Summary:
        frames = _load(ctx, ("train",)).train
        triplets = _triplet_source(ctx, artifacts.read_matches(), frames).epoch(0)
        artifacts.write_triplets(triplets)
        return {"triplets": len(triplets)}

    parts = [state.keys["associate"], str(ctx.config.association.negatives_per_pair)]
    return _run_cached("mine", ctx, parts, compute)


def train_model(state: State, ctx: Context) -> Update:
    """Train the embedding head on the mined triplets."""
    config = ctx.config

    def compute(artifacts: ArtifactRepository) -> Summary:
        frames = _load(ctx, ("train",)).train
        matches = artifacts.read_matches()
        source = _triplet_source(ctx, matches, frames)
        training = config.training.model_copy(
            update={"seed": derive_seed(config.seed, "train", config.training.seed)}
        )
        batch_radius = (
            config.training.batch_radius
            if config.training.batch_radius is not None
            else config.scene.grid_spacing
        )
        result = train(frames, source, training, batch_radius)
        artifacts.write_model(result.model)
        artifacts.write_loss_trace(result.trace)
        final_loss = result.trace[-1].loss if result.trace else None
        artifacts.write_json(
            "train/training_summary.json",
            TrainingSummary(
                metadata=_metadata(ctx),
                matches=len(matches),
                triplets_first_epoch=len(source.epoch(0)),
                applied_steps=len(result.trace),
                skipped_steps=result.skipped_steps,
                final_loss=final_loss,
            ),
        )
        return {
            "applied_steps": len(result.trace),
            "skipped_steps": result.skipped_steps,
            "final_loss": final_loss,
        }

    parts = [state.keys["mine"], _section(config.training), str(config.scene.grid_spacing)]
    return _run_cached("train", ctx, parts, compute)


def embed(state: State, ctx: Context) -> Update:
    """Embed every proposal of both scans, learned and raw."""
    dim = ctx.config.scene.descriptor_dim

    def compute(artifacts: ArtifactRepository) -> Summary:
        model = artifacts.read_model()
        dataset = _load(ctx, tuple(SCAN_LAYOUTS))
        summary: Summary = {}
        for scan, frames in sorted(dataset.scans.items()):
            features = _features(frames, dim)
            artifacts.write_embeddings(f"{scan}_embedded", embed_batch(model, features))
            artifacts.write_embeddings(f"{scan}_raw", raw_embedding(features))
            summary[f"{scan}_proposals"] = int(features.shape[0])
        return summary

    return _run_cached("embed", ctx, [state.keys["train"]], compute)


def discover(state: State, ctx: Context) -> Update:
    """Mean-shift the train-scan embeddings and score the clusters."""
    cfg = ctx.config.discovery

    def compute(artifacts: ArtifactRepository) -> Summary:
        dataset = _load(ctx, ("train",))
        flat = flatten_proposals(dataset.train)
        labels = label_frames(dataset.train, cfg.gt_iou)
        instance_ids = [i.instance_id for i in dataset.instances]
        embeddings = artifacts.read_embeddings("train_embedded")

        reports = sweep_bandwidths(embeddings, labels, cfg, instance_ids)
        clusters = filter_clusters(mean_shift(embeddings, cfg.bandwidth, cfg), cfg.min_cluster_size)
        featured = discovery_pr(clusters, labels, cfg.bandwidth, instance_ids)
        named = label_clusters_by_majority(clusters, labels)

        artifacts.write_clusters(clusters, [ref for ref, _ in flat])
        artifacts.write_sweep(sweep_rows(reports))
        best = best_bandwidth(reports)
        artifacts.write_json(
            "discover/discovery_report.json",
            DiscoverySummary(
                metadata=_metadata(ctx),
                featured=featured,
                best_bandwidth=best,
                sweep=sweep_rows(reports),
                labeled_clusters=len(named),
            ),
        )
        return {
            "clusters": featured.n_clusters,
            "avg_precision": round(featured.avg_precision, 6),
            "avg_recall": round(featured.avg_recall, 6),
            "best_bandwidth": best,
        }

    return _run_cached("discover", ctx, [state.keys["embed"], _section(cfg)], compute)


def _shot_levels(ctx: Context) -> List[Tuple[str, Optional[int], int]]:
    cfg = ctx.config.detection
    levels: List[Tuple[str, Optional[int], int]] = [(str(n), n, cfg.trials) for n in cfg.shots]
    if cfg.include_all_labeled:
        levels.append(("all", None, 1))
    return levels


def detect(state: State, ctx: Context) -> Update:
    """Build the detectors on the train scan and run them on the test scan."""
    config = ctx.config
    cfg = config.detection

    def compute(artifacts: ArtifactRepository) -> Summary:
        dataset = _load(ctx, tuple(SCAN_LAYOUTS))
        train_flat = flatten_proposals(dataset.train)
        labels = label_frames(dataset.train, config.discovery.gt_iou)
        classes = [i.instance_id for i in dataset.instances]
        train_emb = artifacts.read_embeddings("train_embedded")
        train_raw = artifacts.read_embeddings("train_raw")
        test_emb = artifacts.read_embeddings("test_embedded")
        test_raw = artifacts.read_embeddings("test_raw")

        def run(labeled, embeddings) -> List[Detection]:
            return detect_frames(labeled, dataset.test, embeddings, cfg.nms_iou, cfg.background_threshold)

        runs: List[Tuple[str, str, int, List[Detection]]] = []
        clusters = artifacts.read_clusters([ref for ref, _ in train_flat], train_emb)
        try:
            labeled = cluster_labeled_detector(clusters, label_clusters_by_majority(clusters, labels), train_emb)
            runs.append((CLUSTER_LABELED, NO_SHOTS, 0, run(labeled, test_emb)))
        except EmptyLabeledSetError as e:
            logger.warning("detect method=%s skipped: %s", CLUSTER_LABELED, e)

        missing: set[int] = set()
        for shots, n, trials in _shot_levels(ctx):
            for trial in range(trials):
                seed = derive_seed(config.seed, "few-shot", shots, trial)
                learned = few_shot_sample(labels, train_emb, n, seed, classes)
                raw = few_shot_sample(labels, train_raw, n, seed, classes)
                missing.update(learned.missing_classes)
                if len(learned) == 0:
                    raise EmptyLabeledSetError("no labeled training proposal to sample from")
                runs.append((SSOD_DIST, shots, trial, run(learned, test_emb)))
                runs.append((BASELINE_LABEL, shots, trial, run(raw, test_raw)))
        if missing:
            logger.warning("detect classes_without_examples=%s", sorted(missing))

        artifacts.write_detection_runs(runs)
        artifacts.write_json(
            "detect/runs.json",
            {"runs": [{"method": m, "shots": s, "trial": t} for m, s, t, _ in runs]},
        )
        featured = [d for m, s, t, d in runs if (m, s, t) == (SSOD_DIST, str(cfg.featured_shots), 0)]
        artifacts.write_detections(featured[0] if featured else [])
        return {"runs": len(runs), "detections": sum(len(d) for *_, d in runs), "missing_classes": len(missing)}

    return _run_cached("detect", ctx, [state.keys["discover"], _section(cfg)], compute)


def evaluate(state: State, ctx: Context) -> Update:
    """Score every detector run with mAP on the test scan and write the reports."""
    cfg = ctx.config.detection

    def compute(artifacts: ArtifactRepository) -> Summary:
        dataset = _load(ctx, ("test",))
        detections = artifacts.read_detection_runs()
        run_ids: List[RunId] = [
            (r["method"], r["shots"], int(r["trial"])) for r in artifacts.read_json("detect/runs.json")["runs"]
        ]
        grouped: Dict[Tuple[str, str], List[MethodEvaluation]] = {}
        for method, shots, trial in run_ids:
            grouped.setdefault((method, shots), []).append(
                evaluate_detections(
                    method,
                    detections.get((method, shots, trial), []),
                    dataset.test,
                    dataset.instances,
                    cfg.ap_iou,
                    cfg.rollup_exclude,
                    None if shots == NO_SHOTS else shots,
                )
            )
        methods = {key: aggregate_trials(evals) for key, evals in grouped.items()}

        few_shot = [
            FewShotRow(
                shots=shots,
                embedding_map=methods[(SSOD_DIST, shots)].mean_ap,
                baseline_map=methods[(BASELINE_LABEL, shots)].mean_ap,
            )
            for shots, _, _ in _shot_levels(ctx)
            if (SSOD_DIST, shots) in methods and (BASELINE_LABEL, shots) in methods
        ]
        report = EvaluationReport(
            metadata=_metadata(ctx),
            iou_threshold=cfg.ap_iou,
            rollup_excluded_categories=list(cfg.rollup_exclude),
            methods=list(methods.values()),
            few_shot=few_shot,
        )
        artifacts.write_json("evaluate/evaluation_report.json", report)
        artifacts.write_few_shot(few_shot)

        summary: Summary = {f"map_{row.shots}": round(row.embedding_map, 6) for row in few_shot}
        if (CLUSTER_LABELED, NO_SHOTS) in methods:
            summary["map_cluster_labeled"] = round(methods[(CLUSTER_LABELED, NO_SHOTS)].mean_ap, 6)
        return summary

    return _run_cached("evaluate", ctx, [state.keys["detect"], _section(cfg)], compute)


# Define the graph

NODES: Dict[str, Callable[[State, Context], Update]] = {
    "simulate": simulate,
    "associate": associate,
    "mine": mine,
    "train": train_model,
    "embed": embed,
    "discover": discover,
    "detect": detect,
    "evaluate": evaluate,
}

builder = StateGraph(State, input_schema=InputState, context_schema=Context)

for name in STAGES:
    builder.add_node(name, _stage(name, NODES[name]))

builder.add_edge(START, STAGES[0])


def route_after(stage: str) -> Callable[[State], str]:
    """Build the router that ends the run after ``stop_after`` or moves on."""
    position = STAGES.index(stage)
    following = STAGES[position + 1] if position + 1 < len(STAGES) else END

    def route(state: State) -> str:
        if state.stop_after == stage:
            return END
        return following

    route.__name__ = f"route_after_{stage}"
    return route


for name in STAGES:
    targets = [END] if name == STAGES[-1] else [STAGES[STAGES.index(name) + 1], END]
    builder.add_conditional_edges(name, route_after(name), targets)

graph = builder.compile(name="Object Discovery Pipeline")
