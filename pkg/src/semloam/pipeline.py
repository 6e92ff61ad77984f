"""Offline odometry + loop-closure pipeline over a SemanticKITTI-style sequence."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .dataset import (
    DatasetError,
    camera_to_lidar,
    export_map,
    list_sequence,
    read_calib_tr,
    read_scan,
    read_trajectory,
    write_trajectory,
)
from .evaluation import EvalReport, evaluate, path_distances
from .features import downsample_indices, extract_features
from .geometry import Pose
from .graph import GraphMap, build_graph
from .icp import RegistrationError, Submap, register, update_submap
from .loop import LoopEdge, detect, propose_candidates
from .posegraph import LOOP, PoseGraph, optimize, rebuild_outputs
from .taxonomy import LabelTaxonomy

log = logging.getLogger(__name__)

EXIT_OK, EXIT_DATA, EXIT_FAILURES = 0, 1, 2


@dataclass
class PipelineResult:
    odometry: list[Pose]
    trajectory: list[Pose]
    loops: list[LoopEdge]
    skipped: list[int]
    graph: PoseGraph
    odometry_report: EvalReport | None = None
    report: EvalReport | None = None
    outputs: dict[str, Path] = field(default_factory=dict)
    max_skip_ratio: float = 0.1

    @property
    def exit_code(self) -> int:
        return EXIT_FAILURES if self.too_many_failures else EXIT_OK

    @property
    def too_many_failures(self) -> bool:
        return bool(self.odometry) and len(self.skipped) > self.max_skip_ratio * len(self.odometry)


class Pipeline:
    """Stateful per-scan processing; ``run`` drives it over a whole sequence."""

    def __init__(self, cfg: PipelineConfig, taxonomy: LabelTaxonomy):
        self.cfg = cfg
        self.taxonomy = taxonomy
        self.weights = taxonomy.weights()
        self.voxels = taxonomy.voxels()
        self.poses: list[Pose] = []  # current best estimates, world frame
        self.odometry: list[Pose] = []  # odometry-only chain
        self.features = []  # sensor-frame downsampled features per scan
        self.map_points: list[np.ndarray] = []
        self.map_labels: list[np.ndarray] = []
        self.submap = Submap(taxonomy, cfg.run.submap_frames)
        self.graph_map = GraphMap()
        self.pose_graph = PoseGraph()
        self.loops: list[LoopEdge] = []
        self.skipped: list[int] = []
        self._noise_rng = np.random.default_rng([cfg.seed, 1])

    def _odometry_noise(self) -> Pose:
        run = self.cfg.run
        if run.odom_noise_trans == 0 and run.odom_noise_rot_deg == 0:
            return Pose.identity()
        rot = self._noise_rng.normal(0.0, np.radians(run.odom_noise_rot_deg), 3)
        trans = self._noise_rng.normal(0.0, run.odom_noise_trans, 3)
        return Pose.exp(np.concatenate([rot, trans]))

    def process(self, scan) -> None:
        k = len(self.poses)
        feats = extract_features(scan, self.cfg.features).downsampled(self.voxels)
        if k == 0:
            rel = Pose.identity()
            pose = rel
            odom = rel
        else:
            prev = self.poses[-1]
            velocity = self.poses[-2].inverse() @ prev if k >= 2 else Pose.identity()
            try:
                init = prev @ velocity
                if k == 1 and self.cfg.run.coarse_gate > self.cfg.icp.max_correspondence_dist:
                    coarse = replace(self.cfg.icp, max_correspondence_dist=self.cfg.run.coarse_gate)
                    init = register(feats, self.submap, init, self.weights, coarse).pose
                result = register(feats, self.submap, init, self.weights, self.cfg.icp)
                rel = prev.inverse() @ result.pose
            except RegistrationError as exc:
                log.warning("scan %d: registration failed, extrapolating (%s)", k, exc)
                self.skipped.append(k)
                rel = velocity
            # noise is drawn for every increment so the sequence does not depend on failures
            rel = rel @ self._odometry_noise()
            pose = prev @ rel
            odom = self.odometry[-1] @ rel
        self.poses.append(pose)
        self.odometry.append(odom)
        self.features.append(feats)
        self.pose_graph.add_node(pose)
        if k > 0:
            self.pose_graph.add_edge(k - 1, k, rel)
        self.submap = update_submap(self.submap, feats, pose)

        graph = build_graph(scan, self.taxonomy, self.cfg.graph, k)
        self.graph_map.append(k, graph, pose)
        keep = downsample_indices(scan.points, scan.labels, self.voxels)
        self.map_points.append(scan.points[keep])
        self.map_labels.append(scan.labels[keep])

        if self.cfg.run.loop_closure and k % self.cfg.loop.stride == 0:
            self._close_loops(k, graph, feats)

    def _local_submap(self, i: int, current: int) -> tuple[Submap, Pose]:
        n = self.cfg.run.submap_frames
        lo = max(0, i - n // 2)
        hi = min(current, lo + n)
        frames = [self.features[m].transformed(self.poses[m]) for m in range(lo, hi)]
        return Submap(self.taxonomy, n, frames), self.poses[i]

    def _close_loops(self, k: int, graph, feats) -> None:
        positions = np.array([p.translation for p in self.poses])
        candidates = propose_candidates(k, positions, path_distances(self.poses), self.cfg.loop)
        if not candidates:
            return
        edges = detect(
            k,
            graph,
            feats,
            self.poses[k],
            self.graph_map,
            candidates,
            lambda i: self._local_submap(i, k),
            self.weights,
            self.cfg.loop,
            self.cfg.icp,
            self.cfg.graph.distance_cap,
        )
        if not edges:
            return
        for e in edges:
            log.info("loop %d -> %d: cost %.3f score %.4f", e.i, e.j, e.cost, e.score)
            self.pose_graph.add_edge(e.i, e.j, e.measurement, self.cfg.run.loop_edge_weight, LOOP)
        self.loops.extend(edges)
        opt = optimize(self.pose_graph, self.cfg.run.posegraph_max_iters)
        log.info("pose graph: chi2 %.6g -> %.6g in %d iterations", opt.initial_chi2, opt.chi2, opt.iterations)
        self.pose_graph.nodes = list(opt.poses)
        self.poses = list(opt.poses)
        n = self.cfg.run.submap_frames
        frames = [self.features[m].transformed(self.poses[m]) for m in range(max(0, k - n + 1), k + 1)]
        self.submap = Submap(self.taxonomy, n, frames)


def load_taxonomy(cfg: PipelineConfig) -> LabelTaxonomy:
    return LabelTaxonomy.load(cfg.run.taxonomy) if cfg.run.taxonomy else LabelTaxonomy.default()


def load_ground_truth(path, n_scans: int, calib=None) -> list[Pose]:
    gt = read_trajectory(path)
    if calib is not None:
        gt = camera_to_lidar(gt, read_calib_tr(calib))
    if len(gt) < n_scans:
        raise DatasetError(f"{path}: {len(gt)} ground-truth poses for {n_scans} scans")
    gt = gt[:n_scans]
    origin = gt[0].inverse()
    return [origin @ p for p in gt]


def run(cfg: PipelineConfig, max_scans: int | None = None, write: bool = True) -> PipelineResult:
    """Process the configured dataset and write all outputs.

    Raises:
        DatasetError: missing/empty dataset or malformed input files.
    """
    if cfg.run.dataset is None:
        raise DatasetError("no dataset directory configured")
    taxonomy = load_taxonomy(cfg)
    pairs = list_sequence(cfg.run.dataset)
    if max_scans is not None:
        pairs = pairs[:max_scans]
    gt = None
    if cfg.run.ground_truth:
        calib = Path(cfg.run.dataset) / "calib.txt"
        gt = load_ground_truth(cfg.run.ground_truth, len(pairs), calib if cfg.run.ground_truth_in_camera else None)

    pipe = Pipeline(cfg, taxonomy)
    start = time.perf_counter()
    limits = (cfg.run.range_min, cfg.run.range_max)
    for k, (bin_path, label_path) in enumerate(pairs):
        pipe.process(read_scan(bin_path, label_path, taxonomy, limits))
        if (k + 1) % 50 == 0 or k + 1 == len(pairs):
            log.info("scan %d/%d (%.1f s, %d loops)", k + 1, len(pairs), time.perf_counter() - start, len(pipe.loops))

    result = PipelineResult(
        pipe.odometry, pipe.poses, pipe.loops, pipe.skipped, pipe.pose_graph, max_skip_ratio=cfg.run.max_skip_ratio
    )
    if gt is not None:
        result.odometry_report = evaluate(pipe.odometry, gt)
        result.report = evaluate(pipe.poses, gt)
    if result.too_many_failures:
        log.error("%d of %d scans failed registration", len(pipe.skipped), len(pairs))
    if write:
        result.outputs = write_outputs(cfg, pipe, result, taxonomy)
    return result


def write_outputs(cfg: PipelineConfig, pipe: Pipeline, result: PipelineResult, taxonomy: LabelTaxonomy) -> dict[str, Path]:
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "odometry": out / "odometry.txt",
        "trajectory": out / "trajectory.txt",
        "map": out / "map.ply",
        "loops": out / "loops.log",
        "graph": out / "graph.g2o",
        "config": out / "config.txt",
    }
    write_trajectory(paths["odometry"], result.odometry)
    write_trajectory(paths["trajectory"], result.trajectory)
    pts, lbl = rebuild_outputs(
        result.trajectory, pipe.map_points, pipe.map_labels, pipe.voxels if cfg.run.map_voxels else None
    )
    export_map(pts, lbl, paths["map"], taxonomy)
    paths["loops"].write_text("".join(e.log_line() + "\n" for e in result.loops))
    paths["graph"].write_text(result.graph.to_g2o())
    cfg.save(paths["config"])
    if result.report is not None:
        paths["eval"] = out / "eval.txt"
        paths["eval_kv"] = out / "eval.kv"
        paths["eval"].write_text(result.odometry_report.to_text("odometry") + result.report.to_text("loop-corrected"))
        paths["eval_kv"].write_text(result.odometry_report.to_kv("odometry.") + result.report.to_kv("trajectory."))
    return paths
