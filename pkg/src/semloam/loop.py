"""Loop closure: odometry-gated candidates, graph scoring, ICP verification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .features import FeatureSet
from .geometry import Pose
from .graph import GraphMap, SemanticGraph, similarity
from .icp import IcpConfig, RegistrationError, Submap, register

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopConfig:
    sigma: float = 0.05
    delta_min: float = 15.0
    delta_max: float = 100.0
    n_candi: int = 64
    zeta: float = 0.95
    n_loop: int = 5
    delta_r: float = 100.0
    min_index_gap: int = 50
    rng_seed: int = 0
    stride: int = 1
    min_inlier_ratio: float = 0.5
    # coarse-to-fine correspondence gates for verification; the last stage uses the ICP config
    verify_coarse_dists: tuple[float, ...] = (3.0,)

    def __post_init__(self):
        if not 0 < self.delta_min <= self.delta_max:
            raise ValueError("need 0 < delta_min <= delta_max")
        if not 0 < self.zeta <= 1:
            raise ValueError("zeta must lie in (0, 1]")


@dataclass
class LoopEdge:
    i: int
    j: int
    measurement: Pose  # Z_ij
    cost: float
    score: float

    def log_line(self) -> str:
        z = self.measurement.matrix()[:3].reshape(-1)
        return f"{self.i} {self.j} {self.cost!r} {self.score!r} " + " ".join(repr(float(v)) for v in z)


def gate_radius(d: float, cfg: LoopConfig = LoopConfig()) -> float:
    """Search radius that grows with travelled distance, clamped to [delta_min, delta_max]."""
    if d < 0:
        raise ValueError("travel distance must be non-negative")
    return max(cfg.delta_min, min(cfg.delta_max, cfg.sigma * d))


def propose_candidates(current: int, positions: np.ndarray, cum_distance: np.ndarray, cfg: LoopConfig = LoopConfig()) -> list[int]:
    """Earlier scans close enough to ``current`` given the odometry drift budget.

    ``positions`` and ``cum_distance`` cover at least scans 0..current.  When
    more than ``n_candi`` scans qualify a seeded uniform sample is returned.
    """
    last = current - cfg.min_index_gap
    if last < 0:
        return []
    js = np.arange(0, last + 1)
    travel = cum_distance[current] - cum_distance[js]
    radius = np.maximum(cfg.delta_min, np.minimum(cfg.delta_max, cfg.sigma * travel))
    dist = np.linalg.norm(positions[js] - positions[current], axis=1)
    eligible = js[dist < radius]
    if len(eligible) > cfg.n_candi:
        rng = np.random.default_rng([cfg.rng_seed, current])
        eligible = np.sort(rng.choice(eligible, size=cfg.n_candi, replace=False))
    return [int(j) for j in eligible]


def score_candidates(graph: SemanticGraph, graph_map: GraphMap, candidates, distance_cap: float = 20.0) -> np.ndarray:
    return np.array([similarity(graph, g, distance_cap) for g in graph_map.get(candidates)], dtype=float)


def youden_threshold(positive, negative) -> float:
    """Score threshold maximising TPR - FPR for ``score > threshold``.

    Candidates are midpoints between consecutive distinct scores; ties go to
    the higher threshold.
    """
    pos = np.asarray(positive, dtype=float)
    neg = np.asarray(negative, dtype=float)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("need both positive and negative scores")
    values = np.unique(np.concatenate([pos, neg]))
    cuts = np.concatenate([[values[0] - 1e-9], (values[:-1] + values[1:]) / 2.0])
    j = (pos[None, :] > cuts[:, None]).mean(axis=1) - (neg[None, :] > cuts[:, None]).mean(axis=1)
    best = np.flatnonzero(j >= j.max() - 1e-12)[-1]
    return float(cuts[best])


def calibrate_zeta(
    graphs, positions, near: float = 4.0, far: float = 15.0, min_index_gap: int = 50, distance_cap: float = 20.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Score threshold separating revisits from distinct places on labelled data.

    Pairs at least ``min_index_gap`` apart are positive when their true
    positions are closer than ``near`` and negative beyond ``far``.
    Returns (threshold, positive scores, negative scores).
    """
    positions = np.asarray(positions, dtype=float)
    pos, neg = [], []
    for i in range(len(graphs)):
        for j in range(i + min_index_gap, len(graphs)):
            d = np.linalg.norm(positions[i] - positions[j])
            if d < near:
                pos.append(similarity(graphs[i], graphs[j], distance_cap))
            elif d > far:
                neg.append(similarity(graphs[i], graphs[j], distance_cap))
    return youden_threshold(pos, neg), np.array(pos), np.array(neg)


def verify(features: FeatureSet, submap: Submap, init: Pose, weights, cfg: LoopConfig, icp_cfg: IcpConfig):
    """Register against a candidate-local submap; returns the result or None."""
    pose = init
    try:
        for gate in cfg.verify_coarse_dists:
            if gate > icp_cfg.max_correspondence_dist:
                pose = register(features, submap, pose, weights, replace(icp_cfg, max_correspondence_dist=gate)).pose
        result = register(features, submap, pose, weights, icp_cfg)
    except RegistrationError as exc:
        log.debug("verification failed: %s", exc)
        return None
    return result


def detect(
    current: int,
    graph: SemanticGraph,
    features: FeatureSet,
    current_pose: Pose,
    graph_map: GraphMap,
    candidates,
    submap_factory: Callable[[int], tuple[Submap, Pose]],
    weights,
    cfg: LoopConfig = LoopConfig(),
    icp_cfg: IcpConfig = IcpConfig(),
    distance_cap: float = 20.0,
) -> list[LoopEdge]:
    """Verified loop edges between ``current`` and its candidates.

    ``submap_factory(i)`` returns the world-frame submap around candidate ``i``
    together with the candidate's pose in that frame; ``current_pose`` is the
    odometry estimate used to initialise registration.
    """
    candidates = list(candidates)
    if not candidates:
        return []
    scores = score_candidates(graph, graph_map, candidates, distance_cap)
    kept = [(s, c) for s, c in zip(scores, candidates) if s > cfg.zeta]
    log.debug("scan %d: %d candidates, best score %.4f, %d above threshold", current, len(candidates), scores.max(), len(kept))
    kept.sort(key=lambda sc: (-sc[0], sc[1]))
    kept = kept[: cfg.n_loop]
    edges = []
    for score, cand in sorted(kept, key=lambda sc: sc[1]):
        submap, anchor = submap_factory(cand)
        if submap.is_empty():
            continue
        result = verify(features, submap, current_pose, weights, cfg, icp_cfg)
        if result is None:
            continue
        ok = result.converged and result.final_cost <= cfg.delta_r and result.inlier_ratio >= cfg.min_inlier_ratio
        log.debug(
            "candidate %d for %d: score %.4f cost %.3f inliers %.3f converged %s -> %s",
            cand, current, score, result.final_cost, result.inlier_ratio, result.converged, ok,
        )
        if not ok:
            continue
        z = anchor.inverse() @ result.pose
        edges.append(LoopEdge(cand, current, z, result.final_cost, float(score)))
    return edges
