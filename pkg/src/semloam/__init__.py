"""Semantic LiDAR odometry and mapping with graph-based loop closure."""

from .config import ConfigError, PipelineConfig, RunConfig
from .dataset import DatasetError, SemanticScan, read_scan, read_trajectory, write_trajectory
from .evaluation import EvalReport, ate, evaluate, kitti_rpe
from .features import FeatureConfig, FeatureSet, extract_features
from .geometry import Pose
from .graph import GraphConfig, SemanticGraph, build_graph, similarity
from .icp import IcpConfig, RegistrationError, RegistrationResult, Submap, register
from .loop import LoopConfig, LoopEdge, calibrate_zeta, detect, gate_radius, propose_candidates
from .pipeline import Pipeline, PipelineResult, run
from .posegraph import PoseGraph, optimize
from .synth import SceneSpec, square_loop_spec, straight_line_spec, synth_dataset
from .taxonomy import LabelTaxonomy, SemanticLabel

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "PipelineConfig", "RunConfig",
    "DatasetError", "SemanticScan", "read_scan", "read_trajectory", "write_trajectory",
    "EvalReport", "ate", "evaluate", "kitti_rpe",
    "FeatureConfig", "FeatureSet", "extract_features",
    "Pose",
    "GraphConfig", "SemanticGraph", "build_graph", "similarity",
    "IcpConfig", "RegistrationError", "RegistrationResult", "Submap", "register",
    "LoopConfig", "LoopEdge", "calibrate_zeta", "detect", "gate_radius", "propose_candidates",
    "Pipeline", "PipelineResult", "run",
    "PoseGraph", "optimize",
    "SceneSpec", "square_loop_spec", "straight_line_spec", "synth_dataset",
    "LabelTaxonomy", "SemanticLabel",
]
