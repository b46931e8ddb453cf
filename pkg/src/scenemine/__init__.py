"""Criticality mining for multi-agent driving scenarios.

Extracts individual and pairwise safety features from recorded scenarios,
scores trajectories under recorded and counterfactual (constant-progress)
futures, builds score-ordered distribution-shift splits, and evaluates
prediction files against ground-truth futures.
"""

from .anomaly import (TrafficPrimitiveAnomaly, audit_fit_leakage, to_pair_primitive,
                      to_primitive)
from .config import (INDIVIDUAL_FEATURES, INTERACTION_FEATURES, ConfigError,
                     PipelineConfig, load_config)
from .evaluate import (AgentPrediction, EvalError, EvalReport, evaluate_predictions,
                       gt_as_predictions, gt_collision_rate, load_predictions,
                       loss_weight_export, min_ade_fde, min_collision_mode)
from .geometry import (FrenetTrajectory, Polyline, frenet_decode, frenet_encode,
                       wrap_angle)
from .individual import (IndividualFeatures, conflict_regions, kinematic_profile,
                         lane_following_fraction, speed_limit_excess, waiting_period)
from .interaction import (InteractionFeatures, PairTrack, detect_collisions,
                          delta_mttcp, extract_interaction, find_interaction_pairs,
                          leader_follower_metrics)
from .lanes import LaneSequence, assign_lane_sequence, build_reference
from .pipeline import (ScenarioFeatures, extract_corpus, extract_scenario_features,
                       fill_anomaly, fit_anomaly_model, fit_normalizer,
                       read_feature_tables, read_score_file, run_features,
                       score_corpus, score_scenario, write_feature_tables,
                       write_score_file)
from .report import correlation_matrix, score_histogram
from .scenario import (ParseError, Scenario, ValidationReport, parse_scenario,
                       serialize_scenario, split_history_future, validate_scenario)
from .scoring import (FeatureNormalizer, SceneScore, TrajectoryScoreSet,
                      aggregate_scene, future_extrapolate, scene_value,
                      trajectory_score)
from .splits import (SplitAssignment, SplitError, read_manifest, scoring_split,
                     uniform_split, write_manifest)
from .synth import SynthParams, gen_document, gen_scenario, write_corpus

__version__ = "0.1.0"

__all__ = [
    "AgentPrediction", "ConfigError", "EvalError", "EvalReport",
    "FeatureNormalizer", "FrenetTrajectory", "INDIVIDUAL_FEATURES",
    "INTERACTION_FEATURES", "IndividualFeatures", "InteractionFeatures",
    "LaneSequence", "PairTrack", "ParseError", "PipelineConfig", "Polyline",
    "Scenario", "ScenarioFeatures", "SceneScore", "SplitAssignment", "SplitError",
    "SynthParams", "TrafficPrimitiveAnomaly", "TrajectoryScoreSet",
    "ValidationReport", "aggregate_scene", "assign_lane_sequence",
    "audit_fit_leakage", "build_reference", "conflict_regions",
    "correlation_matrix", "delta_mttcp", "detect_collisions",
    "evaluate_predictions", "extract_corpus", "extract_interaction",
    "extract_scenario_features", "fill_anomaly", "find_interaction_pairs",
    "fit_anomaly_model", "fit_normalizer", "frenet_decode", "frenet_encode",
    "future_extrapolate", "gen_document", "gen_scenario", "gt_as_predictions",
    "gt_collision_rate", "kinematic_profile", "lane_following_fraction",
    "leader_follower_metrics", "load_config", "load_predictions",
    "loss_weight_export", "min_ade_fde", "min_collision_mode", "parse_scenario",
    "read_feature_tables", "read_manifest", "read_score_file", "run_features",
    "scene_value", "score_corpus", "score_histogram", "score_scenario",
    "scoring_split", "serialize_scenario", "speed_limit_excess",
    "split_history_future", "to_pair_primitive", "to_primitive",
    "trajectory_score", "uniform_split", "validate_scenario", "waiting_period",
    "wrap_angle", "write_corpus", "write_feature_tables", "write_manifest",
    "write_score_file",
]
