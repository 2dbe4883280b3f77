"""Attribution-based planning-risk diagnostics for multi-camera planners."""

__version__ = "0.1.0"

from .attribution import (AttributionResult, Objective, ObjectiveConfig, OrderedSelection, SearchConfig,
                          exact_attribute, exact_greedy, greedy_call_count, hierarchical_attribute, load_result,
                          nec_score, objective, rise_attribute, save_result, score_ordering, suff_score)
from .controls import extended_controls, matched_controls, project_box
from .core import (CameraCalibration, EgoStatus, ObjectAnnotation, ObstacleBox, SampleRecord, Scene, SceneManifest,
                   SaliencyTensor, ViewTensor, load_manifest, read_tensor, save_manifest, write_tensor)
from .errors import (ArgumentError, DataError, FormatError, PlannerError, PlanRiskError, SearchAborted,
                     TransportError, TruncationError, ValidationError, ZeroMassError)
from .evaluation import auroc, scene_bootstrap, scene_splits, spearman, triage
from .faithfulness import insertion_deletion
from .fit import FeatureMatrix, FitResult, logistic_fit, ridge_fit
from .partition import (GroupAssignment, RegionPartition, grid_partition, group_regions, load_partition,
                        mask_views, save_partition, singleton_groups, slic_partition)
from .planner import ModularPlannerSpec, PlannerHandle, SaturatingPlannerSpec, SyntheticPlanner, load_planner_specs
from .protocol import PlannerServer, RemotePlanner, serve_external
from .risk import ade, collision_any
from .stats import attribution_stats, entropy_decomposition, gini, normalize_saliency, spatial_variance
from .submodular import CoverageFunction, check_grouped, check_properties, eval_coverage, greedy_ratio
from .synth import SynthSpec, generate, recovery_score
