"""Risk-aware next-best-view selection over isotropic Gaussian scenes."""

from .core import (FAR_DEPTH, AnisotropicGaussian, Camera, IsotropicGaussian, Path, Pose,
                   RgbdImage, SceneModel, look_at)
from .fisher import (CandidateSet, FisherDiagonal, ParameterMask, accumulate_training_fisher,
                     argmax_lowest,
                     expected_information_gain, score_candidates, select_next_best_view)
from .mask import MaskParams, MaskedScene, RiskProfile, mask_environment, masking_radius, risk_profile
from .pipeline import (ExperimentConfig, ExperimentReport, StageConfig, TrainConfig,
                       closest_perceived_distribution, emit_report, run_experiment, run_variants,
                       train_scene, unproject_init, wasserstein2)
from .risk import (DistanceDistribution, average_value_at_risk, distance_distribution,
                   distance_distribution_anisotropic, level_set_risk, value_at_risk,
                   waypoint_worst_case_risk)
from .splat import loss_gradient, reconstruction_loss, render, render_jacobian_diag
from .world import (GroundTruthWorld, SceneRecipe, build_world, capture_rgbd,
                    closest_gt_distribution, ground_truth_point_cloud, sample_candidate_poses,
                    standard_room)

__version__ = "0.1.0"
