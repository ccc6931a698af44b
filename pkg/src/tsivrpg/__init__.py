"""Truncated variance-reduced policy gradient for general utilities on tabular MDPs."""
from .baselines import BaselineConfig, Reinforce, reinforce_step, run_reinforce, variance_comparison
from .envs import build_corridor, build_frozenlake8x8, build_gridworld, build_tiny, make_env
from .estimators import importance_weights, occupancy_estimate, pg_estimate
from .mdp import (MdpModel, OccupancyVector, Trajectory, TrajectoryBatch, exact_occupancy,
                  load_mdp, policy_evaluation, sample_batch, sample_trajectory, save_mdp,
                  value_iteration)
from .oracle import enumerate_trajectories, exact_expectation, exact_policy_gradient
from .policy import (LinearFeatures, TabularFeatures, load_params, log_policy_grad,
                     policy_matrix, save_params)
from .tsivr import (TSIVRPG, AlgoConfig, EpochState, RunTrace, WeightExplosionError,
                    compute_constants, epoch_anchor, gradient_mapping, inner_update, run,
                    schedule_from_epsilon, truncated_step)
from .utilities import (EntropyUtility, LinearUtility, LogBarrierUtility, SetDistanceUtility,
                        Utility)

__version__ = "0.1.0"
