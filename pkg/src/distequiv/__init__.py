"""Distribution- and statistic-equivalent models for risk-sensitive planning in tabular MDPs."""

__version__ = "0.1.0"

from .core import (
    DiscreteDistribution,
    Policy,
    TabularMDP,
    Trajectory,
    enumerate_deterministic_policies,
    make_rng,
    random_mdp,
    sample_returns,
    sample_trajectory,
    validate_mdp,
)
from .distdp import (
    CategoricalGrid,
    CategoricalReturn,
    ReturnFunction,
    categorical_project,
    distributional_backup,
    return_distribution,
    value_fixed_point,
    wasserstein1,
)
from .envs import ENV_NAMES, BuiltEnv, EnvSpec, build_env, fig1_counterexample, pve_model_of_fig1
from .experiment import ExperimentConfig, run_experiment
from .model_learn import (
    ApproxModel,
    Criterion,
    PolicySet,
    TransitionDataset,
    collect_dataset,
    equivalence_loss,
    learn_model,
    membership_check,
    mle_model,
    sample_policies,
)
from .planning import cvar_greedy_vi, cvar_vi, mean_variance_vi, plan
from .risk import RiskSpec, UniformDistribution, dominates, risk_value
from .sketch import ImputationSpec, SketchSpec, apply_sketch, impute, moment_backup, sf_dp

__all__ = [name for name in dir() if not name.startswith("_")]
