from .baselines import (
    OrilConfig,
    baseline_bc_step,
    baseline_combined_step,
    fit_reward_model,
    oril_label,
    uds_merge,
)
from .bundle import Batch, NetworkBundle, labeled_batch, make_bundle, pair_batch
from .config import MEASURES, AlgoConfig
from .iql import awr_actor_loss, iql_step, value_loss
from .losses import (
    DiscrepancyWeights,
    discrepancy,
    expectile_loss,
    kappa_cosine,
    kappa_variant,
    mse_loss,
    uniform_weights,
    weighted_actor_loss,
    weighted_critic_loss,
)
from .ludor import PHASES, ludor_train_step, pretrain_teacher, teacher_bc_step
from .td3bc import actor_loss, bc_term, critic_loss, td3bc_step

__all__ = [
    "OrilConfig", "baseline_bc_step", "baseline_combined_step", "fit_reward_model", "oril_label", "uds_merge",
    "Batch", "NetworkBundle", "labeled_batch", "make_bundle", "pair_batch",
    "MEASURES", "AlgoConfig",
    "awr_actor_loss", "iql_step", "value_loss",
    "DiscrepancyWeights", "discrepancy", "expectile_loss", "kappa_cosine", "kappa_variant", "mse_loss",
    "uniform_weights", "weighted_actor_loss", "weighted_critic_loss",
    "PHASES", "ludor_train_step", "pretrain_teacher", "teacher_bc_step",
    "actor_loss", "bc_term", "critic_loss", "td3bc_step",
]
