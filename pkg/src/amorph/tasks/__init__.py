from .config import (FlippingReward, GatheringReward, SpreadingReward, TaskConfig,
                     TaskKind)
from .env import ManipulationEnv, StepResult, curriculum_update
from .evaluate import RandomPolicy, evaluate_policy, primary_metric_name, rollout_metric
from .rewards import (flipping_reward, gathering_reward, material_angular_velocity,
                      occupied_cells, spreading_reward)

__all__ = [
    "FlippingReward", "GatheringReward", "SpreadingReward", "TaskConfig", "TaskKind",
    "ManipulationEnv", "StepResult", "curriculum_update",
    "RandomPolicy", "evaluate_policy", "primary_metric_name", "rollout_metric",
    "flipping_reward", "gathering_reward", "material_angular_velocity",
    "occupied_cells", "spreading_reward",
]
