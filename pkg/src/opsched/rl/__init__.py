from .baselines import cpu_only, dp_schedule, gpu_only, greedy_schedule, static_threshold_schedule
from .buffer import ReplayBuffer, Transition
from .env import STATE_DIM, EpisodeDone, SchedulingEnv, reward
from .sac import SacAgent, SacConfig, TrainResult, sac_update, train_sac

__all__ = ["cpu_only", "dp_schedule", "gpu_only", "greedy_schedule", "static_threshold_schedule",
           "ReplayBuffer", "Transition", "STATE_DIM", "EpisodeDone", "SchedulingEnv", "reward",
           "SacAgent", "SacConfig", "TrainResult", "sac_update", "train_sac"]
