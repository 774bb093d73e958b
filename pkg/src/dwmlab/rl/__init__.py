"""From-scratch DDPG for watermark-covariance policies."""
from .agent import DdpgAgent, DdpgConfig, OuNoise, ReplayBuffer, RMSprop, clip_grad_norm, soft_update
from .checkpoint import load_actor, load_agent, save_checkpoint
from .estimator import DdpgWatermarkPolicy, sample_training_scenario
from .mlp import Mlp, squash

__all__ = [
    "DdpgAgent", "DdpgConfig", "DdpgWatermarkPolicy", "Mlp", "OuNoise", "RMSprop", "ReplayBuffer",
    "clip_grad_norm", "load_actor", "load_agent", "sample_training_scenario", "save_checkpoint", "soft_update", "squash",
]
