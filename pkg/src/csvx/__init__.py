"""Counterfactual Shapley attributions for tabular reinforcement learning agents."""

from .core import Coalition, EnvSpec, FeatureSpace, mask_state
from .envs import make_env

__version__ = "0.1.0"

__all__ = ["Coalition", "EnvSpec", "FeatureSpace", "make_env", "mask_state", "__version__"]
