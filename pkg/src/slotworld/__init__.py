"""Object-centric model-based RL from pixels on 2D block-manipulation tasks."""

from slotworld.blockworld import BlockWorld, EnvConfig
from slotworld.config import RunConfig, load_config
from slotworld.trainer import Agent, train

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "BlockWorld",
    "EnvConfig",
    "RunConfig",
    "load_config",
    "train",
    "__version__",
]
