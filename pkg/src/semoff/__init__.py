"""Energy-aware semantic task offloading with federated multi-agent PPO."""
from .config import ConfigError, ScenarioConfig, load_config

__version__ = "0.1.0"
__all__ = ["ConfigError", "ScenarioConfig", "load_config", "__version__"]
