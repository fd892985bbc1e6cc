from .config import ConfigError, ExperimentConfig, load_config
from .main import main

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "main"]
