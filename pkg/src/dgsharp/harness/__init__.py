from .config import ConfigError, ExperimentConfig, load_config
from .manifest import RunManifest

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "RunManifest"]
