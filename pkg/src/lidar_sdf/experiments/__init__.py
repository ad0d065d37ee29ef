"""Experiment harness and command line interface."""

from .config import ConfigError, RunConfig, config_from_dict, load_config

__all__ = ["ConfigError", "RunConfig", "config_from_dict", "load_config"]
