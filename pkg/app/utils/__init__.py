"""Utility modules."""

from app.utils.config_parser import RunConfigParser, load_config, load_config_file, render_config

__all__ = ["RunConfigParser", "load_config", "load_config_file", "render_config"]
