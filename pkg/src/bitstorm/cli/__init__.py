"""Command-line surface and campaign configuration."""
from .config import CampaignConfig, ParseError, ValidationError, parse_config
from .main import main, run_command

__all__ = ["CampaignConfig", "ParseError", "ValidationError", "parse_config", "main", "run_command"]
