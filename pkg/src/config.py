"""
Configuration module for hk-tangent

This module handles loading and validation of environment variables
and provides access to solver, worker and logging defaults.
"""

import logging
import os
from typing import Optional

from dotenv import load_dotenv


class ConfigurationError(Exception):
    """Raised when there's an issue with the configuration."""
    pass


_TRUE_VALUES = ('true', '1', 'yes', 'on')
_FALSE_VALUES = ('false', '0', 'no', 'off')
_LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')


class Config:
    """Configuration management class."""

    def __init__(self, env_file: Optional[str] = None):
        """
        Initialize configuration by loading environment variables.

        Args:
            env_file: Optional path to .env file. If None, searches in current directory.
        """
        if env_file:
            load_dotenv(env_file)
        else:
            load_dotenv()

        self._validate_variables()

    def _validate_variables(self) -> None:
        """Validate that every variable that is set parses to a usable value."""
        problems = []

        if self.log_level not in _LOG_LEVELS:
            problems.append(f"LOG_LEVEL must be one of {', '.join(_LOG_LEVELS)} (got {self.log_level!r})")

        for var in ('LOG_TO_FILE', 'HK_LOG_DOMAIN'):
            value = os.getenv(var)
            if value is not None and value.lower() not in _TRUE_VALUES + _FALSE_VALUES:
                problems.append(f"{var} must be a boolean flag (got {value!r})")

        checks = [
            ('HK_EPSILON_FINAL', lambda: self.epsilon_final > 0, "must be positive"),
            ('HK_EPSILON_DECAY', lambda: 0 < self.epsilon_decay < 1, "must lie in (0, 1)"),
            ('HK_MAX_ITERS_PER_EPS', lambda: self.max_iters_per_eps >= 1, "must be at least 1"),
            ('HK_TOL_MARGINAL', lambda: self.tol_marginal > 0, "must be positive"),
            ('HK_WORKERS', lambda: self.workers >= 1, "must be at least 1"),
            ('HK_SINGULAR_THRESHOLD', lambda: 0 <= self.singular_threshold <= 1, "must lie in [0, 1]"),
        ]
        for var, check, message in checks:
            try:
                ok = check()
            except ValueError:
                problems.append(f"{var} is not a number (got {os.getenv(var)!r})")
                continue
            if not ok:
                problems.append(f"{var} {message} (got {os.getenv(var)!r})")

        if problems:
            raise ConfigurationError(
                "Invalid environment configuration:\n  " + "\n  ".join(problems) + "\n"
                "Fix the values in your environment or .env file (see .env.example)."
            )

    @property
    def log_level(self) -> str:
        """Get the logging level."""
        return os.getenv('LOG_LEVEL', 'INFO').upper()

    @property
    def log_to_file(self) -> bool:
        """Check if logging to file is enabled."""
        return os.getenv('LOG_TO_FILE', 'false').lower() in _TRUE_VALUES

    @property
    def log_dir(self) -> str:
        """Get the directory for log files."""
        return os.getenv('LOG_DIR', 'logs')

    @property
    def epsilon_final(self) -> float:
        """Get the final entropic regularization strength."""
        return float(os.getenv('HK_EPSILON_FINAL', '1e-4'))

    @property
    def epsilon_decay(self) -> float:
        """Get the geometric decay factor of the epsilon schedule."""
        return float(os.getenv('HK_EPSILON_DECAY', '0.5'))

    @property
    def max_iters_per_eps(self) -> int:
        """Get the iteration budget per epsilon level."""
        return int(os.getenv('HK_MAX_ITERS_PER_EPS', '1000'))

    @property
    def tol_marginal(self) -> float:
        """Get the stopping tolerance on dual updates."""
        return float(os.getenv('HK_TOL_MARGINAL', '1e-7'))

    @property
    def log_domain(self) -> bool:
        """Check if the solver iterates in the log domain."""
        return os.getenv('HK_LOG_DOMAIN', 'true').lower() in _TRUE_VALUES

    @property
    def workers(self) -> int:
        """Get the default worker pool size for dataset commands."""
        return int(os.getenv('HK_WORKERS', '1'))

    @property
    def output_dir(self) -> str:
        """Get the default output directory for command artifacts."""
        return os.getenv('HK_OUTPUT_DIR', 'results')

    @property
    def singular_threshold(self) -> float:
        """Get the coverage threshold used to detect singular target mass."""
        return float(os.getenv('HK_SINGULAR_THRESHOLD', '0.5'))


# Global config instance
config = Config()


def setup_logging() -> logging.Logger:
    """
    Set up logging configuration based on config settings.

    Returns:
        Configured logger instance
    """
    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'
    formatter = logging.Formatter(log_format, date_format)

    logger = logging.getLogger('hk_tangent')
    logger.setLevel(getattr(logging, config.log_level))

    # Clear any existing handlers
    logger.handlers.clear()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, config.log_level))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if config.log_to_file:
        os.makedirs(config.log_dir, exist_ok=True)
        file_handler = logging.FileHandler(
            os.path.join(config.log_dir, 'hk_tangent.log'),
            encoding='utf-8'
        )
        file_handler.setLevel(getattr(logging, config.log_level))
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger
