# src/config.py
"""Configuration module for Fair GLM.

This module handles:
- Loading environment variables from .env
- Configuring logging through a Rich handler
- Providing configuration constants for the application
"""

import logging
import os
from pathlib import Path
from typing import List

import numpy as np
from dotenv import load_dotenv
from rich.logging import RichHandler


def load_env() -> bool:
    """Read FAIRGLM_* overrides from a .env file.

    The repository root wins over the working directory. Variables already
    set in the environment are never overwritten.
    """
    repo_env = Path(__file__).resolve().parent.parent / '.env'
    return load_dotenv(repo_env if repo_env.is_file() else None, override=False)


def configure_logging(level: str = None) -> None:
    """Install a single Rich handler on the root logger.

    Calling this more than once only updates the level.

    Args:
        level: Logging level name. Defaults to FAIRGLM_LOG_LEVEL.
    """
    level = (level or LOG_LEVEL).upper()
    root = logging.getLogger()

    if not any(isinstance(h, RichHandler) for h in root.handlers):
        handler = RichHandler(show_path=False, rich_tracebacks=False)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        root.addHandler(handler)

    root.setLevel(level)


def default_lambda_grid() -> List[float]:
    """Zero followed by 20 log-spaced weights in [1e-3, 10]."""
    return [0.0] + [float(v) for v in np.logspace(-3, 1, 20)]


# Load environment variables at module import
load_env()

# Configuration constants (loaded after load_env)
LOG_LEVEL = os.getenv('FAIRGLM_LOG_LEVEL', 'WARNING')
DEFAULT_THREADS = int(os.getenv('FAIRGLM_THREADS', '1'))
DEFAULT_OUTPUT_DIR = os.getenv('FAIRGLM_OUTPUT_DIR', 'runs')
DEFAULT_MAX_ITERATIONS = int(os.getenv('FAIRGLM_MAX_ITERATIONS', '200'))
DEFAULT_GRADIENT_TOLERANCE = float(os.getenv('FAIRGLM_GRADIENT_TOLERANCE', '1e-8'))

# Missing-value tokens recognised when loading CSV files
MISSING_TOKENS = ["", "NA", "N/A", "NaN", "nan", "null", "?"]
