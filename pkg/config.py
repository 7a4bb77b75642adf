# config.py
import logging
import os

from dotenv import load_dotenv

load_dotenv()

# Default output directory for CLI runs and checkpoints
OUTPUT_DIR = os.getenv("LIGHTN_OUTPUT_DIR", "./outputs")

LOG_LEVEL = os.getenv("LIGHTN_LOG_LEVEL", "INFO")

DEFAULT_SEED = int(os.getenv("LIGHTN_DEFAULT_SEED", "0"))

# Base layer of every CLI run configuration; --config and flags override it
RUN_CONFIG_PATH = os.getenv("LIGHTN_RUN_CONFIG", os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.json"))

# Enables the desk-scale acceptance runs in tests (minutes of CPU)
RUN_SLOW = bool(os.getenv("LIGHTN_RUN_SLOW"))


def configure_logging(level: str = None):
    """Configure root logging once for an entry point"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def output_path(*parts: str) -> str:
    """Join parts under the output directory, creating it on demand"""
    os.makedirs(OUTPUT_DIR, exist_ok=True)
    return os.path.join(OUTPUT_DIR, *parts)
