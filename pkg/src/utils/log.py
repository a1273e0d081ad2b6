import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOG_LEVEL_ENV = "SHUFFLESCAN_LOG_LEVEL"


def configure_logging(level: Optional[str] = None) -> None:
    """Send library logs to stderr; the level falls back to the environment, then WARNING."""
    level = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
