import logging
import os
from typing import Optional

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


def configure_logging(level: Optional[str] = None) -> int:
    """Configure the root logger once; returns the numeric level."""
    name = (level or os.getenv("FACTORIZER_LOG_LEVEL") or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ValueError(f"unknown log level '{name}'")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
    return numeric
