from __future__ import annotations

import logging

from scree.env import log_level_from_env

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
NOISY_LOGGERS = ("urllib3", "geopy")


def configure_logging(level: str | int | None = None) -> None:
    resolved = level if level is not None else log_level_from_env()
    logging.basicConfig(level=resolved, format=LOG_FORMAT)
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)
