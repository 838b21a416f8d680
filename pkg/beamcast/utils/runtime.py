"""Runtime mode detection (reference-deterministic vs parallel)"""

import logging
import os

logger = logging.getLogger(__name__)

_TRUTHY = ("1", "true", "yes")


def reference_mode() -> bool:
    """Return True when reference-deterministic mode is requested.

    Environment variables:
        BEAMCAST_REFERENCE=1 - Disable all parallelism (single worker everywhere)
    """
    return os.environ.get("BEAMCAST_REFERENCE", "0").lower() in _TRUTHY


def get_worker_count() -> int:
    """Number of workers to use for embarrassingly parallel work.

    Environment variables:
        BEAMCAST_REFERENCE=1 - Force a single worker
        BEAMCAST_WORKERS=N   - Explicit worker count (default: CPU count, capped at 8)

    Returns:
        Worker count >= 1
    """
    if reference_mode():
        logger.debug("Reference mode via BEAMCAST_REFERENCE, using 1 worker")
        return 1

    requested = os.environ.get("BEAMCAST_WORKERS", "").strip()
    if requested:
        try:
            return max(1, int(requested))
        except ValueError:
            logger.warning("Ignoring non-integer BEAMCAST_WORKERS=%r", requested)

    return max(1, min(8, os.cpu_count() or 1))
