"""Selects the A* kernel at import: compiled extension if built, else pure Python.

Set ``WWROUTER_PURE_PYTHON=1`` to force the fallback.
"""

import logging
import os

from . import _astar_py

logger = logging.getLogger(__name__)

astar_py = _astar_py.astar

try:
    from ._astar_ext import astar as astar_ext
except ImportError:  # extension not built
    astar_ext = None

if astar_ext is not None and not os.environ.get("WWROUTER_PURE_PYTHON"):
    astar = astar_ext
    BACKEND = "cython"
else:
    astar = astar_py
    BACKEND = "python"

logger.debug("A* backend: %s", BACKEND)
