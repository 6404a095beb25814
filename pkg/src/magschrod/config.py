"""Process-wide FFT worker count (set by the CLI, read by the transforms)."""
from __future__ import annotations

import os

_THREADS = None


def set_threads(n) -> None:
    global _THREADS
    _THREADS = None if n is None else max(1, int(n))


def get_threads() -> int:
    if _THREADS is not None:
        return _THREADS
    env = os.environ.get("MST_THREADS")
    return max(1, int(env)) if env else 1
