"""Process-level performance knobs for the training loops.

Training repeatedly allocates ~100 MB of im2col scratch per step; with
glibc defaults those blocks are mmap'd and returned to the OS on free,
so every step pays page faults. Raising the mmap/trim thresholds keeps
freed blocks on the heap for reuse. No-op on non-glibc platforms.
"""

from __future__ import annotations

import ctypes

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def enable_heap_reuse() -> None:
    global _done
    if _done:
        return
    _done = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
    except (OSError, AttributeError):
        pass
