"""Raise glibc's mmap/trim thresholds once per process.

The hot training/search loops allocate a handful of >128 KiB temporaries
per iteration; with stock glibc settings those go through mmap/munmap and
the page faults triple the iteration cost. Raising the thresholds keeps
the buffers on the heap for reuse. No-op on non-glibc platforms; set
OPTIPROXY_NO_MALLOC_TUNING=1 to skip.
"""

import ctypes
import ctypes.util
import os

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_THRESHOLD_BYTES = 64 * 1024 * 1024


def tune() -> bool:
    if os.environ.get("OPTIPROXY_NO_MALLOC_TUNING"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6",
                           use_errno=True)
        mallopt = libc.mallopt
        mallopt.argtypes = (ctypes.c_int, ctypes.c_int)
        mallopt.restype = ctypes.c_int
        ok = mallopt(_M_MMAP_THRESHOLD, _THRESHOLD_BYTES)
        ok &= mallopt(_M_TRIM_THRESHOLD, _THRESHOLD_BYTES)
        return bool(ok)
    except (OSError, AttributeError):
        return False
