"""Backend selection: compiled extension if available, numpy fallback otherwise.

Set RECURRENCE_LAB_PURE=1 to force the pure-numpy backend.
"""

import os

if os.environ.get("RECURRENCE_LAB_PURE") == "1":
    from . import _kernels_py as backend
else:
    try:
        from . import _kernels as backend  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as backend

COMPILED = backend.COMPILED

torus_orbit_hits = backend.torus_orbit_hits
torus_orbit_hits_flagged = backend.torus_orbit_hits_flagged
linear_orbit_hits = backend.linear_orbit_hits
linear_orbit_hits_flagged = backend.linear_orbit_hits_flagged
torus_event_joint = backend.torus_event_joint
linear_event_joint = backend.linear_event_joint
torus_window_counts = backend.torus_window_counts
linear_window_counts = backend.linear_window_counts
torus_iterate = backend.torus_iterate
