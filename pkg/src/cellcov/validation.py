"""Input validation helpers for array-shaped arguments."""

from __future__ import annotations

import numpy as np


def as_points(x, name: str = "X") -> np.ndarray:
    """Coerce to a float64 array of shape (n, 2) with finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return arr.copy()


def as_point(p, name: str = "point") -> np.ndarray:
    """Coerce to a single finite (2,) float64 point."""
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"{name} must be a single (x, y) pair")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite coordinates")
    return arr.copy()


def as_bbox(bbox) -> tuple[float, float, float, float]:
    """Validate an (xmin, ymin, xmax, ymax) rectangle."""
    vals = [float(v) for v in bbox]
    if len(vals) != 4:
        raise ValueError("bbox must be (xmin, ymin, xmax, ymax)")
    x0, y0, x1, y1 = vals
    if not all(np.isfinite(vals)):
        raise ValueError("bbox has non-finite bounds")
    if not (x0 < x1 and y0 < y1):
        raise ValueError(f"bbox must have positive extent, got {vals}")
    return x0, y0, x1, y1


def check_in_unit_interval(value: float, name: str, *, closed_low: bool = True) -> float:
    v = float(value)
    if not np.isfinite(v) or v < 0.0 or v > 1.0 or (not closed_low and v == 0.0):
        lo = "[0" if closed_low else "(0"
        raise ValueError(f"{name} must be in {lo}, 1], got {value!r}")
    return v
