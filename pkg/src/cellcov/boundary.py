"""Per-cell coverage boundaries and contour extraction.

A CoverageModel stacks one boundary per signal band for a cell. Each
boundary is either a fitted RbfOneClassSvm or a convex-hull baseline;
both expose predict(X) in {+1, -1} so they are interchangeable.

Contour extraction runs marching squares on the decision function with
linear interpolation along cell edges. Segments are oriented with the
covered side on the left, so outer rings come out counter-clockwise
and holes clockwise. Ambiguous saddle cells are resolved by the sign
of the decision function sampled at the cell center.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import (
    CellcovError,
    ConvergenceError,
    DegenerateHullError,
    ModelFormatError,
    ModelVersionError,
)
from .geometry import Polygon, convex_hull
from .measurements import BAND_BY_ORDINAL, SignalBand
from .ocsvm import (
    MODEL_FORMAT_VERSION,
    RbfOneClassSvm,
    model_from_dict,
    model_to_dict,
)
from .validation import as_bbox, as_point, as_points

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 256
MIN_RESOLUTION = 16
BBOX_MARGIN = 0.1


class ConvexHullBoundary(BaseEstimator):
    """Baseline: covered wherever the training-point hull reaches."""

    def fit(self, X, y=None):
        X = as_points(X)
        self.hull_ = convex_hull(X)
        self.n_train_ = X.shape[0]
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "hull_"):
            raise CellcovError("ConvexHullBoundary is not fitted")
        return np.where(self.hull_.contains_many(X), 1, -1)

    def covers(self, X) -> np.ndarray:
        return self.predict(X) == 1


@dataclass
class BandBoundary:
    """One band's fitted boundary plus its training metadata."""

    band: SignalBand
    method: str  # "ocsvm" | "hull"
    estimator: RbfOneClassSvm | ConvexHullBoundary
    mode: str  # "partition" | "cumulative"
    n_train: int

    def covers(self, X) -> np.ndarray:
        return self.estimator.predict(X) == 1

    @property
    def params(self) -> dict:
        if self.method == "ocsvm":
            return {"nu": self.estimator.nu, "gamma": self.estimator.gamma}
        return {"nu": None, "gamma": None}


@dataclass
class CoverageModel:
    """Per-cell stack of band boundaries."""

    cell_id: str
    mode: str
    coordinate_mode: str
    boundaries: dict[int, BandBoundary]

    def highest_band_at(self, p) -> SignalBand | None:
        """Strongest band whose boundary covers p, or None."""
        pt = as_point(p)[None, :]
        for ordinal in sorted(self.boundaries, reverse=True):
            if bool(self.boundaries[ordinal].covers(pt)[0]):
                return self.boundaries[ordinal].band
        return None


def build_coverage_model(
    points_by_band: dict[int, np.ndarray],
    *,
    cell_id: str = "",
    method: str = "ocsvm",
    mode: str = "partition",
    nu: float = 0.05,
    gamma: float = 1e4,
    tol: float = 1e-4,
    max_iter: int = 100_000,
    min_points: int = 20,
    coordinate_mode: str = "degrees",
) -> tuple[CoverageModel, list[dict]]:
    """Train one boundary per band with enough points.

    In cumulative mode the training set for band b is the union of
    points from b and every stronger band. Failures are isolated: a
    band that cannot train is reported in the skip list and the rest
    proceed.
    """
    if method not in ("ocsvm", "hull"):
        raise ValueError(f"method must be 'ocsvm' or 'hull', got {method!r}")
    if mode not in ("partition", "cumulative"):
        raise ValueError(f"mode must be 'partition' or 'cumulative', got {mode!r}")
    arrays = {
        int(b): as_points(pts, name=f"band {b}") for b, pts in points_by_band.items()
    }
    boundaries: dict[int, BandBoundary] = {}
    skips: list[dict] = []
    for ordinal in sorted(arrays, reverse=True):
        if mode == "cumulative":
            stack = [arrays[o] for o in sorted(arrays, reverse=True) if o >= ordinal]
            train = np.concatenate(stack) if stack else arrays[ordinal]
        else:
            train = arrays[ordinal]
        if train.shape[0] < min_points:
            skips.append(
                {
                    "cell_id": cell_id,
                    "band": ordinal,
                    "reason": f"below min_points ({train.shape[0]} < {min_points})",
                }
            )
            continue
        try:
            if method == "ocsvm":
                est: RbfOneClassSvm | ConvexHullBoundary = RbfOneClassSvm(
                    nu=nu, gamma=gamma, tol=tol, max_iter=max_iter
                ).fit(train)
            else:
                est = ConvexHullBoundary().fit(train)
        except (ConvergenceError, DegenerateHullError) as exc:
            skips.append({"cell_id": cell_id, "band": ordinal, "reason": str(exc)})
            continue
        boundaries[ordinal] = BandBoundary(
            band=BAND_BY_ORDINAL[ordinal],
            method=method,
            estimator=est,
            mode=mode,
            n_train=int(train.shape[0]),
        )
    model = CoverageModel(
        cell_id=cell_id,
        mode=mode,
        coordinate_mode=coordinate_mode,
        boundaries=boundaries,
    )
    return model, skips


# -- contour extraction ----------------------------------------------

# Directed segments per marching-squares case, keyed by the 4-bit
# corner pattern (A=1 bottom-left, B=2 bottom-right, C=4 top-right,
# D=8 top-left; bit set where f >= 0). Directions keep the covered
# region on the left of travel.
_SEGMENTS: dict[int, tuple[tuple[str, str], ...]] = {
    1: (("S", "W"),),
    2: (("E", "S"),),
    3: (("E", "W"),),
    4: (("N", "E"),),
    6: (("N", "S"),),
    7: (("N", "W"),),
    8: (("W", "N"),),
    9: (("S", "N"),),
    11: (("E", "N"),),
    12: (("W", "E"),),
    13: (("S", "E"),),
    14: (("W", "S"),),
}
_SADDLE_5 = {True: (("S", "E"), ("N", "W")), False: (("S", "W"), ("N", "E"))}
_SADDLE_10 = {True: (("W", "S"), ("E", "N")), False: (("E", "S"), ("W", "N"))}


def _edge_key(side: str, i: int, j: int) -> tuple[str, int, int]:
    if side == "S":
        return ("h", i, j)
    if side == "N":
        return ("h", i, j + 1)
    if side == "W":
        return ("v", i, j)
    return ("v", i + 1, j)  # E


def default_bbox(model: RbfOneClassSvm, margin: float = BBOX_MARGIN) -> tuple:
    """Axis-aligned box around the support vectors with a relative margin."""
    sv = model.support_vectors_
    x0, y0 = sv.min(axis=0)
    x1, y1 = sv.max(axis=0)
    span = max(x1 - x0, y1 - y0, 1e-9)
    pad = margin * span
    return (float(x0 - pad), float(y0 - pad), float(x1 + pad), float(y1 + pad))


def _bbox_has_sv_margin(bbox, model: RbfOneClassSvm, margin: float) -> bool:
    x0, y0, x1, y1 = bbox
    sv = model.support_vectors_
    sx0, sy0 = sv.min(axis=0)
    sx1, sy1 = sv.max(axis=0)
    pad = margin * max(sx1 - sx0, sy1 - sy0, 0.0)
    return (
        x0 <= sx0 - pad and y0 <= sy0 - pad and x1 >= sx1 + pad and y1 >= sy1 + pad
    )


def extract_contour(
    model: RbfOneClassSvm, bbox, resolution: int = DEFAULT_RESOLUTION
) -> list[Polygon]:
    """Closed polygons of the f = 0 level set inside bbox.

    Returns an empty list (with a log diagnostic) when the decision
    function has one sign on the whole sample grid. If the covered
    region touches the bbox edge, rings are closed along a virtual
    ring of outside samples just beyond the box.
    """
    x0, y0, x1, y1 = as_bbox(bbox)
    resolution = int(resolution)
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if not _bbox_has_sv_margin((x0, y0, x1, y1), model, BBOX_MARGIN):
        logger.warning(
            "extract_contour: bbox %s does not enclose the support vectors "
            "with a %.0f%% margin; boundary may be clipped",
            (x0, y0, x1, y1),
            100 * BBOX_MARGIN,
        )
    xs = np.linspace(x0, x1, resolution + 1)
    ys = np.linspace(y0, y1, resolution + 1)
    grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    F = model.decision_function(grid).reshape(len(xs), len(ys))

    inside = F >= 0.0
    if inside.all() or (~inside).all():
        logger.info(
            "extract_contour: decision function has one sign over the grid "
            "(all %s); no boundary to extract",
            "covered" if inside.all() else "uncovered",
        )
        return []

    border_covered = (
        inside[0, :].any() or inside[-1, :].any()
        or inside[:, 0].any() or inside[:, -1].any()
    )
    if border_covered:
        logger.warning("extract_contour: covered region reaches the bbox edge; clipping")
        dx = xs[1] - xs[0]
        dy = ys[1] - ys[0]
        xs = np.concatenate([[xs[0] - dx], xs, [xs[-1] + dx]])
        ys = np.concatenate([[ys[0] - dy], ys, [ys[-1] + dy]])
        Fp = np.full((len(xs), len(ys)), -1.0)
        Fp[1:-1, 1:-1] = F
        F = Fp
        inside = F >= 0.0

    case = (
        inside[:-1, :-1].astype(np.int8)
        + 2 * inside[1:, :-1]
        + 4 * inside[1:, 1:]
        + 8 * inside[:-1, 1:]
    )

    # Resolve saddles with the model's value at the cell center.
    saddle_idx = np.argwhere((case == 5) | (case == 10))
    saddle_inside: dict[tuple[int, int], bool] = {}
    if len(saddle_idx):
        centers = np.column_stack(
            [
                0.5 * (xs[saddle_idx[:, 0]] + xs[saddle_idx[:, 0] + 1]),
                0.5 * (ys[saddle_idx[:, 1]] + ys[saddle_idx[:, 1] + 1]),
            ]
        )
        fc = model.decision_function(centers)
        saddle_inside = {
            (int(i), int(j)): bool(v >= 0.0)
            for (i, j), v in zip(saddle_idx, fc)
        }

    crossings: dict[tuple[str, int, int], tuple[float, float]] = {}

    def crossing(key: tuple[str, int, int]) -> tuple[float, float]:
        pt = crossings.get(key)
        if pt is not None:
            return pt
        kind, i, j = key
        if kind == "h":
            f0, f1 = F[i, j], F[i + 1, j]
            t = f0 / (f0 - f1)
            pt = (float(xs[i] + t * (xs[i + 1] - xs[i])), float(ys[j]))
        else:
            f0, f1 = F[i, j], F[i, j + 1]
            t = f0 / (f0 - f1)
            pt = (float(xs[i]), float(ys[j] + t * (ys[j + 1] - ys[j])))
        crossings[key] = pt
        return pt

    segments: dict[tuple[str, int, int], tuple[str, int, int]] = {}
    for i, j in np.argwhere((case != 0) & (case != 15)):
        c = int(case[i, j])
        if c == 5:
            pairs = _SADDLE_5[saddle_inside[(int(i), int(j))]]
        elif c == 10:
            pairs = _SADDLE_10[saddle_inside[(int(i), int(j))]]
        else:
            pairs = _SEGMENTS[c]
        for start, end in pairs:
            segments[_edge_key(start, int(i), int(j))] = _edge_key(end, int(i), int(j))

    rings: list[Polygon] = []
    used: set[tuple[str, int, int]] = set()
    for start in sorted(segments):
        if start in used:
            continue
        walk = []
        k = start
        while True:
            walk.append(k)
            used.add(k)
            k = segments[k]
            if k == start:
                break
        pts = [crossing(k) for k in walk]
        cleaned = [p for q, p in zip([pts[-1]] + pts[:-1], pts) if p != q]
        if len(cleaned) >= 3:
            rings.append(Polygon(np.asarray(cleaned)))
    return rings


def hull_excess_region(
    model: RbfOneClassSvm,
    hull: Polygon,
    bbox,
    resolution: int = DEFAULT_RESOLUTION,
) -> float:
    """Area inside the hull where the model says not covered.

    Grid estimate over cell centers: deterministic for a fixed bbox and
    resolution. Measures how much a convex baseline overstates coverage
    relative to the learned region.
    """
    x0, y0, x1, y1 = as_bbox(bbox)
    resolution = int(resolution)
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    dx = (x1 - x0) / resolution
    dy = (y1 - y0) / resolution
    cx = x0 + dx * (np.arange(resolution) + 0.5)
    cy = y0 + dy * (np.arange(resolution) + 0.5)
    centers = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1).reshape(-1, 2)
    in_hull = hull.contains_many(centers)
    f = model.decision_function(centers)
    n_excess = int(np.count_nonzero(in_hull & (f < 0.0)))
    return n_excess * dx * dy


# -- model files -----------------------------------------------------

def save_band_boundary(
    boundary: BandBoundary,
    path,
    *,
    cell_id: str,
    coordinate_mode: str = "degrees",
    train_window: tuple[str, str] | None = None,
) -> None:
    """Write one band boundary as a versioned JSON model file."""
    if boundary.method == "ocsvm":
        doc = model_to_dict(
            boundary.estimator,
            cell_id=cell_id,
            band=boundary.band.ordinal,
            coordinate_mode=coordinate_mode,
            train_window=train_window,
        )
    else:
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "method": "hull",
            "cell_id": cell_id,
            "band": boundary.band.ordinal,
            "coordinate_mode": coordinate_mode,
            "vertices": [[float(x), float(y)] for x, y in boundary.estimator.hull_.vertices],
            "n_train": int(boundary.estimator.n_train_),
            "train_window": list(train_window) if train_window else None,
            "mode": boundary.mode,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_band_boundary(path) -> tuple[BandBoundary, dict]:
    """Read a model file written by save_band_boundary."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt model payload: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: corrupt model payload: not an object")
    if doc.get("method") == "hull":
        version = doc.get("version")
        if version != MODEL_FORMAT_VERSION:
            raise ModelVersionError(found=str(version), expected=MODEL_FORMAT_VERSION)
        try:
            est: RbfOneClassSvm | ConvexHullBoundary = ConvexHullBoundary()
            est.hull_ = Polygon(np.asarray(doc["vertices"], dtype=np.float64))
            est.n_train_ = int(doc["n_train"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"{path}: corrupt model payload: {exc}") from exc
        meta = {
            "cell_id": doc.get("cell_id"),
            "band": doc.get("band"),
            "coordinate_mode": doc.get("coordinate_mode", "degrees"),
            "train_window": doc.get("train_window"),
        }
        method = "hull"
        n_train = est.n_train_
    else:
        est, meta = model_from_dict(doc)
        method = "ocsvm"
        n_train = est.n_train_
    ordinal = meta.get("band")
    if ordinal not in BAND_BY_ORDINAL:
        raise ModelFormatError(f"{path}: model file has no valid band ordinal")
    boundary = BandBoundary(
        band=BAND_BY_ORDINAL[ordinal],
        method=method,
        estimator=est,
        mode=doc.get("mode", "partition"),
        n_train=n_train,
    )
    return boundary, meta


def load_coverage_models(paths) -> dict[str, CoverageModel]:
    """Group model files into per-cell CoverageModels."""
    cells: dict[str, CoverageModel] = {}
    for path in sorted(str(p) for p in paths):
        boundary, meta = load_band_boundary(path)
        cell = meta.get("cell_id") or ""
        model = cells.get(cell)
        if model is None:
            model = CoverageModel(
                cell_id=cell,
                mode=boundary.mode,
                coordinate_mode=meta.get("coordinate_mode", "degrees"),
                boundaries={},
            )
            cells[cell] = model
        model.boundaries[boundary.band.ordinal] = boundary
    return cells


# -- GeoJSON export --------------------------------------------------

def _ring_coords(ring: Polygon, projection=None) -> list[list[float]]:
    v = ring.vertices
    if projection is not None:
        v = projection.to_lonlat(v)
    coords = [[float(x), float(y)] for x, y in v]
    coords.append(coords[0])
    return coords


def _assemble_polygons(rings: list[Polygon], projection=None):
    """Group contour rings into GeoJSON polygon coordinate arrays."""
    outers = [r for r in rings if r.signed_area() > 0]
    holes = [r for r in rings if r.signed_area() < 0]
    polys: list[list[list[list[float]]]] = [[_ring_coords(o, projection)] for o in outers]
    areas = [o.signed_area() for o in outers]
    for h in holes:
        probe = h.vertices[0]
        candidates = [k for k, o in enumerate(outers) if o.contains(probe)]
        if not candidates:
            logger.warning("contour hole without an enclosing ring; dropped")
            continue
        k = min(candidates, key=lambda kk: areas[kk])
        polys[k].append(_ring_coords(h, projection))
    return polys


def boundary_to_feature(
    boundary: BandBoundary,
    cell_id: str,
    *,
    mode: str,
    bbox=None,
    resolution: int = DEFAULT_RESOLUTION,
    projection=None,
) -> dict | None:
    """One GeoJSON feature for a band boundary; None when degenerate."""
    if boundary.method == "hull":
        geometry = {
            "type": "Polygon",
            "coordinates": [_ring_coords(boundary.estimator.hull_, projection)],
        }
    else:
        est = boundary.estimator
        box = bbox if bbox is not None else default_bbox(est)
        rings = extract_contour(est, box, resolution)
        if not rings:
            logger.warning(
                "cell %s band %d: no contour inside bbox; feature omitted",
                cell_id,
                boundary.band.ordinal,
            )
            return None
        polys = _assemble_polygons(rings, projection)
        if len(polys) == 1:
            geometry = {"type": "Polygon", "coordinates": polys[0]}
        else:
            geometry = {"type": "MultiPolygon", "coordinates": polys}
    p = boundary.params
    return {
        "type": "Feature",
        "geometry": geometry,
        "properties": {
            "cell_id": cell_id,
            "band": boundary.band.ordinal,
            "method": boundary.method,
            "nu": p["nu"],
            "gamma": p["gamma"],
            "mode": mode,
        },
    }


def models_to_geojson(
    models: dict[str, CoverageModel],
    *,
    bbox=None,
    resolution: int = DEFAULT_RESOLUTION,
) -> dict:
    """FeatureCollection over every band boundary of every cell.

    Coordinates are emitted in GeoJSON lon/lat order; models trained in
    a projected frame are mapped back to degrees.
    """
    features = []
    for cell_id in sorted(models):
        model = models[cell_id]
        projection = None
        if model.coordinate_mode != "degrees":
            from .geometry import projection_from_tag

            projection = projection_from_tag(model.coordinate_mode)
        for ordinal in sorted(model.boundaries):
            feat = boundary_to_feature(
                model.boundaries[ordinal],
                cell_id,
                mode=model.mode,
                bbox=bbox,
                resolution=resolution,
                projection=projection,
            )
            if feat is not None:
                features.append(feat)
    return {"type": "FeatureCollection", "features": features}
