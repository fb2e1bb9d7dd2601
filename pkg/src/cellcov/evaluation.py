"""Scoring, grid search, and hull-vs-OC-SVM comparison.

Precision and recall are undefined (None), not zero, when their
denominator is zero; undefined scores are excluded from aggregation.
Grid search is an exhaustive scan with a deterministic tie-break:
among equal F1, the smaller nu wins, then the smaller gamma.
"""

from __future__ import annotations

import hashlib
import io
import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .boundary import ConvexHullBoundary
from .errors import ConvergenceError, DegenerateHullError, EvaluationError
from .measurements import (
    BAND_BY_ORDINAL,
    DEFAULT_MIN_POINTS,
    Dataset,
    partition,
    points_of,
    temporal_split,
)
from .ocsvm import RbfOneClassSvm
from .validation import as_points

logger = logging.getLogger(__name__)

_EMPTY = np.empty((0, 2), dtype=np.float64)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None


def f1(precision: float, recall: float) -> float:
    """Harmonic mean, with 0 when both inputs are 0."""
    for name, v in (("precision", precision), ("recall", recall)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v!r}")
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1_of(counts: ConfusionCounts) -> float | None:
    """F1 from counts; None when recall is undefined.

    A defined recall of 0 forces F1 = 0 even when precision is
    undefined (no positive predictions at all).
    """
    r = counts.recall
    if r is None:
        return None
    if r == 0.0:
        return 0.0
    # tp > 0 here, so precision is defined and positive
    return f1(counts.precision, r)


def evaluate_band(predictor, positives, negatives) -> ConfusionCounts:
    """Count predictions against labeled validation points."""
    positives = as_points(positives, name="positives") if len(positives) else _EMPTY
    negatives = as_points(negatives, name="negatives") if len(negatives) else _EMPTY
    tp = fn = fp = tn = 0
    if len(positives):
        pos_hit = predictor.predict(positives) == 1
        tp = int(np.count_nonzero(pos_hit))
        fn = int(len(positives) - tp)
    if len(negatives):
        neg_hit = predictor.predict(negatives) == 1
        fp = int(np.count_nonzero(neg_hit))
        tn = int(len(negatives) - fp)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid; defaults follow the reference study."""

    nu_values: tuple[float, ...] = (0.02, 0.04, 0.06, 0.08)
    gamma_values: tuple[float, ...] = (1e4, 2e4, 3e4, 4e4)

    def __post_init__(self):
        object.__setattr__(self, "nu_values", tuple(float(v) for v in self.nu_values))
        object.__setattr__(
            self, "gamma_values", tuple(float(v) for v in self.gamma_values)
        )
        for name, values in (("nu_values", self.nu_values), ("gamma_values", self.gamma_values)):
            if not values:
                raise ValueError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly increasing, got {values}")
        if any(not 0.0 < v <= 1.0 for v in self.nu_values):
            raise ValueError(f"nu_values must lie in (0, 1], got {self.nu_values}")
        if any(v <= 0.0 for v in self.gamma_values):
            raise ValueError(f"gamma_values must be positive, got {self.gamma_values}")

    def pairs(self):
        """(nu, gamma) row-major: nu outer, gamma inner."""
        for nu in self.nu_values:
            for gamma in self.gamma_values:
                yield nu, gamma


@dataclass(frozen=True)
class GridRow:
    nu: float
    gamma: float
    counts: ConfusionCounts
    f1: float | None

    @property
    def precision(self) -> float | None:
        return self.counts.precision

    @property
    def recall(self) -> float | None:
        return self.counts.recall


@dataclass(frozen=True)
class GridSearchResult:
    rows: tuple[GridRow, ...]
    best: GridRow

    @property
    def best_nu(self) -> float:
        return self.best.nu

    @property
    def best_gamma(self) -> float:
        return self.best.gamma


def grid_search(
    train,
    val_positives,
    val_negatives,
    grid: GridSpec | None = None,
    *,
    tol: float = 1e-4,
    max_iter: int = 100_000,
) -> GridSearchResult:
    """Exhaustive (nu, gamma) scan scored by F1 on the validation split.

    Ties go to the smaller nu, then the smaller gamma. Raises
    EvaluationError when no grid cell has a defined score.
    """
    grid = grid or GridSpec()
    train = as_points(train, name="train")
    rows: list[GridRow] = []
    best: GridRow | None = None
    for nu, gamma in grid.pairs():
        try:
            model = RbfOneClassSvm(nu=nu, gamma=gamma, tol=tol, max_iter=max_iter).fit(
                train
            )
        except ConvergenceError as exc:
            logger.warning("grid cell (nu=%g, gamma=%g) failed: %s", nu, gamma, exc)
            rows.append(
                GridRow(nu=nu, gamma=gamma, counts=ConfusionCounts(0, 0, 0, 0), f1=None)
            )
            continue
        counts = evaluate_band(model, val_positives, val_negatives)
        score = f1_of(counts)
        row = GridRow(nu=nu, gamma=gamma, counts=counts, f1=score)
        rows.append(row)
        if score is not None and (best is None or score > best.f1):
            best = row
    if best is None:
        raise EvaluationError("every grid cell has an undefined score")
    return GridSearchResult(rows=tuple(rows), best=best)


# -- method comparison -----------------------------------------------

@dataclass(frozen=True)
class EvalRow:
    cell_id: str
    band: int
    method: str
    nu: float | None
    gamma: float | None
    counts: ConfusionCounts
    f1: float | None
    data_hash: str

    @property
    def precision(self) -> float | None:
        return self.counts.precision

    @property
    def recall(self) -> float | None:
        return self.counts.recall


@dataclass
class EvalReport:
    rows: list[EvalRow]
    failures: list[dict] = field(default_factory=list)

    def band_means(self) -> dict[tuple[int, str], dict]:
        """Cross-cell means per (band, method) over defined scores."""
        means: dict[tuple[int, str], dict] = {}
        for key in sorted({(r.band, r.method) for r in self.rows}):
            band, method = key
            rows = [r for r in self.rows if r.band == band and r.method == method]
            out = {"n_cells": len(rows)}
            for metric in ("precision", "recall", "f1"):
                vals = [getattr(r, metric) for r in rows]
                vals = [v for v in vals if v is not None]
                out[metric] = sum(vals) / len(vals) if vals else None
            means[key] = out
        return means

    def to_csv(self) -> str:
        def cell(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        buf = io.StringIO()
        buf.write("cell_id,band,method,nu,gamma,tp,fp,fn,tn,precision,recall,f1\n")
        for r in self.rows:
            c = r.counts
            buf.write(
                ",".join(
                    [
                        r.cell_id,
                        str(r.band),
                        r.method,
                        cell(r.nu),
                        cell(r.gamma),
                        str(c.tp),
                        str(c.fp),
                        str(c.fn),
                        str(c.tn),
                        cell(r.precision),
                        cell(r.recall),
                        cell(r.f1),
                    ]
                )
                + "\n"
            )
        return buf.getvalue()

    def to_text(self) -> str:
        """Per-band summary with hull and OC-SVM columns side by side."""
        means = self.band_means()
        bands = sorted({b for b, _ in means})

        def fmt(v):
            return f"{v:5.3f}" if v is not None else "    -"

        lines = [
            f"{'band':<34}  {'convex hull':^20}  {'oc-svm':^20}",
            f"{'':<34}  {'P':>5} {'R':>5} {'F1':>5}   {'P':>5} {'R':>5} {'F1':>5}  cells",
        ]
        for band in bands:
            hull = means.get((band, "hull"), {})
            svm = means.get((band, "ocsvm"), {})
            n = max(hull.get("n_cells", 0), svm.get("n_cells", 0))
            label = BAND_BY_ORDINAL[band].display
            lines.append(
                f"{label:<34}  "
                f"{fmt(hull.get('precision'))} {fmt(hull.get('recall'))} {fmt(hull.get('f1'))}   "
                f"{fmt(svm.get('precision'))} {fmt(svm.get('recall'))} {fmt(svm.get('f1'))}  {n:5d}"
            )
        if self.failures:
            lines.append("")
            lines.append(f"{len(self.failures)} cell/band evaluations failed:")
            for f in self.failures:
                lines.append(f"  {f['cell_id']} band {f['band']}: {f['reason']}")
        return "\n".join(lines) + "\n"


def _points_hash(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _negative_pool(
    val_part, cell_id: str, band: int, mode: str, negatives: str
) -> np.ndarray:
    """Validation negatives for one (cell, band).

    Always the cell's no-service points plus the global pool. In mixed
    mode, validation points of the cell's other bands are added; under
    cumulative semantics stronger bands count as covered, so only
    strictly weaker bands qualify as negatives there.
    """
    parts = [points_of(val_part.negatives_for(cell_id))]
    if negatives == "mixed":
        for (cid, other), recs in val_part.by_band.items():
            if cid != cell_id or other == band:
                continue
            if mode == "cumulative" and other > band:
                continue
            parts.append(points_of(recs))
    parts = [p for p in parts if len(p)]
    return np.concatenate(parts) if parts else _EMPTY


def _compare_one(
    cell_id: str,
    band: int,
    train: np.ndarray,
    val_pos: np.ndarray,
    val_neg: np.ndarray,
    grid: GridSpec,
    tol: float,
    max_iter: int,
) -> tuple[list[EvalRow], list[dict]]:
    """Hull and best-grid OC-SVM rows for one (cell, band)."""
    data_hash = _points_hash(train, val_pos, val_neg)
    rows: list[EvalRow] = []
    failures: list[dict] = []
    try:
        result = grid_search(
            train, val_pos, val_neg, grid, tol=tol, max_iter=max_iter
        )
        rows.append(
            EvalRow(
                cell_id=cell_id,
                band=band,
                method="ocsvm",
                nu=result.best_nu,
                gamma=result.best_gamma,
                counts=result.best.counts,
                f1=result.best.f1,
                data_hash=data_hash,
            )
        )
    except (EvaluationError, ConvergenceError) as exc:
        failures.append(
            {"cell_id": cell_id, "band": band, "method": "ocsvm", "reason": str(exc)}
        )
    try:
        hull = ConvexHullBoundary().fit(train)
        counts = evaluate_band(hull, val_pos, val_neg)
        rows.append(
            EvalRow(
                cell_id=cell_id,
                band=band,
                method="hull",
                nu=None,
                gamma=None,
                counts=counts,
                f1=f1_of(counts),
                data_hash=data_hash,
            )
        )
    except DegenerateHullError as exc:
        failures.append(
            {"cell_id": cell_id, "band": band, "method": "hull", "reason": str(exc)}
        )
    return rows, failures


def compare_methods(
    dataset: Dataset,
    split_instant,
    grid: GridSpec | None = None,
    *,
    mode: str = "partition",
    negatives: str = "mixed",
    min_points: int = DEFAULT_MIN_POINTS,
    tol: float = 1e-4,
    max_iter: int = 100_000,
    n_jobs: int = 1,
) -> EvalReport:
    """Hull vs grid-tuned OC-SVM on a temporal split, per (cell, band).

    Both methods see byte-identical train and validation arrays; the
    shared content hash in each row pair records that. Per-cell
    failures are isolated into report.failures.
    """
    if mode not in ("partition", "cumulative"):
        raise ValueError(f"mode must be 'partition' or 'cumulative', got {mode!r}")
    if negatives not in ("mixed", "noservice"):
        raise ValueError(f"negatives must be 'mixed' or 'noservice', got {negatives!r}")
    grid = grid or GridSpec()
    train_ds, val_ds = temporal_split(dataset, split_instant)
    train_part = partition(train_ds, min_points=min_points)
    val_part = partition(val_ds, min_points=1)

    tasks = []
    for cell_id, band in train_part.trainable_keys():
        if mode == "cumulative":
            stack = [
                points_of(train_part.by_band[(cell_id, o)])
                for (cid, o) in sorted(train_part.by_band)
                if cid == cell_id and o >= band
            ]
            train = np.concatenate(stack)
            val_stack = [
                points_of(val_part.by_band[(cid, o)])
                for (cid, o) in sorted(val_part.by_band)
                if cid == cell_id and o >= band
            ]
            val_pos = np.concatenate(val_stack) if val_stack else _EMPTY
        else:
            train = points_of(train_part.by_band[(cell_id, band)])
            recs = val_part.by_band.get((cell_id, band), [])
            val_pos = points_of(recs) if recs else _EMPTY
        val_neg = _negative_pool(val_part, cell_id, band, mode, negatives)
        tasks.append((cell_id, band, train, val_pos, val_neg))

    results = Parallel(n_jobs=n_jobs)(
        delayed(_compare_one)(cell_id, band, train, val_pos, val_neg, grid, tol, max_iter)
        for cell_id, band, train, val_pos, val_neg in tasks
    )
    rows: list[EvalRow] = []
    failures: list[dict] = []
    for r, f in results:
        rows.extend(r)
        failures.extend(f)
    rows.sort(key=lambda r: (r.cell_id, r.band, r.method))
    return EvalReport(rows=rows, failures=failures)
