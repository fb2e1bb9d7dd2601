"""One-class SVM with an RBF kernel, trained by a working-set solver.

The decision function is f(x) = sum_i alpha_i K(sv_i, x) - rho with
K(a, b) = exp(-gamma ||a - b||^2). Training solves the dual program

    minimize    0.5 * alpha' K alpha
    subject to  0 <= alpha_i <= 1 / (nu * n),  sum_i alpha_i = 1

to a KKT gap of ``tol`` by repeatedly optimizing the most violating
pair of coordinates. Ties in pair selection break to the lowest index,
and nothing is randomized, so training is deterministic.

A point is covered where f(x) >= 0. rho is the mean kernel expansion
over margin support vectors (0 < alpha < bound); when no margin vector
exists it falls back to the midpoint of the interval that keeps the
bound and zero groups KKT-consistent.
"""

from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ConvergenceError, ModelFormatError, ModelVersionError
from .validation import as_points

MODEL_FORMAT_VERSION = "1"

# Full kernel matrix precomputed up to this many training points;
# larger problems fall back to an LRU cache of kernel rows.
FULL_KERNEL_MAX_N = 4096

# Pairwise-block budget for kernel evaluation, in matrix elements.
_BLOCK_ELEMS = 4_000_000


def rbf_kernel(a, b, gamma: float) -> float:
    """exp(-gamma ||a - b||^2) for two single points."""
    pa = np.asarray(a, dtype=np.float64).reshape(-1)
    pb = np.asarray(b, dtype=np.float64).reshape(-1)
    d = pa - pb
    return float(np.exp(-float(gamma) * float(d @ d)))


def rbf_kernel_matrix(A, B, gamma: float) -> np.ndarray:
    """Kernel matrix K[i, j] = exp(-gamma ||A[i] - B[j]||^2).

    Distances are formed from coordinate differences (not the norm
    expansion), which keeps the result stable under a common
    translation of both point sets. Work is blocked along rows to bound
    peak memory; per-row arithmetic does not depend on the block size.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    n, m = A.shape[0], B.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    if n == 0 or m == 0:
        return out
    step = max(1, _BLOCK_ELEMS // m)
    for s in range(0, n, step):
        d = A[s : s + step, None, :] - B[None, :, :]
        sq = np.einsum("ijk,ijk->ij", d, d)
        out[s : s + step] = np.exp(-gamma * sq)
    return out


class _KernelRows:
    """Row provider for the training kernel matrix.

    Dense storage below FULL_KERNEL_MAX_N points; above that, rows are
    computed on demand and kept in a bounded LRU cache. Either path
    produces identical rows, only the storage strategy differs.
    """

    def __init__(self, X: np.ndarray, gamma: float):
        self.X = X
        self.gamma = float(gamma)
        self.n = X.shape[0]
        if self.n <= FULL_KERNEL_MAX_N:
            self._full: np.ndarray | None = rbf_kernel_matrix(X, X, gamma)
            self._cache: OrderedDict[int, np.ndarray] | None = None
        else:
            self._full = None
            self._cache = OrderedDict()
            self._max_rows = max(2, _BLOCK_ELEMS * 4 // self.n)

    def row(self, i: int) -> np.ndarray:
        if self._full is not None:
            return self._full[i]
        cache = self._cache
        hit = cache.get(i)
        if hit is not None:
            cache.move_to_end(i)
            return hit
        r = rbf_kernel_matrix(self.X[i : i + 1], self.X, self.gamma)[0]
        cache[i] = r
        if len(cache) > self._max_rows:
            cache.popitem(last=False)
        return r

    def matvec(self, v: np.ndarray) -> np.ndarray:
        if self._full is not None:
            return self._full @ v
        out = np.empty(self.n, dtype=np.float64)
        step = max(1, _BLOCK_ELEMS // self.n)
        for s in range(0, self.n, step):
            out[s : s + step] = rbf_kernel_matrix(
                self.X[s : s + step], self.X, self.gamma
            ) @ v
        return out


def _solve_dual(rows: _KernelRows, box: float, tol: float, max_iter: int):
    """Most-violating-pair coordinate descent on the dual.

    Returns (alpha, gradient, iterations, final gap). Updated alphas
    are snapped exactly onto a bound when the step is bound-limited, so
    the active-set masks stay exact comparisons.
    """
    n = rows.n
    alpha = np.full(n, 1.0 / n, dtype=np.float64)
    g = rows.matvec(alpha)
    it = 0
    while it < max_iter:
        # Masked values, not raw g: with every alpha at a bound the
        # masked gap is -inf and the solver stops instead of spinning.
        up_vals = np.where(alpha < box, g, np.inf)
        down_vals = np.where(alpha > 0.0, g, -np.inf)
        i = int(np.argmin(up_vals))
        j = int(np.argmax(down_vals))
        gap = float(down_vals[j] - up_vals[i])
        if gap <= tol:
            return alpha, g, it, max(gap, 0.0)
        row_i = rows.row(i)
        row_j = rows.row(j)
        quad = 2.0 * (1.0 - row_i[j])  # K_ii = K_jj = 1 for RBF
        room_i = box - alpha[i]
        room_j = alpha[j]
        t = min(room_i, room_j)
        if quad > 1e-15:
            t = min(t, gap / quad)
        if t == room_i:
            alpha[i] = box
        else:
            alpha[i] += t
        if t == room_j:
            alpha[j] = 0.0
        else:
            alpha[j] -= t
        g += t * (row_i - row_j)
        it += 1
    up_vals = np.where(alpha < box, g, np.inf)
    down_vals = np.where(alpha > 0.0, g, -np.inf)
    final_gap = float(down_vals.max() - up_vals.min())
    raise ConvergenceError(iterations=it, gap=final_gap, tol=tol)


BOUND_SNAP = 1e-9  # relative to box: smaller alphas are bound dust


def _offset(alpha: np.ndarray, g: np.ndarray, box: float) -> float:
    """Decision offset rho from the converged dual state.

    Bound classification uses a relative tolerance: coordinate steps
    leave O(1e-16) dust at bounds, and a dust coordinate mistaken for
    a margin SV would swing rho by genuine KKT slack.
    """
    eps = box * BOUND_SNAP
    at_zero = alpha <= eps
    at_box = alpha >= box - eps
    margin = ~at_zero & ~at_box
    if margin.any():
        return float(g[margin].mean())
    # All mass at the box bound: rho must sit at or above every bound
    # gradient and at or below every zero gradient.
    lo = float(g[at_box].max())
    if at_zero.any():
        return (lo + float(g[at_zero].min())) / 2.0
    return lo


def _kkt_violation(alpha: np.ndarray, g: np.ndarray, rho: float, box: float) -> float:
    f = g - rho
    eps = box * BOUND_SNAP
    at_zero = alpha <= eps
    at_box = alpha >= box - eps
    margin = ~at_zero & ~at_box
    v = 0.0
    if margin.any():
        v = max(v, float(np.abs(f[margin]).max()))
    if at_box.any():
        v = max(v, float(f[at_box].max()), 0.0)
    if at_zero.any():
        v = max(v, float((-f[at_zero]).max()), 0.0)
    return v


class RbfOneClassSvm(OutlierMixin, BaseEstimator):
    """Support estimator for 2-D point clouds.

    Learns a region containing roughly a (1 - nu) fraction of the
    training points; ``predict`` returns +1 inside (covered) and -1
    outside, matching the scikit-learn outlier-detection convention.

    Parameters
    ----------
    nu : float in (0, 1]
        Budget parameter: asymptotically an upper bound on the fraction
        of training points left outside and a lower bound on the
        fraction kept as support vectors.
    gamma : float > 0
        RBF kernel coefficient, in 1 / squared coordinate units.
    tol : float
        KKT gap at which training stops.
    max_iter : int
        Pair-update budget; exceeding it raises ConvergenceError.

    Attributes
    ----------
    support_vectors_ : ndarray of shape (m, 2)
        Training points with positive dual weight.
    alphas_ : ndarray of shape (m,)
        Their dual weights; always sums to 1.
    rho_ : float
        Decision offset.
    n_iter_ : int
        Pair updates performed.
    kkt_violation_ : float
        Largest KKT residual at the returned solution.
    """

    def __init__(self, nu: float = 0.5, gamma: float = 1.0,
                 tol: float = 1e-4, max_iter: int = 100_000):
        self.nu = nu
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def _check_params(self):
        if not (0.0 < float(self.nu) <= 1.0):
            raise ValueError(f"nu must be in (0, 1], got {self.nu!r}")
        if not (float(self.gamma) > 0.0):
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if not (float(self.tol) > 0.0):
            raise ValueError(f"tol must be positive, got {self.tol!r}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter!r}")

    def fit(self, X, y=None):
        """Fit on an (n, 2) array of planar points."""
        self._check_params()
        X = as_points(X)
        n = X.shape[0]
        if n < 1:
            raise ValueError("training requires at least one point")
        box = 1.0 / (float(self.nu) * n)
        rows = _KernelRows(X, float(self.gamma))
        alpha, g, n_iter, gap = _solve_dual(rows, box, float(self.tol), int(self.max_iter))
        rho = _offset(alpha, g, box)
        keep = alpha > box * BOUND_SNAP
        self.support_vectors_ = X[keep].copy()
        self.alphas_ = alpha[keep].copy()
        self.rho_ = rho
        self.box_bound_ = box
        self.n_train_ = n
        self.n_iter_ = n_iter
        self.kkt_gap_ = gap
        self.kkt_violation_ = _kkt_violation(alpha, g, rho, box)
        return self

    def decision_function(self, X) -> np.ndarray:
        """f(x): positive inside the learned region, negative outside."""
        check_is_fitted(self, "support_vectors_")
        X = as_points(X)
        K = rbf_kernel_matrix(X, self.support_vectors_, float(self.gamma))
        return K @ self.alphas_ - self.rho_

    def predict(self, X) -> np.ndarray:
        """+1 where f(x) >= 0 (covered), else -1."""
        f = self.decision_function(X)
        return np.where(f >= 0.0, 1, -1)

    def covers(self, X) -> np.ndarray:
        """Boolean convenience wrapper over predict."""
        return self.predict(X) == 1


def model_to_dict(
    est: RbfOneClassSvm,
    *,
    cell_id: str | None = None,
    band: int | None = None,
    coordinate_mode: str = "degrees",
    train_window: tuple[str, str] | None = None,
) -> dict:
    """JSON-ready payload for a fitted estimator plus its provenance."""
    check_is_fitted(est, "support_vectors_")
    return {
        "version": MODEL_FORMAT_VERSION,
        "cell_id": cell_id,
        "band": None if band is None else int(band),
        "nu": float(est.nu),
        "gamma": float(est.gamma),
        "rho": float(est.rho_),
        "coordinate_mode": coordinate_mode,
        "support_vectors": [[float(x), float(y)] for x, y in est.support_vectors_],
        "alphas": [float(a) for a in est.alphas_],
        "n_train": int(est.n_train_),
        "train_window": list(train_window) if train_window is not None else None,
    }


_REQUIRED_MODEL_KEYS = (
    "version", "nu", "gamma", "rho", "coordinate_mode",
    "support_vectors", "alphas", "n_train",
)


def model_from_dict(doc: dict) -> tuple[RbfOneClassSvm, dict]:
    """Rebuild a fitted estimator; returns (estimator, metadata)."""
    if not isinstance(doc, dict):
        raise ModelFormatError("corrupt model payload: not a JSON object")
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelVersionError(found=str(version), expected=MODEL_FORMAT_VERSION)
    missing = [k for k in _REQUIRED_MODEL_KEYS if k not in doc]
    if missing:
        raise ModelFormatError(f"corrupt model payload: missing {', '.join(missing)}")
    try:
        sv = np.asarray(doc["support_vectors"], dtype=np.float64)
        alphas = np.asarray(doc["alphas"], dtype=np.float64)
        est = RbfOneClassSvm(nu=float(doc["nu"]), gamma=float(doc["gamma"]))
        if sv.ndim != 2 or sv.shape[1] != 2 or alphas.shape != (sv.shape[0],):
            raise ModelFormatError("corrupt model payload: malformed arrays")
        est.support_vectors_ = sv
        est.alphas_ = alphas
        est.rho_ = float(doc["rho"])
        est.n_train_ = int(doc["n_train"])
        est.box_bound_ = 1.0 / (float(doc["nu"]) * int(doc["n_train"]))
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupt model payload: {exc}") from exc
    meta = {
        "cell_id": doc.get("cell_id"),
        "band": doc.get("band"),
        "coordinate_mode": doc.get("coordinate_mode", "degrees"),
        "train_window": doc.get("train_window"),
    }
    return est, meta


def serialize(est: RbfOneClassSvm, **meta) -> bytes:
    """Serialize a fitted model to versioned JSON bytes.

    Floats go through repr, the shortest representation that round
    trips, so deserialized models reproduce decision values bitwise.
    """
    return json.dumps(model_to_dict(est, **meta), separators=(",", ":")).encode("utf-8")


def deserialize(payload: bytes | str) -> tuple[RbfOneClassSvm, dict]:
    """Inverse of serialize. Raises ModelFormatError / ModelVersionError."""
    try:
        doc = json.loads(payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model payload: {exc}") from exc
    return model_from_dict(doc)
