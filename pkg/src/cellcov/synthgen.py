"""Synthetic measurement scenarios with exact geometric ground truth.

A scenario places one cell whose true coverage footprint is a disk, an
annulus, a crescent (disk with a circular bite), or a set of disjoint
blobs. Service points are sampled uniformly in the footprint and banded
by distance quantiles (stronger bands nearer the center by default);
no-service points are sampled in interior holes and an exterior ring.

Quantile cut radii are derived from the analytic area function of each
shape, so band membership has an exact oracle. GPS noise is isotropic
Gaussian with the displacement magnitude truncated at 3 sigma, which
keeps position error bounded and label flips confined to points within
3 sigma of a region boundary.

Generation is deterministic per seed (counter-based Philox generator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .measurements import (
    BAND_BY_ORDINAL,
    Dataset,
    IngestStats,
    MeasurementRecord,
)
from .validation import as_points

SHAPES = ("disk", "annulus", "crescent", "multi_blob")

DEFAULT_BAND_PROFILE = ((0.2, 5), (0.4, 4), (0.6, 3), (0.8, 2), (1.0, 1))

# Sampling windows (dBm) per band; the outermost bands are clipped to
# plausible values.
_BAND_DBM_WINDOWS = {
    1: (-120.0, -105.0),
    2: (-105.0, -95.0),
    3: (-95.0, -82.0),
    4: (-82.0, -74.0),
    5: (-74.0, -45.0),
}

_EXTERIOR_INNER = 1.05
_EXTERIOR_OUTER = 1.5


def _utc(dt: datetime) -> datetime:
    return dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class Scenario:
    """Parameters of one synthetic cell."""

    shape: str
    center: tuple[float, float] = (-1.5, 52.5)
    n_service: int = 600
    n_noservice: int = 300
    seed: int = 0
    radius: float = 0.03
    inner_radius: float = 0.01
    bite_offset: float = 0.018
    bite_radius: float = 0.015
    n_blobs: int = 3
    blob_radius: float = 0.008
    band_profile: tuple[tuple[float, int], ...] = DEFAULT_BAND_PROFILE
    start: datetime = datetime(2024, 1, 1, tzinfo=timezone.utc)
    end: datetime = datetime(2024, 3, 1, tzinfo=timezone.utc)
    gps_noise_sigma: float = 1e-4
    cell_id: str | None = None
    noservice_hole_fraction: float = 0.5
    tech: str = "4G"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.n_service < 1 or self.n_noservice < 0:
            raise ValueError("need n_service >= 1 and n_noservice >= 0")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.shape == "annulus" and not (0 < self.inner_radius < self.radius):
            raise ValueError("annulus needs 0 < inner_radius < radius")
        if self.shape == "crescent":
            if self.bite_radius <= 0 or self.bite_offset <= 0:
                raise ValueError("crescent needs positive bite_offset and bite_radius")
            if self.bite_offset + self.radius <= self.bite_radius:
                raise ValueError("bite swallows the whole disk, crescent is empty")
        if self.shape == "multi_blob":
            if self.n_blobs < 2:
                raise ValueError("multi_blob needs n_blobs >= 2")
            ring = self._blob_ring_radius()
            spacing = 2.0 * ring * math.sin(math.pi / self.n_blobs)
            if spacing <= 2.0 * self.blob_radius:
                raise ValueError("blobs overlap: reduce blob_radius or n_blobs")
        quantiles = [q for q, _ in self.band_profile]
        ordinals = [o for _, o in self.band_profile]
        if len(self.band_profile) < 1 or quantiles != sorted(quantiles):
            raise ValueError("band_profile quantiles must be increasing")
        if any(not (0.0 < q <= 1.0) for q in quantiles) or quantiles[-1] != 1.0:
            raise ValueError("band_profile quantiles must lie in (0, 1] and end at 1")
        if len(set(ordinals)) != len(ordinals) or any(
            o not in BAND_BY_ORDINAL for o in ordinals
        ):
            raise ValueError("band_profile ordinals must be distinct bands 1..5")
        if self.gps_noise_sigma < 0:
            raise ValueError("gps_noise_sigma must be >= 0")
        if _utc(self.start) >= _utc(self.end):
            raise ValueError("start must precede end")
        if not (0.0 <= self.noservice_hole_fraction <= 1.0):
            raise ValueError("noservice_hole_fraction must be in [0, 1]")

    @property
    def resolved_cell_id(self) -> str:
        return self.cell_id if self.cell_id is not None else f"cell-{self.seed:03d}"

    def _blob_ring_radius(self) -> float:
        return 0.6 * self.radius

    def blob_centers(self) -> np.ndarray:
        ring = self._blob_ring_radius()
        cx, cy = self.center
        angles = 2.0 * math.pi * np.arange(self.n_blobs) / self.n_blobs
        return np.column_stack(
            [cx + ring * np.cos(angles), cy + ring * np.sin(angles)]
        )

    def extent(self) -> float:
        """Radius of the smallest center-origin disk containing the shape."""
        if self.shape == "multi_blob":
            return self._blob_ring_radius() + self.blob_radius
        return self.radius

    def has_hole(self) -> bool:
        return self.shape in ("annulus", "crescent", "multi_blob")

    # -- geometry ----------------------------------------------------

    def centrality(self, pts) -> np.ndarray:
        """Distance measure that orders bands: radial distance from the
        center, or distance to the nearest blob center."""
        p = as_points(pts)
        if self.shape == "multi_blob":
            d = p[:, None, :] - self.blob_centers()[None, :, :]
            return np.sqrt(np.einsum("ijk,ijk->ij", d, d)).min(axis=1)
        diff = p - np.asarray(self.center)
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def in_shape(self, pts) -> np.ndarray:
        """Exact membership in the true coverage footprint (closed)."""
        p = as_points(pts)
        c = np.asarray(self.center)
        d_c = np.sqrt(np.einsum("ij,ij->i", p - c, p - c))
        if self.shape == "disk":
            return d_c <= self.radius
        if self.shape == "annulus":
            return (self.inner_radius <= d_c) & (d_c <= self.radius)
        if self.shape == "crescent":
            bc = np.asarray([c[0] + self.bite_offset, c[1]])
            d_b = np.sqrt(np.einsum("ij,ij->i", p - bc, p - bc))
            return (d_c <= self.radius) & (d_b >= self.bite_radius)
        return self.centrality(p) <= self.blob_radius

    def _area_up_to(self, d: float) -> float:
        """Area of the footprint within centrality <= d."""
        if self.shape == "disk":
            return math.pi * min(d, self.radius) ** 2
        if self.shape == "annulus":
            if d <= self.inner_radius:
                return 0.0
            return math.pi * (min(d, self.radius) ** 2 - self.inner_radius**2)
        if self.shape == "crescent":
            r = min(d, self.radius)
            return math.pi * r * r - _lens_area(r, self.bite_radius, self.bite_offset)
        # multi_blob: blobs are disjoint and congruent
        return self.n_blobs * math.pi * min(d, self.blob_radius) ** 2

    def cut_radii(self) -> tuple[tuple[float, int, float], ...]:
        """(quantile, ordinal, cut radius) per profile entry.

        The cut radius is the analytic distance quantile of the uniform
        distribution on the footprint, so band regions are exact
        geometry, not sample statistics.
        """
        total = self._area_up_to(self.extent())
        out = []
        for q, ordinal in self.band_profile:
            out.append((q, ordinal, self._invert_area(q * total)))
        return tuple(out)

    def _invert_area(self, target: float) -> float:
        lo, hi = 0.0, self.extent()
        if target >= self._area_up_to(hi):
            return hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self._area_up_to(mid) < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def _lens_area(r1: float, r2: float, d: float) -> float:
    """Intersection area of two circles with radii r1, r2 at distance d."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return math.pi * r * r
    x1 = (d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)
    x2 = (d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)
    x1 = min(1.0, max(-1.0, x1))
    x2 = min(1.0, max(-1.0, x2))
    a = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)
    return (
        r1 * r1 * math.acos(x1)
        + r2 * r2 * math.acos(x2)
        - 0.5 * math.sqrt(max(0.0, a))
    )


@dataclass
class ScenarioOracle:
    """Exact ground truth for a generated scenario.

    ``covered(p, band)`` answers membership of the band's true region,
    where a band's region is cumulative: every point whose centrality
    falls at or inside the band's cut radius (signal there is at least
    as strong as the band). Regions are nested by construction.

    Ground-truth arrays are in generation order, independent of the
    timestamp-sorted dataset.
    """

    scenario: Scenario
    service_true_xy: np.ndarray
    service_noisy_xy: np.ndarray
    service_ordinals: np.ndarray
    noservice_true_xy: np.ndarray
    noservice_noisy_xy: np.ndarray
    cuts: dict[int, float] = field(init=False)

    def __post_init__(self):
        self.cuts = {ordinal: cut for _, ordinal, cut in self.scenario.cut_radii()}

    def covered_many(self, pts, band_ordinal: int) -> np.ndarray:
        if band_ordinal not in self.cuts:
            raise ValueError(f"band {band_ordinal} not in scenario profile")
        p = as_points(pts)
        inside = self.scenario.in_shape(p)
        return inside & (self.scenario.centrality(p) <= self.cuts[band_ordinal])

    def covered(self, p, band_ordinal: int) -> bool:
        return bool(self.covered_many(np.asarray(p, dtype=float).reshape(1, 2), band_ordinal)[0])


def oracle_covered(scenario: Scenario, p, band_ordinal: int) -> bool:
    """Exact membership of p in the band's true (cumulative) region."""
    cuts = {ordinal: cut for _, ordinal, cut in scenario.cut_radii()}
    if band_ordinal not in cuts:
        raise ValueError(f"band {band_ordinal} not in scenario profile")
    pt = np.asarray(p, dtype=float).reshape(1, 2)
    return bool(
        (scenario.in_shape(pt) & (scenario.centrality(pt) <= cuts[band_ordinal]))[0]
    )


def _sample_disk(rng, n, center, radius) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    th = 2.0 * math.pi * rng.random(n)
    return np.column_stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)])


def _sample_annulus(rng, n, center, r_in, r_out) -> np.ndarray:
    r = np.sqrt(r_in**2 + rng.random(n) * (r_out**2 - r_in**2))
    th = 2.0 * math.pi * rng.random(n)
    return np.column_stack([center[0] + r * np.cos(th), center[1] + r * np.sin(th)])


def _sample_rejection(rng, n, proposal, accept) -> np.ndarray:
    """Draw until n accepted; deterministic given the generator state."""
    chunks = []
    got = 0
    while got < n:
        cand = proposal(max(n - got, 16))
        ok = accept(cand)
        kept = cand[ok]
        if kept.shape[0]:
            chunks.append(kept)
            got += kept.shape[0]
    return np.concatenate(chunks)[:n]


def _sample_service(rng, sc: Scenario) -> np.ndarray:
    n = sc.n_service
    if sc.shape == "disk":
        return _sample_disk(rng, n, sc.center, sc.radius)
    if sc.shape == "annulus":
        return _sample_annulus(rng, n, sc.center, sc.inner_radius, sc.radius)
    if sc.shape == "crescent":
        return _sample_rejection(
            rng, n,
            lambda m: _sample_disk(rng, m, sc.center, sc.radius),
            lambda pts: sc.in_shape(pts),
        )
    # multi_blob: pick a blob, then a point inside it
    centers = sc.blob_centers()
    idx = rng.integers(0, sc.n_blobs, n)
    local = _sample_disk(rng, n, (0.0, 0.0), sc.blob_radius)
    return centers[idx] + local


def _sample_noservice(rng, sc: Scenario) -> np.ndarray:
    n = sc.n_noservice
    if n == 0:
        return np.empty((0, 2), dtype=np.float64)
    n_hole = round(n * sc.noservice_hole_fraction) if sc.has_hole() else 0
    n_ext = n - n_hole
    parts = []
    if n_hole:
        if sc.shape == "annulus":
            parts.append(_sample_disk(rng, n_hole, sc.center, sc.inner_radius))
        elif sc.shape == "crescent":
            bite_center = (sc.center[0] + sc.bite_offset, sc.center[1])
            c = np.asarray(sc.center)

            def in_outer(pts):
                d = np.sqrt(np.einsum("ij,ij->i", pts - c, pts - c))
                return d <= sc.radius

            parts.append(
                _sample_rejection(
                    rng, n_hole,
                    lambda m: _sample_disk(rng, m, bite_center, sc.bite_radius),
                    in_outer,
                )
            )
        else:  # multi_blob: gaps between blobs inside the enclosing disk
            parts.append(
                _sample_rejection(
                    rng, n_hole,
                    lambda m: _sample_disk(rng, m, sc.center, sc.extent()),
                    lambda pts: ~sc.in_shape(pts),
                )
            )
    if n_ext:
        parts.append(
            _sample_annulus(
                rng, n_ext, sc.center,
                sc.extent() * _EXTERIOR_INNER, sc.extent() * _EXTERIOR_OUTER,
            )
        )
    return np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.float64)


def _gps_noise(rng, n, sigma) -> np.ndarray:
    """Isotropic Gaussian displacement, magnitude truncated at 3 sigma."""
    if sigma == 0.0 or n == 0:
        return np.zeros((n, 2), dtype=np.float64)
    d = rng.normal(0.0, sigma, (n, 2))
    mag = np.sqrt(np.einsum("ij,ij->i", d, d))
    cap = 3.0 * sigma
    over = mag > cap
    if over.any():
        d[over] *= (cap / mag[over])[:, None]
    return d


def _assign_bands(sc: Scenario, true_xy: np.ndarray) -> np.ndarray:
    d = sc.centrality(true_xy)
    cuts = sc.cut_radii()
    ordinals = np.empty(len(d), dtype=np.int64)
    remaining = np.ones(len(d), dtype=bool)
    for _, ordinal, cut in cuts:
        take = remaining & (d <= cut)
        ordinals[take] = ordinal
        remaining &= ~take
    # points exactly at the extent boundary fall into the last entry
    ordinals[remaining] = cuts[-1][1]
    return ordinals


def generate(scenario: Scenario) -> tuple[Dataset, ScenarioOracle]:
    """Generate one scenario's dataset and its exact oracle.

    Draw order is fixed (service positions, signals, timestamps, noise,
    then the no-service side), so output is a pure function of the
    scenario including its seed.
    """
    sc = scenario
    rng = np.random.Generator(np.random.Philox(key=np.uint64(sc.seed)))
    svc_true = _sample_service(rng, sc)
    svc_ordinals = _assign_bands(sc, svc_true)
    signals = np.empty(sc.n_service, dtype=np.float64)
    for ordinal in np.unique(svc_ordinals):
        lo, hi = _BAND_DBM_WINDOWS[int(ordinal)]
        mask = svc_ordinals == ordinal
        signals[mask] = lo + (hi - lo) * rng.random(int(mask.sum()))
    t0 = int(_utc(sc.start).timestamp())
    t1 = int(_utc(sc.end).timestamp())
    svc_times = rng.integers(t0, t1, sc.n_service)
    svc_noise = _gps_noise(rng, sc.n_service, sc.gps_noise_sigma)
    svc_noisy = svc_true + svc_noise

    nos_true = _sample_noservice(rng, sc)
    nos_times = rng.integers(t0, t1, len(nos_true))
    nos_noise = _gps_noise(rng, len(nos_true), sc.gps_noise_sigma)
    nos_noisy = nos_true + nos_noise

    cell = sc.resolved_cell_id
    records = []
    for k in range(sc.n_service):
        records.append(
            MeasurementRecord(
                timestamp=datetime.fromtimestamp(int(svc_times[k]), tz=timezone.utc),
                lon=float(svc_noisy[k, 0]),
                lat=float(svc_noisy[k, 1]),
                cell_id=cell,
                signal_dbm=float(signals[k]),
                tech=sc.tech,
            )
        )
    for k in range(len(nos_true)):
        records.append(
            MeasurementRecord(
                timestamp=datetime.fromtimestamp(int(nos_times[k]), tz=timezone.utc),
                lon=float(nos_noisy[k, 0]),
                lat=float(nos_noisy[k, 1]),
                cell_id=cell,
                signal_dbm=None,
                tech=sc.tech,
            )
        )
    dataset = Dataset(
        records=records,
        provenance=IngestStats(
            source=f"synth:{sc.shape}:seed={sc.seed}", accepted=len(records)
        ),
    )
    oracle = ScenarioOracle(
        scenario=sc,
        service_true_xy=svc_true,
        service_noisy_xy=svc_noisy,
        service_ordinals=svc_ordinals,
        noservice_true_xy=nos_true,
        noservice_noisy_xy=nos_noisy,
    )
    return dataset, oracle


def scenario_sidecar(scenario: Scenario) -> dict:
    """JSON-ready record of scenario parameters and derived cut radii."""
    sc = scenario
    return {
        "shape": sc.shape,
        "center": list(sc.center),
        "n_service": sc.n_service,
        "n_noservice": sc.n_noservice,
        "seed": sc.seed,
        "radius": sc.radius,
        "inner_radius": sc.inner_radius,
        "bite_offset": sc.bite_offset,
        "bite_radius": sc.bite_radius,
        "n_blobs": sc.n_blobs,
        "blob_radius": sc.blob_radius,
        "band_profile": [list(entry) for entry in sc.band_profile],
        "start": _utc(sc.start).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "end": _utc(sc.end).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "gps_noise_sigma": sc.gps_noise_sigma,
        "cell_id": sc.resolved_cell_id,
        "noservice_hole_fraction": sc.noservice_hole_fraction,
        "tech": sc.tech,
        "cut_radii": [
            {"quantile": q, "band": o, "radius": r} for q, o, r in sc.cut_radii()
        ],
    }
