"""Command-line pipeline: synth, train, grid-search, compare, export, query.

Every command is deterministic for a given configuration: outputs
carry no timestamps, rows are sorted, and parallelism never changes
results. Exit codes: 0 success, 1 domain failure, 2 usage error.
"""

from __future__ import annotations

import functools
import json
import re
from pathlib import Path

import click
import numpy as np
from joblib import Parallel, delayed

from .boundary import (
    DEFAULT_RESOLUTION,
    build_coverage_model,
    load_coverage_models,
    models_to_geojson,
    save_band_boundary,
)
from .errors import CellcovError
from .evaluation import (
    ConfusionCounts,
    GridSpec,
    compare_methods,
    f1_of,
    grid_search,
)
from .geometry import LocalProjection, projection_from_tag
from .measurements import (
    DEFAULT_MIN_POINTS,
    Dataset,
    IngestStats,
    format_timestamp,
    parse_csv,
    parse_timestamp,
    partition,
    points_of,
    temporal_split,
    write_csv,
)
from .synthgen import SHAPES, Scenario, generate, scenario_sidecar

_SAFE_NAME = re.compile(r"[^A-Za-z0-9_.-]+")


# -- option plumbing -------------------------------------------------

class TimestampType(click.ParamType):
    name = "timestamp"

    def convert(self, value, param, ctx):
        if not isinstance(value, str):
            return value
        try:
            return parse_timestamp(value)
        except ValueError as exc:
            self.fail(str(exc), param, ctx)


class FloatListType(click.ParamType):
    name = "floats"

    def convert(self, value, param, ctx):
        if not isinstance(value, str):
            return value
        try:
            return tuple(float(tok) for tok in value.split(","))
        except ValueError as exc:
            self.fail(f"expected comma-separated numbers, got {value!r}", param, ctx)


class PointType(FloatListType):
    name = "lon,lat"

    def convert(self, value, param, ctx):
        out = super().convert(value, param, ctx)
        if len(out) != 2:
            self.fail(f"expected lon,lat, got {value!r}", param, ctx)
        return out


class BboxType(FloatListType):
    name = "x0,y0,x1,y1"

    def convert(self, value, param, ctx):
        out = super().convert(value, param, ctx)
        if len(out) != 4:
            self.fail(f"expected x0,y0,x1,y1, got {value!r}", param, ctx)
        return out


def _load_config(ctx, param, value):
    """Read key=value lines into the context default map.

    Click resolves parameters as flags, then default map, then
    declared defaults, which is exactly the documented precedence.
    """
    if not value:
        return None
    known = {p.name for p in ctx.command.params}
    multi = {p.name for p in ctx.command.params if getattr(p, "multiple", False)}
    loaded = {}
    with open(value, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise click.BadParameter(
                    f"{value}:{ln}: expected key=value, got {line!r}", ctx=ctx, param=param
                )
            key, _, val = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in known:
                raise click.BadParameter(f"{value}:{ln}: unknown key {key!r}", ctx=ctx, param=param)
            val = val.strip()
            loaded[key] = tuple(t.strip() for t in val.split(",")) if key in multi else val
    ctx.default_map = {**(ctx.default_map or {}), **loaded}
    return value


config_option = click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    is_eager=True,
    expose_value=False,
    callback=_load_config,
    help="key=value file; flags override it, it overrides defaults.",
)


def _domain_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CellcovError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt_value(x) for x in v)
    if hasattr(v, "strftime"):
        return format_timestamp(v)
    return str(v)


def _write_effective_config(ctx, out_dir: Path) -> None:
    lines = [
        f"{p.name}={_fmt_value(ctx.params.get(p.name))}"
        for p in sorted(ctx.command.params, key=lambda p: p.name)
        if p.name in ctx.params
    ]
    (out_dir / "effective_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_inputs(paths) -> Dataset:
    datasets = [parse_csv(p) for p in paths]
    records = [r for ds in datasets for r in ds.records]
    stats = datasets[0].provenance
    for ds in datasets[1:]:
        stats = stats + ds.provenance
    for line, msg in stats.row_errors:
        click.echo(f"row {line}: {msg}", err=True)
    click.echo(stats.summary(), err=True)
    return Dataset(records=records, provenance=stats)


def _safe_name(cell_id: str) -> str:
    return _SAFE_NAME.sub("_", cell_id) or "cell"


@click.group()
def main():
    """Coverage boundary estimation from geolocated signal measurements."""


# -- synth -----------------------------------------------------------

@main.command()
@config_option
@click.option("--shape", type=click.Choice(sorted(SHAPES)), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cells", type=int, default=1, show_default=True,
              help="Generate this many cells, shifting centers and seeds.")
@click.option("--n-service", type=int, default=1500, show_default=True)
@click.option("--n-noservice", type=int, default=600, show_default=True)
@click.option("--center", type=PointType(), default="-1.5,52.5", show_default=True)
@click.option("--radius", type=float, default=0.03, show_default=True)
@click.option("--inner-radius", type=float, default=0.01, show_default=True)
@click.option("--bite-offset", type=float, default=0.018, show_default=True)
@click.option("--bite-radius", type=float, default=0.015, show_default=True)
@click.option("--blobs", type=int, default=3, show_default=True)
@click.option("--blob-radius", type=float, default=0.008, show_default=True)
@click.option("--noise-sigma", type=float, default=1e-4, show_default=True)
@click.option("--hole-fraction", type=float, default=0.5, show_default=True)
@click.option("--start", type=TimestampType(), default="2024-01-01T00:00:00Z", show_default=True)
@click.option("--end", type=TimestampType(), default="2024-03-01T00:00:00Z", show_default=True)
@click.option("--tech", type=str, default="4G", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
@_domain_guard
def synth(shape, seed, cells, n_service, n_noservice, center, radius, inner_radius,
          bite_offset, bite_radius, blobs, blob_radius, noise_sigma, hole_fraction,
          start, end, tech, out):
    """Generate a synthetic measurement CSV with known ground truth."""
    if cells < 1:
        raise click.BadParameter("--cells must be >= 1")
    scenarios = []
    for k in range(cells):
        try:
            scenarios.append(
                Scenario(
                    shape=shape,
                    seed=seed + k,
                    n_service=n_service,
                    n_noservice=n_noservice,
                    center=(center[0] + 0.12 * k, center[1]),
                    radius=radius,
                    inner_radius=inner_radius,
                    bite_offset=bite_offset,
                    bite_radius=bite_radius,
                    n_blobs=blobs,
                    blob_radius=blob_radius,
                    gps_noise_sigma=noise_sigma,
                    noservice_hole_fraction=hole_fraction,
                    start=start,
                    end=end,
                    tech=tech,
                )
            )
        except ValueError as exc:
            raise click.UsageError(str(exc)) from exc
    records = []
    for sc in scenarios:
        ds, _ = generate(sc)
        records.extend(ds.records)
    merged = Dataset(
        records=records,
        provenance=IngestStats(source="synth", accepted=len(records)),
    )
    write_csv(merged, out)
    sidecar = Path(str(out) + ".scenario.json")
    doc = {"scenarios": [scenario_sidecar(sc) for sc in scenarios]}
    sidecar.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"wrote {len(merged.records)} records to {out}")


# -- train -----------------------------------------------------------

def _train_cell(cell_id, points_by_band, method, mode, nu, gamma, tol, max_iter,
                min_points, coords):
    """Fit one cell's boundaries; returns (model, skips)."""
    coordinate_mode = "degrees"
    if coords == "projected":
        stacked = np.concatenate(list(points_by_band.values()))
        lon0, lat0 = stacked.mean(axis=0)
        proj = LocalProjection(origin_lon=float(lon0), origin_lat=float(lat0))
        points_by_band = {b: proj.to_plane(p) for b, p in points_by_band.items()}
        coordinate_mode = proj.tag()
    return build_coverage_model(
        points_by_band,
        cell_id=cell_id,
        method=method,
        mode=mode,
        nu=nu,
        gamma=gamma,
        tol=tol,
        max_iter=max_iter,
        min_points=min_points,
        coordinate_mode=coordinate_mode,
    )


@main.command()
@config_option
@click.option("--input", "inputs", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True)
@click.option("--method", type=click.Choice(["ocsvm", "hull"]), default="ocsvm", show_default=True)
@click.option("--nu", type=float, default=0.05, show_default=True)
@click.option("--gamma", type=float, default=1e4, show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--max-iter", type=int, default=100_000, show_default=True)
@click.option("--mode", type=click.Choice(["partition", "cumulative"]),
              default="partition", show_default=True)
@click.option("--min-points", type=int, default=DEFAULT_MIN_POINTS, show_default=True)
@click.option("--coords", type=click.Choice(["degrees", "projected"]),
              default="degrees", show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.pass_context
@_domain_guard
def train(ctx, inputs, method, nu, gamma, tol, max_iter, mode, min_points, coords,
          jobs, out_dir):
    """Fit per-cell, per-band boundary models and write model files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _read_inputs(inputs)
    part = partition(dataset, min_points=max(min_points, 1))
    window = dataset.time_range()
    train_window = (
        (format_timestamp(window[0]), format_timestamp(window[1])) if window else None
    )
    cells = sorted({cell for cell, _ in part.by_band})
    by_cell = {
        cell: {
            band: points_of(recs)
            for (cid, band), recs in part.by_band.items()
            if cid == cell
        }
        for cell in cells
    }
    results = Parallel(n_jobs=jobs)(
        delayed(_train_cell)(cell, by_cell[cell], method, mode, nu, gamma, tol,
                             max_iter, min_points, coords)
        for cell in cells
    )
    manifest = {"models": [], "skips": []}
    for model, skips in results:
        manifest["skips"].extend(skips)
        for ordinal in sorted(model.boundaries):
            name = f"{_safe_name(model.cell_id)}_band{ordinal}_{method}.json"
            save_band_boundary(
                model.boundaries[ordinal],
                out / name,
                cell_id=model.cell_id,
                coordinate_mode=model.coordinate_mode,
                train_window=train_window,
            )
            manifest["models"].append(name)
    manifest["models"].sort()
    manifest["skips"].sort(key=lambda s: (s["cell_id"], s["band"]))
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_effective_config(ctx, out)
    if not manifest["models"]:
        raise click.ClickException("no trainable (cell, band) partitions")
    click.echo(f"wrote {len(manifest['models'])} models to {out_dir} "
               f"({len(manifest['skips'])} skipped)")


# -- grid search -----------------------------------------------------

def _grid_for_key(train_pts, val_pos, val_neg, grid, tol, max_iter):
    try:
        return grid_search(train_pts, val_pos, val_neg, grid, tol=tol, max_iter=max_iter)
    except CellcovError as exc:
        return exc


@main.command(name="grid-search")
@config_option
@click.option("--input", "inputs", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True)
@click.option("--split", type=TimestampType(), required=True,
              help="Timestamp separating train (before) from validation.")
@click.option("--nu-grid", type=FloatListType(), default="0.02,0.04,0.06,0.08",
              show_default=True)
@click.option("--gamma-grid", type=FloatListType(), default="1e4,2e4,3e4,4e4",
              show_default=True)
@click.option("--per-cell", is_flag=True, default=False,
              help="Best params per (cell, band) instead of pooled.")
@click.option("--negatives", type=click.Choice(["mixed", "noservice"]),
              default="mixed", show_default=True)
@click.option("--mode", type=click.Choice(["partition", "cumulative"]),
              default="partition", show_default=True)
@click.option("--min-points", type=int, default=DEFAULT_MIN_POINTS, show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--max-iter", type=int, default=100_000, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.pass_context
@_domain_guard
def grid_search_cmd(ctx, inputs, split, nu_grid, gamma_grid, per_cell, negatives,
                    mode, min_points, tol, max_iter, jobs, out_dir):
    """Tune (nu, gamma) on a temporal split; write table and best params."""
    from .evaluation import _negative_pool  # shared pool rule

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(nu_values=nu_grid, gamma_values=gamma_grid)
    dataset = _read_inputs(inputs)
    train_ds, val_ds = temporal_split(dataset, split)
    train_part = partition(train_ds, min_points=max(min_points, 1))
    val_part = partition(val_ds, min_points=1)

    tasks = []
    for cell_id, band in train_part.trainable_keys():
        recs = val_part.by_band.get((cell_id, band), [])
        val_pos = points_of(recs)
        val_neg = _negative_pool(val_part, cell_id, band, mode, negatives)
        tasks.append((cell_id, band, points_of(train_part.by_band[(cell_id, band)]),
                      val_pos, val_neg))
    results = Parallel(n_jobs=jobs)(
        delayed(_grid_for_key)(tr, vp, vn, grid, tol, max_iter)
        for _, _, tr, vp, vn in tasks
    )

    lines = ["cell_id,band,nu,gamma,tp,fp,fn,tn,precision,recall,f1"]
    best_doc = []

    def csv_row(cell_id, band, row):
        c = row.counts
        vals = [cell_id, str(band), repr(row.nu), repr(row.gamma),
                str(c.tp), str(c.fp), str(c.fn), str(c.tn)]
        for v in (row.precision, row.recall, row.f1):
            vals.append("" if v is None else repr(v))
        return ",".join(vals)

    ok = [(t, r) for t, r in zip(tasks, results) if not isinstance(r, Exception)]
    for (cell_id, band, *_), res in sorted(ok, key=lambda p: (p[0][0], p[0][1])):
        if per_cell:
            for row in res.rows:
                lines.append(csv_row(cell_id, band, row))
            best_doc.append({
                "cell_id": cell_id, "band": band,
                "nu": res.best_nu, "gamma": res.best_gamma, "f1": res.best.f1,
            })
    failed = [(t[0], t[1], str(r)) for t, r in zip(tasks, results) if isinstance(r, Exception)]
    for cell_id, band, reason in failed:
        click.echo(f"skipped {cell_id} band {band}: {reason}", err=True)

    if not per_cell:
        if not ok:
            raise click.ClickException("no (cell, band) produced a defined score")
        pair_rows = zip(*(res.rows for _, res in ok))  # same grid order per key
        best = None
        for rows in pair_rows:
            total = ConfusionCounts(0, 0, 0, 0)
            for row in rows:
                total = total + row.counts
            nu, gamma = rows[0].nu, rows[0].gamma
            score = f1_of(total)
            vals = ["", "", repr(nu), repr(gamma), str(total.tp), str(total.fp),
                    str(total.fn), str(total.tn)]
            for v in (total.precision, total.recall, score):
                vals.append("" if v is None else repr(v))
            lines.append(",".join(vals))
            if score is not None and (best is None or score > best["f1"]):
                best = {"cell_id": None, "band": None, "nu": nu, "gamma": gamma,
                        "f1": score}
        if best is None:
            raise click.ClickException("every grid cell has an undefined score")
        best_doc = [best]
    elif not best_doc:
        raise click.ClickException("no (cell, band) produced a defined score")

    (out / "gridsearch.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "best_params.json").write_text(
        json.dumps(best_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_effective_config(ctx, out)
    head = best_doc[0]
    click.echo(f"best nu={head['nu']} gamma={head['gamma']} f1={head['f1']:.4f}"
               + ("" if head["cell_id"] is None else " (first cell)"))


# -- compare ---------------------------------------------------------

@main.command()
@config_option
@click.option("--input", "inputs", type=click.Path(exists=True, dir_okay=False),
              multiple=True, required=True)
@click.option("--split", type=TimestampType(), required=True)
@click.option("--nu-grid", type=FloatListType(), default="0.02,0.04,0.06,0.08",
              show_default=True)
@click.option("--gamma-grid", type=FloatListType(), default="1e4,2e4,3e4,4e4",
              show_default=True)
@click.option("--negatives", type=click.Choice(["mixed", "noservice"]),
              default="mixed", show_default=True)
@click.option("--mode", type=click.Choice(["partition", "cumulative"]),
              default="partition", show_default=True)
@click.option("--min-points", type=int, default=DEFAULT_MIN_POINTS, show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--max-iter", type=int, default=100_000, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), required=True)
@click.pass_context
@_domain_guard
def compare(ctx, inputs, split, nu_grid, gamma_grid, negatives, mode, min_points,
            tol, max_iter, jobs, out_dir):
    """Hull vs grid-tuned OC-SVM on the same temporal split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = GridSpec(nu_values=nu_grid, gamma_values=gamma_grid)
    dataset = _read_inputs(inputs)
    report = compare_methods(
        dataset, split, grid,
        mode=mode, negatives=negatives, min_points=min_points,
        tol=tol, max_iter=max_iter, n_jobs=jobs,
    )
    (out / "compare.csv").write_text(report.to_csv(), encoding="utf-8")
    text = report.to_text()
    (out / "compare.txt").write_text(text, encoding="utf-8")
    _write_effective_config(ctx, out)
    click.echo(text, nl=False)


# -- export ----------------------------------------------------------

@main.command()
@config_option
@click.option("--models", "models_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--bbox", type=BboxType(), default=None,
              help="x0,y0,x1,y1 sampling window; defaults to each model's own.")
@click.option("--resolution", type=int, default=DEFAULT_RESOLUTION, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
@_domain_guard
def export(models_dir, bbox, resolution, out):
    """Write boundary polygons for every model file as GeoJSON."""
    paths = sorted(Path(models_dir).glob("*.json"))
    paths = [p for p in paths if p.name != "manifest.json"]
    models = load_coverage_models(paths)
    doc = models_to_geojson(models, bbox=bbox, resolution=resolution)
    Path(out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(f"wrote {len(doc['features'])} features to {out}")


# -- query -----------------------------------------------------------

@main.command()
@config_option
@click.option("--models", "models_dir", type=click.Path(exists=True, file_okay=False),
              required=True)
@click.option("--lon", type=float, required=True)
@click.option("--lat", type=float, required=True)
@_domain_guard
def query(models_dir, lon, lat):
    """Print the strongest band whose boundary contains the point."""
    if not -180.0 <= lon <= 180.0:
        raise click.UsageError(f"--lon must be in [-180, 180], got {lon}")
    if not -90.0 <= lat <= 90.0:
        raise click.UsageError(f"--lat must be in [-90, 90], got {lat}")
    paths = sorted(Path(models_dir).glob("*.json"))
    paths = [p for p in paths if p.name != "manifest.json"]
    models = load_coverage_models(paths)
    best = None
    for model in models.values():
        p = (lon, lat)
        if model.coordinate_mode != "degrees":
            proj = projection_from_tag(model.coordinate_mode)
            p = tuple(proj.to_plane([p])[0])
        band = model.highest_band_at(p)
        if band is not None and (best is None or band.ordinal > best.ordinal):
            best = band
    click.echo(best.display if best is not None else "none")


if __name__ == "__main__":
    main()
