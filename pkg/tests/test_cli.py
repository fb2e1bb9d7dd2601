import json

import numpy as np
import pytest
from click.testing import CliRunner

from cellcov.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def synth_args(out, shape="annulus", n_service=600, n_noservice=200, **extra):
    args = [
        "synth", "--shape", shape, "--seed", "0",
        "--n-service", str(n_service), "--n-noservice", str(n_noservice),
        "--out", str(out),
    ]
    for key, val in extra.items():
        args.extend([f"--{key.replace('_', '-')}", str(val)])
    return args


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One synth CSV plus trained models shared by the read-only tests."""
    root = tmp_path_factory.mktemp("pipeline")
    runner = CliRunner()
    csv = root / "data.csv"
    r = runner.invoke(main, synth_args(csv))
    assert r.exit_code == 0, r.output
    models = root / "models"
    r = runner.invoke(
        main,
        ["train", "--input", str(csv), "--out-dir", str(models), "--gamma", "30000"],
    )
    assert r.exit_code == 0, r.output
    return root


class TestSynth:
    def test_deterministic_and_sidecar(self, runner, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            r = runner.invoke(main, synth_args(out))
            assert r.exit_code == 0, r.output
            assert "wrote 800 records" in r.output
        assert a.read_bytes() == b.read_bytes()
        doc = json.loads((tmp_path / "a.csv.scenario.json").read_text())
        (sc,) = doc["scenarios"]
        assert sc["shape"] == "annulus"
        assert sc["cell_id"] == "cell-000"
        assert len(sc["cut_radii"]) == 5

    def test_missing_shape_is_usage_error(self, runner, tmp_path):
        r = runner.invoke(main, ["synth", "--out", str(tmp_path / "x.csv")])
        assert r.exit_code == 2
        assert "--shape" in r.output

    def test_invalid_scenario_is_usage_error(self, runner, tmp_path):
        r = runner.invoke(
            main,
            synth_args(tmp_path / "x.csv", inner_radius="0.05", radius="0.03"),
        )
        assert r.exit_code == 2
        assert "inner_radius" in r.output

    def test_multiple_cells(self, runner, tmp_path):
        out = tmp_path / "two.csv"
        r = runner.invoke(main, synth_args(out, shape="disk", cells="2"))
        assert r.exit_code == 0, r.output
        text = out.read_text()
        assert "cell-000" in text and "cell-001" in text
        doc = json.loads((tmp_path / "two.csv.scenario.json").read_text())
        assert [s["seed"] for s in doc["scenarios"]] == [0, 1]
        assert doc["scenarios"][0]["center"][0] != doc["scenarios"][1]["center"][0]

    def test_bad_center_format(self, runner, tmp_path):
        r = runner.invoke(
            main, synth_args(tmp_path / "x.csv", shape="disk", center="1,2,3")
        )
        assert r.exit_code == 2


class TestTrain:
    def test_manifest_and_models(self, pipeline_dir):
        models = pipeline_dir / "models"
        manifest = json.loads((models / "manifest.json").read_text())
        assert manifest["skips"] == []
        assert manifest["models"] == sorted(manifest["models"])
        assert len(manifest["models"]) == 5
        for name in manifest["models"]:
            assert name.startswith("cell-000_band")
            assert name.endswith("_ocsvm.json")
            assert (models / name).exists()
        assert (models / "effective_config.txt").exists()

    def test_rerun_byte_identical(self, runner, pipeline_dir, tmp_path):
        models2 = tmp_path / "models2"
        r = runner.invoke(
            main,
            ["train", "--input", str(pipeline_dir / "data.csv"),
             "--out-dir", str(models2), "--gamma", "30000"],
        )
        assert r.exit_code == 0, r.output
        for path in sorted(models2.glob("*.json")):
            want = (pipeline_dir / "models" / path.name).read_bytes()
            assert path.read_bytes() == want

    def test_no_trainable_partitions_fails(self, runner, pipeline_dir, tmp_path):
        r = runner.invoke(
            main,
            ["train", "--input", str(pipeline_dir / "data.csv"),
             "--out-dir", str(tmp_path / "m"), "--min-points", "100000"],
        )
        assert r.exit_code == 1
        assert "no trainable" in r.output

    def test_hull_method(self, runner, pipeline_dir, tmp_path):
        out = tmp_path / "hull_models"
        r = runner.invoke(
            main,
            ["train", "--input", str(pipeline_dir / "data.csv"),
             "--out-dir", str(out), "--method", "hull"],
        )
        assert r.exit_code == 0, r.output
        files = sorted(p.name for p in out.glob("*_hull.json"))
        assert len(files) == 5
        doc = json.loads((out / files[0]).read_text())
        assert doc["method"] == "hull" and "vertices" in doc

    def test_projected_coords_tagged(self, runner, pipeline_dir, tmp_path):
        out = tmp_path / "proj_models"
        r = runner.invoke(
            main,
            ["train", "--input", str(pipeline_dir / "data.csv"),
             "--out-dir", str(out), "--coords", "projected", "--gamma", "1e-5"],
        )
        assert r.exit_code == 0, r.output
        doc = json.loads(next(out.glob("*band5*.json")).read_text())
        assert doc["coordinate_mode"].startswith("projected:")

    def test_config_precedence(self, runner, pipeline_dir, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("nu=0.09\ngamma=25000\n")
        out1 = tmp_path / "m1"
        r = runner.invoke(
            main,
            ["train", "--config", str(cfg), "--input", str(pipeline_dir / "data.csv"),
             "--out-dir", str(out1)],
        )
        assert r.exit_code == 0, r.output
        text = (out1 / "effective_config.txt").read_text()
        assert "nu=0.09" in text and "gamma=25000.0" in text
        out2 = tmp_path / "m2"
        r = runner.invoke(
            main,
            ["train", "--config", str(cfg), "--nu", "0.11",
             "--input", str(pipeline_dir / "data.csv"), "--out-dir", str(out2)],
        )
        assert r.exit_code == 0, r.output
        text = (out2 / "effective_config.txt").read_text()
        assert "nu=0.11" in text and "gamma=25000.0" in text

    def test_unknown_config_key(self, runner, pipeline_dir, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus=1\n")
        r = runner.invoke(
            main,
            ["train", "--config", str(cfg), "--input", str(pipeline_dir / "data.csv"),
             "--out-dir", str(tmp_path / "m")],
        )
        assert r.exit_code == 2
        assert "unknown key" in r.output

    def test_corrupt_csv_is_domain_error(self, runner, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("lon,lat\n1,2\n")
        r = runner.invoke(
            main, ["train", "--input", str(bad), "--out-dir", str(tmp_path / "m")]
        )
        assert r.exit_code == 1


class TestGridSearchCmd:
    def test_pooled_default_grid(self, runner, pipeline_dir, tmp_path):
        out = tmp_path / "gs"
        r = runner.invoke(
            main,
            ["grid-search", "--input", str(pipeline_dir / "data.csv"),
             "--split", "2024-02-01T00:00:00Z", "--out-dir", str(out)],
        )
        assert r.exit_code == 0, r.output
        lines = (out / "gridsearch.csv").read_text().strip().split("\n")
        assert lines[0] == "cell_id,band,nu,gamma,tp,fp,fn,tn,precision,recall,f1"
        assert len(lines) == 17  # 4x4 grid, pooled
        assert all(l.startswith(",,") for l in lines[1:])
        nus = [float(l.split(",")[2]) for l in lines[1:]]
        assert nus == sorted(nus)
        # best_params must be the row-major argmax of the table
        rows = [l.split(",") for l in lines[1:]]
        scored = [(float(p[2]), float(p[3]), float(p[10]) if p[10] else None) for p in rows]
        best_f1 = max(s for _, _, s in scored if s is not None)
        want = next((nu, g) for nu, g, s in scored if s == best_f1)
        (best,) = json.loads((out / "best_params.json").read_text())
        assert (best["nu"], best["gamma"]) == want
        assert best["cell_id"] is None and best["band"] is None
        assert best["f1"] == pytest.approx(best_f1)

    def test_per_cell_mode(self, runner, pipeline_dir, tmp_path):
        out = tmp_path / "gs_cell"
        r = runner.invoke(
            main,
            ["grid-search", "--input", str(pipeline_dir / "data.csv"),
             "--split", "2024-02-01T00:00:00Z", "--per-cell",
             "--nu-grid", "0.02,0.08", "--gamma-grid", "1e4",
             "--out-dir", str(out)],
        )
        assert r.exit_code == 0, r.output
        lines = (out / "gridsearch.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 5 * 2  # 5 bands x 2 grid cells
        assert all(l.startswith("cell-000,") for l in lines[1:])
        best = json.loads((out / "best_params.json").read_text())
        assert [(b["cell_id"], b["band"]) for b in best] == [
            ("cell-000", o) for o in (1, 2, 3, 4, 5)
        ]
        assert all(b["nu"] in (0.02, 0.08) and b["gamma"] == 1e4 for b in best)

    def test_single_cell_grid_passthrough(self, runner, pipeline_dir, tmp_path):
        out = tmp_path / "gs_one"
        r = runner.invoke(
            main,
            ["grid-search", "--input", str(pipeline_dir / "data.csv"),
             "--split", "2024-02-01T00:00:00Z",
             "--nu-grid", "0.05", "--gamma-grid", "2e4", "--out-dir", str(out)],
        )
        assert r.exit_code == 0, r.output
        (best,) = json.loads((out / "best_params.json").read_text())
        assert best["nu"] == 0.05 and best["gamma"] == 2e4
        assert "best nu=0.05 gamma=20000.0" in r.output

    def test_bad_split_timestamp(self, runner, pipeline_dir, tmp_path):
        r = runner.invoke(
            main,
            ["grid-search", "--input", str(pipeline_dir / "data.csv"),
             "--split", "not-a-time", "--out-dir", str(tmp_path / "x")],
        )
        assert r.exit_code == 2


class TestCompareCmd:
    def run_compare(self, runner, pipeline_dir, out):
        return runner.invoke(
            main,
            ["compare", "--input", str(pipeline_dir / "data.csv"),
             "--split", "2024-02-01T00:00:00Z",
             "--nu-grid", "0.05", "--gamma-grid", "1e4,2e4",
             "--out-dir", str(out)],
        )

    def test_outputs_and_rerun_identical(self, runner, pipeline_dir, tmp_path):
        out1, out2 = tmp_path / "c1", tmp_path / "c2"
        r1 = self.run_compare(runner, pipeline_dir, out1)
        assert r1.exit_code == 0, r1.output
        csv = (out1 / "compare.csv").read_text()
        lines = csv.strip().split("\n")
        assert lines[0] == "cell_id,band,method,nu,gamma,tp,fp,fn,tn,precision,recall,f1"
        assert len(lines) == 1 + 5 * 2  # 5 bands, hull + ocsvm
        text = (out1 / "compare.txt").read_text()
        assert text in r1.output
        for label_bit in ("Poor to none", "in-home and outdoor"):
            assert label_bit in text
        r2 = self.run_compare(runner, pipeline_dir, out2)
        assert r2.exit_code == 0
        assert (out2 / "compare.csv").read_bytes() == csv.encode()
        assert (out2 / "compare.txt").read_text() == text


class TestExportCmd:
    def test_valid_geojson(self, runner, pipeline_dir, tmp_path):
        out = tmp_path / "cov.geojson"
        r = runner.invoke(
            main,
            ["export", "--models", str(pipeline_dir / "models"),
             "--resolution", "96", "--out", str(out)],
        )
        assert r.exit_code == 0, r.output
        doc = json.loads(out.read_text())
        assert doc["type"] == "FeatureCollection"
        assert len(doc["features"]) == 5
        assert "wrote 5 features" in r.output
        for feat in doc["features"]:
            geom = feat["geometry"]
            polys = [geom["coordinates"]] if geom["type"] == "Polygon" else geom["coordinates"]
            for poly in polys:
                for ring in poly:
                    assert ring[0] == ring[-1]

    def test_innermost_band_ring_has_hole(self, runner, pipeline_dir, tmp_path):
        # band 5 hugs the annulus hole, so its region is itself annular
        out = tmp_path / "cov.geojson"
        r = runner.invoke(
            main,
            ["export", "--models", str(pipeline_dir / "models"),
             "--resolution", "128", "--out", str(out)],
        )
        assert r.exit_code == 0
        doc = json.loads(out.read_text())
        band5 = next(f for f in doc["features"] if f["properties"]["band"] == 5)
        geom = band5["geometry"]
        polys = [geom["coordinates"]] if geom["type"] == "Polygon" else geom["coordinates"]
        assert any(len(poly) >= 2 for poly in polys)

    def test_empty_models_dir(self, runner, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        out = tmp_path / "cov.geojson"
        r = runner.invoke(main, ["export", "--models", str(empty), "--out", str(out)])
        assert r.exit_code == 0, r.output
        assert json.loads(out.read_text()) == {"type": "FeatureCollection", "features": []}

    def test_corrupt_model_file_is_domain_error(self, runner, tmp_path):
        bad = tmp_path / "models"
        bad.mkdir()
        (bad / "x.json").write_text("{not json")
        r = runner.invoke(
            main, ["export", "--models", str(bad), "--out", str(tmp_path / "o.json")]
        )
        assert r.exit_code == 1


class TestQueryCmd:
    def test_annulus_ring_hole_and_far(self, runner, pipeline_dir):
        models = str(pipeline_dir / "models")
        # hole center and a point far outside both answer "none"
        r = runner.invoke(main, ["query", "--models", models, "--lon", "-1.5", "--lat", "52.5"])
        assert r.exit_code == 0 and r.output == "none\n"
        r = runner.invoke(main, ["query", "--models", models, "--lon", "0.0", "--lat", "0.0"])
        assert r.exit_code == 0 and r.output == "none\n"

    def test_disk_center_strongest_band(self, runner, tmp_path):
        csv = tmp_path / "disk.csv"
        r = runner.invoke(main, synth_args(csv, shape="disk", n_service=900))
        assert r.exit_code == 0
        models = tmp_path / "models"
        r = runner.invoke(
            main,
            ["train", "--input", str(csv), "--out-dir", str(models), "--gamma", "5000"],
        )
        assert r.exit_code == 0, r.output
        r = runner.invoke(
            main, ["query", "--models", str(models), "--lon", "-1.5", "--lat", "52.5"]
        )
        assert r.exit_code == 0
        assert r.output == "5. Good in-home and outdoor\n"

    def test_coordinate_validation(self, runner, pipeline_dir):
        models = str(pipeline_dir / "models")
        r = runner.invoke(main, ["query", "--models", models, "--lon", "999", "--lat", "0"])
        assert r.exit_code == 2 and "--lon" in r.output
        r = runner.invoke(main, ["query", "--models", models, "--lon", "0", "--lat", "-91"])
        assert r.exit_code == 2 and "--lat" in r.output

    def test_projected_models_answer_in_degrees(self, runner, tmp_path):
        csv = tmp_path / "disk.csv"
        r = runner.invoke(main, synth_args(csv, shape="disk", n_service=900))
        assert r.exit_code == 0
        models = tmp_path / "proj"
        # meter-scale gamma matching the degree-scale 5e3 used above
        r = runner.invoke(
            main,
            ["train", "--input", str(csv), "--out-dir", str(models),
             "--coords", "projected", "--gamma", "4e-7"],
        )
        assert r.exit_code == 0, r.output
        r = runner.invoke(
            main, ["query", "--models", str(models), "--lon", "-1.5", "--lat", "52.5"]
        )
        assert r.exit_code == 0
        assert r.output == "5. Good in-home and outdoor\n"


class TestHelp:
    def test_group_lists_commands(self, runner):
        r = runner.invoke(main, ["--help"])
        assert r.exit_code == 0
        for cmd in ("synth", "train", "grid-search", "compare", "export", "query"):
            assert cmd in r.output
