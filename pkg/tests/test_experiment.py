import json

import numpy as np
import pandas as pd
import pytest
import yaml

from urbanfusion import cli
from urbanfusion.experiment import (
    REPORT_COLUMNS,
    ConfigError,
    ExperimentConfig,
    StageError,
    compare,
    report_table,
    run,
)
from urbanfusion.synthetic import gen_city, gen_counts, write_fixture

TINY_STGCN = {"input_horizon": 8, "blocks": [[4, 2, 4], [4, 2, 4]], "head_hidden": 4, "temporal_kernel": 2,
              "max_epochs": 2, "patience": 5}
TINY_STZINB = {"input_horizon": 8, "gcn_widths": [4, 4], "tcn_widths": [4, 4], "embed_dim": 4, "heads": 2,
               "max_epochs": 2, "patience": 5, "lr": 1e-3}


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("city")
    city = gen_city(6, 0)
    cube, weather, _ = gen_counts(city, 240, "weather_zinb", seed=0)
    write_fixture(d, city, cube, weather, config={"stgcn": TINY_STGCN, "stzinb": TINY_STZINB,
                                                   "rf": {"lags": 8, "n_estimators": 5}})
    return d


def make_config(fixture_dir, out, **kw):
    raw = yaml.safe_load((fixture_dir / "config.yaml").read_text())
    raw["output"] = str(out)
    for k, v in kw.items():
        raw[k] = v
    return ExperimentConfig.from_dict(raw, fixture_dir)


def test_distance_only_recorded_for_3d(fixture_dir, tmp_path):
    run(make_config(fixture_dir, tmp_path / "r", model="stgcn", variant="3d"))
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["adjacency"] == "distance-only" and manifest["status"] == "complete"
    for f in ("graph", "checkpoint.pt", "metrics.json", "predictions.csv", "mape_per_tract.csv"):
        assert (tmp_path / "r" / f).exists()
    run(make_config(fixture_dir, tmp_path / "h", model="stgcn", variant="3d2d"))
    assert json.loads((tmp_path / "h" / "manifest.json").read_text())["adjacency"] == "homophily"


@pytest.mark.parametrize("model,variant", [("stzinb", "3d2d1d"), ("rf", None)])
def test_same_seed_byte_identical_metrics(fixture_dir, tmp_path, model, variant):
    for name in ("a", "b"):
        run(make_config(fixture_dir, tmp_path / name, model=model, variant=variant))
    assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()
    if model == "stzinb":
        dist = pd.read_csv(tmp_path / "a" / "distribution.csv")
        assert {"n", "p", "pi", "q_lo", "q_hi"} <= set(dist.columns)


def test_weather_variant_without_weather_rejected(fixture_dir, tmp_path):
    raw = yaml.safe_load((fixture_dir / "config.yaml").read_text())
    raw["data"]["weather"] = None
    raw.update(model="stgcn", variant="3d2d1d", output=str(tmp_path))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw, fixture_dir)
    assert not (tmp_path / "checkpoint.pt").exists()


def test_config_validation(fixture_dir, tmp_path):
    with pytest.raises(ConfigError, match="unknown config key"):
        make_config(fixture_dir, tmp_path, bogus=1)
    with pytest.raises(ConfigError):
        make_config(fixture_dir, tmp_path, model="arima")
    with pytest.raises(ConfigError):
        make_config(fixture_dir, tmp_path, stgcn={"input_horizon": 2})
    cfg = make_config(fixture_dir, tmp_path, model="stzinb", variant="3d2d1d")
    assert cfg.stzinb_config().attention and cfg.graph["sigma"] == 10.0 and cfg.split["ratios"] == [0.7, 0.2, 0.1]


def _fake_run(directory, mape, y_by_tract=None):
    directory.mkdir(parents=True)
    meta = {"model": "ha", "variant": None}
    (directory / "metrics.json").write_text(json.dumps({"mape_per_tract": mape, "metadata": meta,
                                                        "mae_tract": 1.0}))
    if y_by_tract is not None:
        rows = [(f"2020-01-01T0{i}:00:00", t, v) for t, ys in y_by_tract.items() for i, v in enumerate(ys)]
        pd.DataFrame(rows, columns=["timestamp", "tract_id", "y"]).assign(y_hat=0.0).to_csv(
            directory / "predictions.csv", index=False)


def test_compare_self_is_zero(fixture_dir, tmp_path):
    run(make_config(fixture_dir, tmp_path / "a", model="ha"))
    s = compare(tmp_path / "a", tmp_path / "a", tmp_path / "cmp")
    assert all(v == 0 for v in s["delta_mape"].values()) and s["improved_fraction"] == 0
    geo = json.loads((tmp_path / "cmp" / "delta_mape.geojson").read_text())
    assert len(geo["features"]) == 6 and "delta_mape" in geo["features"][0]["properties"]


def test_compare_two_tract_arithmetic(tmp_path):
    _fake_run(tmp_path / "a", {"x": 10.0, "y": 20.0}, {"x": [0, 1, 0], "y": [3, 4, 5]})
    _fake_run(tmp_path / "b", {"x": 5.0, "y": 25.0})
    s = compare(tmp_path / "a", tmp_path / "b", tmp_path / "out")
    assert s["delta_mape"] == {"x": -5.0, "y": 5.0}
    assert s["improved_fraction"] == 0.5
    assert s["low_activity"] == ["x"]
    assert pd.read_csv(tmp_path / "out" / "delta_mape.csv")["delta_mape"].tolist() == [-5.0, 5.0]


def test_compare_mismatched_tracts(tmp_path):
    _fake_run(tmp_path / "a", {"x": 1.0})
    _fake_run(tmp_path / "b", {"z": 1.0})
    with pytest.raises(ValueError):
        compare(tmp_path / "a", tmp_path / "b")


def test_report_layout(fixture_dir, tmp_path):
    run(make_config(fixture_dir, tmp_path / "ha", model="ha"))
    run(make_config(fixture_dir, tmp_path / "st", model="stgcn", variant="3d"))
    table = report_table([tmp_path / "ha", tmp_path / "st"])
    assert list(table.columns) == ["Metrics"] + [c[0] for c in REPORT_COLUMNS]
    assert len(REPORT_COLUMNS) == 8
    row = table.set_index("Metrics")
    assert row.loc["MAE (tract)", "HA"] != "-" and row.loc["MPIW", "HA"] == "-"
    assert (row["STZINB 3d"] == "-").all()


def test_stage_failure_manifest(fixture_dir, tmp_path):
    cfg = make_config(fixture_dir, tmp_path / "bad", model="ha")
    cfg.data["features"] = fixture_dir / "missing.csv"
    with pytest.raises(StageError) as info:
        run(cfg)
    assert info.value.stage == "load"
    manifest = json.loads((tmp_path / "bad" / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "load"
    assert manifest["completed_stages"] == []


def test_non_converged_run_reports_nulls(fixture_dir, tmp_path):
    cfg = make_config(fixture_dir, tmp_path / "nc", model="stgcn", variant="3d",
                      stgcn={**TINY_STGCN, "lr": 1e9})
    result = run(cfg)
    if result.report.metadata.get("converged"):
        pytest.skip("run converged despite the huge learning rate")
    assert result.report.mae_tract is None
    assert all(v is None for v in json.loads((tmp_path / "nc" / "metrics.json").read_text())["mape_per_tract"].values())


# ---------------------------------------------------------------- CLI

def test_cli_stages_and_exit_codes(fixture_dir, tmp_path, capsys):
    cfg = str(fixture_dir / "config.yaml")
    out = str(tmp_path / "run")
    base = ["--config", cfg, "--output", out, "--model", "stgcn", "--variant", "3d"]
    assert cli.main(["build-graph", *base]) == 0
    assert (tmp_path / "run" / "graph").is_dir()
    assert cli.main(["evaluate", *base]) == 2  # no checkpoint yet
    assert cli.main(["train", *base, "--set", "stgcn.max_epochs=1"]) == 0
    assert cli.main(["evaluate", *base]) == 0
    assert (tmp_path / "run" / "metrics.json").exists()
    assert cli.main(["run", "--config", cfg, "--output", str(tmp_path / "ha"), "--model", "ha"]) == 0
    assert cli.main(["compare", out, str(tmp_path / "ha"), "--out", str(tmp_path / "cmp")]) == 0
    assert cli.main(["report", out, str(tmp_path / "ha"), "--out", str(tmp_path / "t.csv")]) == 0
    assert pd.read_csv(tmp_path / "t.csv").shape == (7, 9)
    assert cli.main(["run", *base, "--set", "nonsense=1"]) == 2


def test_cli_data_error(fixture_dir, tmp_path):
    raw = yaml.safe_load((fixture_dir / "config.yaml").read_text())
    raw["data"]["features"] = "nope.csv"
    path = fixture_dir / "broken.yaml"
    path.write_text(yaml.safe_dump(raw))
    assert cli.main(["run", "--config", str(path), "--output", str(tmp_path), "--model", "ha"]) == 3


def test_cli_config_errors(fixture_dir, tmp_path):
    raw = yaml.safe_load((fixture_dir / "config.yaml").read_text())
    raw["data"]["weather"] = None
    path = fixture_dir / "noweather.yaml"
    path.write_text(yaml.safe_dump(raw))
    args = ["run", "--config", str(path), "--output", str(tmp_path), "--model", "stgcn", "--variant", "3d2d1d"]
    assert cli.main(args) == 2
    assert cli.main(["run", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_cli_synth(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--N", "4", "--T", "200", "--process", "zinb"]) == 0
    assert (tmp_path / "config.yaml").exists() and (tmp_path / "observations.csv").exists()
