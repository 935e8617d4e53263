import json
import pytest

from radonest.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = root / "out"
    config = {
        "seed": 5,
        "workers": 1,
        "out": str(out),
        "synth": {
            "n_survey": 150,
            "n_buildings": 160,
            "spec": {
                "extent": 100_000.0,
                "cell_size": 10_000.0,
                "municipality_size": 50_000.0,
            },
        },
        "data": {
            "survey": str(out / "synth" / "survey.csv"),
            "stock": str(out / "synth" / "stock.csv"),
            "rasters": str(out / "synth" / "rasters"),
        },
        "forest": {
            "ntree": 8,
            "mtry": 3,
            "min_node_size": 15,
            "path": str(out / "train" / "forest.json"),
        },
        "cv": {"k": 3, "block_size": 40_000.0},
        "aggregation": {"chunk_size": 50, "min_samples": 10},
        "diagnose": {"layer": "soil_radon"},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config))
    return {"root": root, "out": out, "config": config, "config_path": str(config_path)}


def _run(workspace, *argv):
    return main([*argv, "--config", workspace["config_path"]])


def test_synth_then_train(workspace):
    assert _run(workspace, "synth") == 0
    out = workspace["out"]
    assert (out / "synth" / "survey.csv").exists()
    assert (out / "synth" / "stock.csv").exists()
    assert (out / "synth" / "config.json").exists()
    assert not (out / "synth" / "_INCOMPLETE").exists()

    assert _run(workspace, "train") == 0
    assert (out / "train" / "forest.json").exists()
    echoed = json.loads((out / "train" / "config.json").read_text())
    assert echoed["seed"] == 5


def test_evaluate_writes_metrics(workspace):
    assert _run(workspace, "evaluate") == 0
    out = workspace["out"] / "evaluate"
    metrics = (out / "metrics.txt").read_text()
    assert "rmse=" in metrics and "r2=" in metrics
    assert sum(1 for line in metrics.splitlines() if line.startswith("qcp_")) == 9
    assert (out / "folds.csv").exists()
    heldout = (out / "heldout.csv").read_text().splitlines()
    assert len(heldout) == 151  # header + one row per survey record


def test_tune_and_select_features(workspace):
    cfg = dict(workspace["config"])
    cfg["tune"] = {"grid": [1, 2]}
    cfg["ffs"] = {"candidates": ["soil_radon", "floor", "households"]}
    cfg["forest"] = dict(cfg["forest"], ntree=4)
    path = workspace["root"] / "config_small.json"
    path.write_text(json.dumps(cfg))
    assert main(["tune", "--config", str(path)]) == 0
    tune_table = (workspace["out"] / "tune" / "tune.csv").read_text()
    assert tune_table.startswith("mtry,rmse")
    assert main(["select-features", "--config", str(path)]) == 0
    trace = (workspace["out"] / "select-features" / "ffs_trace.log").read_text()
    assert "accepted=true" in trace
    selected = json.loads(
        (workspace["out"] / "select-features" / "selected.json").read_text()
    )
    assert len(selected) >= 2


def test_sample_pipeline_and_reaggregation(workspace):
    assert _run(workspace, "sample") == 0
    out = workspace["out"] / "sample"
    for level in ("municipality", "district", "state", "national"):
        assert (out / f"stats_{level}.csv").exists()
    report = (out / "report.txt").read_text()
    assert "n_samples=" in report
    shards = sorted((out / "shards").glob("shard-*.csv"))
    assert len(shards) >= 2  # 160 buildings at chunk_size 50

    assert _run(workspace, "aggregate", "--shards", str(out / "shards")) == 0
    re_out = workspace["out"] / "aggregate"
    assert (re_out / "stats_national.csv").read_text() == (
        out / "stats_national.csv"
    ).read_text()
    assert (re_out / "stats_municipality.csv").read_text() == (
        out / "stats_municipality.csv"
    ).read_text()


def test_sample_idempotent(workspace, tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert _run(workspace, "sample", "--out", str(out_a)) == 0
    assert _run(workspace, "sample", "--out", str(out_b)) == 0
    for level in ("municipality", "national"):
        assert (out_a / f"stats_{level}.csv").read_text() == (
            out_b / f"stats_{level}.csv"
        ).read_text()


def test_predict_requests_mode(workspace, tmp_path):
    requests = tmp_path / "requests.csv"
    requests.write_text(
        "id,x,y,floor,age_class,building_type,living_units\n"
        "r1,50000.0,50000.0,0,1981_1995,single_two_family,1\n"
        "r2,50000.0,50000.0,-1,before_1945,multi_family,4\n"
        "r3,9e9,9e9,0,1981_1995,single_two_family,1\n"
    )
    assert _run(workspace, "predict", "--requests", str(requests)) == 0
    lines = (workspace["out"] / "predict" / "predictions.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[1].endswith(",ok")
    assert lines[3].endswith(",CoverageError")


def test_predict_stock_mode(workspace, tmp_path):
    out = tmp_path / "stockpred"
    assert _run(workspace, "predict", "--out", str(out)) == 0
    lines = (out / "predictions.csv").read_text().splitlines()
    assert lines[0].startswith("building_id,floor,expected_inhabitants")
    assert len(lines) > 160  # at least one row per building floor


def test_diagnose_outputs(workspace):
    assert _run(workspace, "diagnose") == 0
    out = workspace["out"] / "diagnose"
    floor_shares = (out / "floor_shares.csv").read_text()
    assert floor_shares.startswith("table,floor,share")
    assert "population," in floor_shares and "sample," in floor_shares
    assert (out / "raster_percentiles.csv").exists()
    assert (out / "descriptive.txt").read_text().startswith("n=")


def test_scenario_monotone_on_synthetic(workspace):
    assert _run(workspace, "scenario") == 0
    out = workspace["out"] / "scenario"
    lines = (out / "scenario_report.csv").read_text().splitlines()
    assert lines[0] == "scenario,am,delta_vs_base"
    ams = {row.split(",")[0]: float(row.split(",")[1]) for row in lines[1:]}
    assert ams["s1"] < ams["base"] < ams["s2"]


def test_error_exit_is_machine_readable(tmp_path, capsys):
    config = tmp_path / "broken.json"
    config.write_text(json.dumps({"out": str(tmp_path / "o"), "data": {"survey": "nope.csv", "stock": "nope.csv", "rasters": str(tmp_path)}}))
    code = main(["train", "--config", str(config)])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    payload = json.loads(err)
    assert "error" in payload and payload["error"]["code"]
    assert (tmp_path / "o" / "train" / "_INCOMPLETE").exists()


def test_missing_out_dir_is_an_error(tmp_path, capsys):
    config = tmp_path / "no_out.json"
    config.write_text("{}")
    assert main(["synth", "--config", str(config)]) == 1
    err = capsys.readouterr().err
    assert "output directory" in err
