"""Command-line entry point: one subcommand per pipeline stage.

All subcommands take --config (JSON), optional --seed/--workers/--out
overrides, validate their inputs before doing work, echo the resolved
configuration into the output directory, and leave an _INCOMPLETE marker
behind if they abort. Errors print one machine-readable JSON line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .aggregate import (
    AGS_LEVELS,
    AggregationConfig,
    PipelineConfig,
    aggregate_from_shards,
    run_pipeline,
    write_stats_csv,
    write_suppressed_csv,
    read_stats_csv,
)
from .distfit import DegenerateFitError
from .evaluation import (
    DEFAULT_BLOCK_SIZE,
    cross_validate,
    format_ffs_trace,
    format_fold_table,
    format_metric_report,
    forward_feature_selection,
    make_spatial_folds,
    tune_mtry,
)
from .forest import (
    DEFAULT_LEVELS,
    ForestParams,
    fit_forest,
    load_forest,
    save_forest,
)
from .population import floor_population, scenario_model
from .service import CoverageError, ServiceConfig, predict_dwelling, serve


def _load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _out_dir(args, config, subcommand) -> Path:
    if args.out:
        out = Path(args.out)
    elif config.get("out"):
        out = Path(config["out"]) / subcommand
    else:
        raise ValueError("no output directory: pass --out or set 'out' in the config")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, config: dict, seed: int) -> None:
    resolved = dict(config)
    resolved["seed"] = seed
    (out / "config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True), encoding="utf-8"
    )


def _seed(args, config) -> int:
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", 0))


def _workers(args, config) -> int:
    if args.workers is not None:
        return args.workers
    return int(config.get("workers", 1))


def _forest_params(config) -> ForestParams:
    section = config.get("forest", {})
    return ForestParams(
        ntree=int(section.get("ntree", 500)),
        mtry=int(section.get("mtry", 4)),
        min_node_size=int(section.get("min_node_size", 20)),
        subsample_fraction=float(section.get("subsample_fraction", 0.632)),
        split_strategy=section.get("split_strategy", "two-stage"),
    )


def _agg_config(config) -> AggregationConfig:
    section = config.get("aggregation", {})
    return AggregationConfig(
        thresholds=tuple(section.get("thresholds", (100.0, 300.0, 600.0, 1000.0))),
        percentiles=tuple(section.get("percentiles", (0.50, 0.90, 0.95, 0.99))),
        hist_lo=float(section.get("hist_lo", 0.1)),
        hist_hi=float(section.get("hist_hi", 1e6)),
        hist_bins=int(section.get("hist_bins", 2048)),
        sampling_factor=float(section.get("factor", 10.0)),
        min_samples=int(section.get("min_samples", 1000)),
    )


def _data_section(config) -> dict:
    section = config.get("data")
    if not section:
        raise ValueError("config lacks a 'data' section (survey/stock/rasters paths)")
    return section


def _load_training(config, predictors=None):
    section = _data_section(config)
    layers = data_mod.load_layers(section["rasters"])
    offset_layer = section.get("offset_layer", "outdoor_radon")
    env_names = [name for name in layers if name != offset_layer]
    schema = data_mod.build_schema(env_names)
    records = data_mod.read_survey_csv(section["survey"], valid_year_only=False)
    train = data_mod.join_predictors(records, layers, schema)
    if predictors:
        train = train.subset_features(predictors)
    return train, layers, offset_layer


def _folds(train, config, seed):
    section = config.get("cv", {})
    return make_spatial_folds(
        train.locations,
        block_size=float(section.get("block_size", DEFAULT_BLOCK_SIZE)),
        k=int(section.get("k", 10)),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, config):
    out = _out_dir(args, config, "synth")
    seed = _seed(args, config)
    section = config.get("synth", {})
    spec_overrides = section.get("spec", {})
    spec = data_mod.GroundTruthSpec(**spec_overrides)
    bundle = data_mod.generate_synthetic(
        spec,
        n_survey=int(section.get("n_survey", 3000)),
        n_buildings=int(section.get("n_buildings", 2000)),
        seed=seed,
    )
    data_mod.write_bundle(bundle, out)
    _echo_config(out, config, seed)
    print(f"synth: {len(bundle.survey)} survey rows, {len(bundle.stock)} buildings -> {out}")


def cmd_train(args, config):
    out = _out_dir(args, config, "train")
    seed = _seed(args, config)
    predictors = config.get("forest", {}).get("predictors")
    train, _, _ = _load_training(config, predictors)
    params = _forest_params(config)
    params = replace(params, mtry=min(params.mtry, len(train.schema)))
    forest = fit_forest(train, params, seed)
    save_forest(forest, out / "forest.json")
    _echo_config(out, config, seed)
    print(f"train: {forest.ntree} trees on {len(train)} rows -> {out / 'forest.json'}")


def cmd_select_features(args, config):
    out = _out_dir(args, config, "select-features")
    seed = _seed(args, config)
    train, _, _ = _load_training(config)
    folds = _folds(train, config, seed)
    candidates = config.get("ffs", {}).get("candidates") or list(train.schema.names)
    params = _forest_params(config)
    selected, trace = forward_feature_selection(train, candidates, folds, params, seed)
    trace_path = out / "ffs_trace.log"
    with open(trace_path, "a", encoding="utf-8") as fh:
        fh.write(format_ffs_trace(trace))
    (out / "selected.json").write_text(json.dumps(selected), encoding="utf-8")
    _echo_config(out, config, seed)
    print(f"select-features: {'+'.join(selected)} -> {trace_path}")


def cmd_tune(args, config):
    out = _out_dir(args, config, "tune")
    seed = _seed(args, config)
    predictors = config.get("forest", {}).get("predictors")
    train, _, _ = _load_training(config, predictors)
    folds = _folds(train, config, seed)
    grid = config.get("tune", {}).get("grid") or list(range(1, len(train.schema) + 1))
    best, results = tune_mtry(train, folds, grid, _forest_params(config), seed)
    lines = ["mtry,rmse"]
    lines.extend(f"{m},{results[m]!r}" for m in sorted(results))
    lines.append(f"best,{best}")
    (out / "tune.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _echo_config(out, config, seed)
    print(f"tune: best mtry={best} -> {out / 'tune.csv'}")


def cmd_evaluate(args, config):
    out = _out_dir(args, config, "evaluate")
    seed = _seed(args, config)
    predictors = config.get("forest", {}).get("predictors")
    train, _, _ = _load_training(config, predictors)
    folds = _folds(train, config, seed)
    report, heldout, per_fold = cross_validate(train, folds, _forest_params(config), seed)
    (out / "metrics.txt").write_text(format_metric_report(report), encoding="utf-8")
    (out / "folds.csv").write_text(format_fold_table(per_fold, report), encoding="utf-8")
    with open(out / "heldout.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["row", "fold", "observed", "mean"]
            + [f"q_{p:g}" for p in heldout.levels]
        )
        for i in range(len(train)):
            writer.writerow(
                [i, int(heldout.fold_of_row[i]), repr(float(train.y[i])), repr(float(heldout.mean[i]))]
                + [repr(float(v)) for v in heldout.quantiles[i]]
            )
    _echo_config(out, config, seed)
    print(f"evaluate: rmse={report.rmse:.3f} r2={report.r2:.3f} -> {out / 'metrics.txt'}")


def _predict_requests(out, config, forest, layers, offset_layer, requests_path):
    thresholds = tuple(_agg_config(config).thresholds)
    rows = []
    with open(requests_path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                payload = predict_dwelling(
                    forest,
                    layers,
                    offset_layer,
                    x=float(row["x"]),
                    y=float(row["y"]),
                    floor=int(row["floor"]),
                    age_class=row["age_class"],
                    building_type=row["building_type"],
                    living_units=int(row["living_units"]),
                    thresholds=thresholds,
                )
                rows.append((row.get("id", str(i)), payload, "ok"))
            except (CoverageError, DegenerateFitError) as exc:
                rows.append((row.get("id", str(i)), None, type(exc).__name__))
    header = ["id"]
    header += [f"q_{p:g}" for p in DEFAULT_LEVELS]
    header += ["meanlog", "sdlog", "offset"]
    header += [f"exc_{t:g}" for t in thresholds]
    header += ["dropped_levels", "status"]
    lines = [",".join(header)]
    for rid, payload, status in rows:
        if payload is None:
            lines.append(",".join([rid] + [""] * (len(header) - 2) + [status]))
            continue
        cells = [rid]
        cells += [repr(v) for v in payload["quantiles"]]
        cells += [
            repr(payload["params"]["meanlog"]),
            repr(payload["params"]["sdlog"]),
            repr(payload["params"]["offset"]),
        ]
        cells += [repr(payload["exceedance"][f"{t:g}"]) for t in thresholds]
        cells += [str(payload["diagnostics"]["dropped_fit_levels"]), status]
        lines.append(",".join(cells))
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(rows)


def _predict_stock(out, config, forest, layers, offset_layer, stock_path, scenario):
    from .aggregate import prepare_stock

    agg = _agg_config(config)
    occupancy = scenario_model(scenario)
    records, _ = data_mod.read_stock_csv(stock_path)
    chunks = prepare_stock(records, int(config.get("aggregation", {}).get("chunk_size", 5000)))
    header = ["building_id", "floor", "expected_inhabitants"]
    header += [f"q_{p:g}" for p in DEFAULT_LEVELS]
    header += ["meanlog", "sdlog", "offset", "dropped_levels", "status"]
    lines = [",".join(header)]
    n_rows = 0
    for _, chunk in chunks:
        for b in chunk:
            env = {}
            gap = False
            for pred in forest.schema.predictors:
                if pred.name in data_mod.BUILDING_PREDICTORS:
                    continue
                v = layers[pred.name].lookup(b.x, b.y)
                if v is None:
                    gap = True
                    break
                env[pred.name] = v
            offset = layers[offset_layer].lookup(b.x, b.y)
            if gap or offset is None:
                lines.append(",".join([b.building_id] + [""] * (len(header) - 2) + ["coverage_gap"]))
                continue
            for floor, expected in floor_population(b, occupancy).entries:
                try:
                    payload = predict_dwelling(
                        forest,
                        layers,
                        offset_layer,
                        x=b.x,
                        y=b.y,
                        floor=floor,
                        age_class=b.age_class,
                        building_type=b.building_type,
                        living_units=b.num_households,
                        thresholds=tuple(agg.thresholds),
                    )
                except DegenerateFitError:
                    cells = [b.building_id, str(floor), repr(expected)]
                    cells += [""] * (len(header) - 4) + ["fit_degenerate"]
                    lines.append(",".join(cells))
                    continue
                cells = [b.building_id, str(floor), repr(expected)]
                cells += [repr(v) for v in payload["quantiles"]]
                cells += [
                    repr(payload["params"]["meanlog"]),
                    repr(payload["params"]["sdlog"]),
                    repr(payload["params"]["offset"]),
                    str(payload["diagnostics"]["dropped_fit_levels"]),
                    "ok",
                ]
                lines.append(",".join(cells))
                n_rows += 1
    (out / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return n_rows


def cmd_predict(args, config):
    out = _out_dir(args, config, "predict")
    seed = _seed(args, config)
    section = _data_section(config)
    forest = load_forest(config["forest"]["path"])
    layers = data_mod.load_layers(section["rasters"])
    offset_layer = section.get("offset_layer", "outdoor_radon")
    if args.requests:
        n = _predict_requests(out, config, forest, layers, offset_layer, args.requests)
    else:
        scenario = config.get("aggregation", {}).get("scenario", "base")
        n = _predict_stock(out, config, forest, layers, offset_layer, section["stock"], scenario)
    _echo_config(out, config, seed)
    print(f"predict: {n} rows -> {out / 'predictions.csv'}")


def _pipeline_config(args, config, out: Path, scenario=None) -> PipelineConfig:
    section = _data_section(config)
    agg_section = config.get("aggregation", {})
    return PipelineConfig(
        stock_path=section["stock"],
        raster_dir=section["rasters"],
        forest_path=config["forest"]["path"],
        out_dir=str(out),
        offset_layer=section.get("offset_layer", "outdoor_radon"),
        chunk_size=int(agg_section.get("chunk_size", 5000)),
        scenario=scenario or agg_section.get("scenario", "base"),
        seed=_seed(args, config),
        workers=_workers(args, config),
        write_shards=bool(agg_section.get("write_shards", True)),
        aggregation=_agg_config(config),
    )


def cmd_sample(args, config):
    out = _out_dir(args, config, "sample")
    pipeline = _pipeline_config(args, config, out)
    report = run_pipeline(pipeline)
    _echo_config(out, config, pipeline.seed)
    print(
        f"sample: {report.n_samples} samples over {report.n_municipalities} "
        f"municipalities -> {out}"
    )


def cmd_aggregate(args, config):
    out = _out_dir(args, config, "aggregate")
    seed = _seed(args, config)
    shard_dir = Path(args.shards or config.get("aggregation", {}).get("shards", ""))
    shards = sorted(shard_dir.glob("shard-*.csv"))
    if not shards:
        raise ValueError(f"no shard files under {shard_dir}")
    agg = _agg_config(config)
    stats, suppressed = aggregate_from_shards(shards, agg)
    for level, _ in AGS_LEVELS:
        write_stats_csv(
            [s for s in stats if s.level == level], agg, out / f"stats_{level}.csv"
        )
    write_suppressed_csv(suppressed, out / "suppressed.csv")
    _echo_config(out, config, seed)
    print(f"aggregate: {len(stats)} stat rows from {len(shards)} shards -> {out}")


def cmd_diagnose(args, config):
    out = _out_dir(args, config, "diagnose")
    seed = _seed(args, config)
    section = _data_section(config)
    survey = data_mod.read_survey_csv(section["survey"])
    stock, _ = data_mod.read_stock_csv(section["stock"])
    population, sample_shares = data_mod.representativeness_floor(survey, stock)
    lines = ["table,floor,share"]
    lines.extend(f"population,{floor},{share!r}" for floor, share in population.items())
    lines.extend(f"sample,{floor},{share!r}" for floor, share in sample_shares.items())
    (out / "floor_shares.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    layers = data_mod.load_layers(section["rasters"])
    layer_name = config.get("diagnose", {}).get("layer", "soil_radon")
    sample_curve, pop_curve = data_mod.representativeness_raster(
        survey, stock, layers[layer_name]
    )
    lines = ["percentile,sample,population"]
    for (p, sv), (_, pv) in zip(sample_curve, pop_curve):
        lines.append(f"{p},{sv!r},{pv!r}")
    (out / "raster_percentiles.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    stats = data_mod.descriptive_stats(np.array([r.radon for r in survey]))
    desc = [
        f"n={stats.n}",
        f"am={stats.am!r}",
        f"sd={stats.sd!r}",
        f"gm={stats.gm!r}",
        f"gsd={stats.gsd!r}",
    ]
    desc.extend(f"p{round(p * 100)}={v!r}" for p, v in stats.percentiles.items())
    desc.extend(f"exc_{t:g}={v!r}" for t, v in stats.exceedance.items())
    (out / "descriptive.txt").write_text("\n".join(desc) + "\n", encoding="utf-8")
    _echo_config(out, config, seed)
    print(f"diagnose: floor shares + {layer_name} percentiles -> {out}")


def cmd_scenario(args, config):
    out = _out_dir(args, config, "scenario")
    seed = _seed(args, config)
    agg = _agg_config(config)
    national = {}
    for scenario in ("base", "s1", "s2"):
        sub_out = out / scenario
        sub_out.mkdir(parents=True, exist_ok=True)
        pipeline = _pipeline_config(args, config, sub_out, scenario=scenario)
        run_pipeline(pipeline)
        rows = read_stats_csv(sub_out / "stats_national.csv", agg)
        national[scenario] = rows[0] if rows else None
    lines = ["scenario,am,delta_vs_base"]
    base_am = national["base"].am if national["base"] else float("nan")
    for scenario in ("base", "s1", "s2"):
        row = national[scenario]
        am = row.am if row else float("nan")
        lines.append(f"{scenario},{am!r},{am - base_am!r}")
    (out / "scenario_report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _echo_config(out, config, seed)
    print(f"scenario: base/s1/s2 national AM deltas -> {out / 'scenario_report.csv'}")


def cmd_serve(args, config):
    section = config.get("serve", {})
    service_config = ServiceConfig(
        forest_path=config["forest"]["path"],
        raster_dir=_data_section(config)["rasters"],
        offset_layer=_data_section(config).get("offset_layer", "outdoor_radon"),
        stats_dir=section.get("stats_dir"),
        cors_origins=tuple(section.get("cors_origins", ("*",))),
        aggregation=_agg_config(config),
    )
    serve(
        service_config,
        host=section.get("host", "127.0.0.1"),
        port=int(section.get("port", 8000)),
    )


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "select-features": cmd_select_features,
    "tune": cmd_tune,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "sample": cmd_sample,
    "aggregate": cmd_aggregate,
    "diagnose": cmd_diagnose,
    "scenario": cmd_scenario,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radonest")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if name == "predict":
            p.add_argument("--requests", default=None, help="CSV of dwelling requests")
        if name == "aggregate":
            p.add_argument("--shards", default=None, help="directory with shard files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = _load_config(args.config)
    marker = None
    try:
        if args.command != "serve":
            out = _out_dir(args, config, args.command)
            marker = out / "_INCOMPLETE"
            marker.write_text("run in progress or aborted\n", encoding="utf-8")
        COMMANDS[args.command](args, config)
        if marker is not None:
            marker.unlink()
        return 0
    except Exception as exc:  # nonzero exit with one machine-readable line
        print(
            json.dumps({"error": {"code": type(exc).__name__, "message": str(exc)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
