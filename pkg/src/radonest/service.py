"""HTTP service for dwelling-scale prediction and aggregate-statistics lookup.

Artifacts (forest, rasters, aggregated stats) are loaded once at startup and
shared immutably across requests; /predict is a pure function of the request
and the loaded artifacts (no sampling happens in this path, only quantile
prediction and the closed-form distribution fit).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import data as data_mod
from .aggregate import AggregationConfig, read_stats_csv, read_suppressed_csv
from .distfit import DEFAULT_WEIGHTS, DegenerateFitError, fit_shifted_lognormal
from .forest import DEFAULT_LEVELS, SchemaError, load_forest, predict_quantiles
from .population import AGE_CLASSES, BUILDING_TYPES


class CoverageError(ValueError):
    """Requested location lies outside raster coverage."""


@dataclass
class ServiceConfig:
    forest_path: str
    raster_dir: str
    offset_layer: str = "outdoor_radon"
    stats_dir: Optional[str] = None
    cors_origins: tuple = ("*",)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)


@dataclass
class ServiceArtifacts:
    forest: object
    layers: dict
    offset_layer: str
    forest_version: str
    stats: dict  # key -> AggregateStats ("" = national)
    suppressed: dict  # key -> SuppressedStats
    aggregation: AggregationConfig


def load_artifacts(config: ServiceConfig) -> ServiceArtifacts:
    forest = load_forest(config.forest_path)
    raw = Path(config.forest_path).read_bytes()
    head = json.loads(raw)
    version = f"{head['format']}/{head['version']}/{hashlib.sha256(raw).hexdigest()[:12]}"
    layers = data_mod.load_layers(config.raster_dir)
    if config.offset_layer not in layers:
        raise ValueError(f"offset layer {config.offset_layer!r} not among rasters")
    stats = {}
    suppressed = {}
    if config.stats_dir is not None:
        stats_dir = Path(config.stats_dir)
        for level in ("municipality", "district", "state", "national"):
            path = stats_dir / f"stats_{level}.csv"
            if path.exists():
                for row in read_stats_csv(path, config.aggregation):
                    stats[row.key] = row
        sup_path = stats_dir / "suppressed.csv"
        if sup_path.exists():
            for row in read_suppressed_csv(sup_path):
                suppressed[row.key] = row
    return ServiceArtifacts(
        forest=forest,
        layers=layers,
        offset_layer=config.offset_layer,
        forest_version=version,
        stats=stats,
        suppressed=suppressed,
        aggregation=config.aggregation,
    )


# ---------------------------------------------------------------------------
# prediction core (shared with the CLI so both surfaces agree exactly)
# ---------------------------------------------------------------------------


def predict_dwelling(
    forest,
    layers: dict,
    offset_layer: str,
    x: float,
    y: float,
    floor: int,
    age_class: str,
    building_type: str,
    living_units: int,
    levels=DEFAULT_LEVELS,
    fit_weights=DEFAULT_WEIGHTS,
    thresholds=(100.0, 300.0, 600.0, 1000.0),
) -> dict:
    """Quantiles, fitted distribution and exceedance for one dwelling."""
    if floor < -1:
        raise SchemaError("floor level must be >= -1")
    if age_class not in AGE_CLASSES:
        raise SchemaError(f"unknown age class {age_class!r}")
    if building_type not in BUILDING_TYPES:
        raise SchemaError(f"unknown building type {building_type!r}")
    resolved = {}
    for pred in forest.schema.predictors:
        if pred.name in data_mod.BUILDING_PREDICTORS:
            continue
        value = layers[pred.name].lookup(x, y)
        if value is None:
            raise CoverageError(f"no {pred.name} coverage at ({x}, {y})")
        resolved[pred.name] = value
    offset = layers[offset_layer].lookup(x, y)
    if offset is None:
        raise CoverageError(f"no {offset_layer} coverage at ({x}, {y})")
    mapping = dict(resolved)
    mapping["floor"] = floor
    mapping["households"] = living_units
    mapping["age_class"] = age_class
    mapping["building_type"] = building_type
    encoded = forest.schema.encode(mapping)
    pred = predict_quantiles(forest, encoded, levels)
    fit = fit_shifted_lognormal(pred.levels, pred.values, offset, fit_weights)
    resolved["floor"] = floor
    resolved["households"] = living_units
    resolved["age_class"] = age_class
    resolved["building_type"] = building_type
    resolved[offset_layer] = offset
    return {
        "levels": list(pred.levels),
        "quantiles": [float(q) for q in pred.values],
        "params": {
            "meanlog": fit.dist.meanlog,
            "sdlog": fit.dist.sdlog,
            "offset": fit.dist.offset,
        },
        "exceedance": {f"{t:g}": fit.dist.exceedance(t) for t in thresholds},
        "predictors": resolved,
        "diagnostics": {"dropped_fit_levels": fit.dropped_levels},
    }


# ---------------------------------------------------------------------------
# HTTP app
# ---------------------------------------------------------------------------


class PredictRequest(BaseModel):
    x: float
    y: float
    floor: int
    age_class: str
    building_type: str
    living_units: int


def _error(status: int, code: str, message: str, detail=None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "detail": detail},
    )


def create_app(artifacts: Optional[ServiceArtifacts], cors_origins=("*",)) -> FastAPI:
    app = FastAPI(title="radonest")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.artifacts = artifacts

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return _error(400, "malformed_request", "request body is invalid", exc.errors())

    @app.get("/health")
    def health():
        art = app.state.artifacts
        if art is None:
            return _error(503, "model_not_loaded", "artifacts not loaded")
        return {
            "status": "ok",
            "forest_version": art.forest_version,
            "layers": sorted(art.layers),
            "aggregate_keys": len(art.stats),
        }

    @app.post("/predict")
    def predict(request: PredictRequest):
        art = app.state.artifacts
        if art is None:
            return _error(503, "model_not_loaded", "artifacts not loaded")
        try:
            payload = predict_dwelling(
                art.forest,
                art.layers,
                art.offset_layer,
                x=request.x,
                y=request.y,
                floor=request.floor,
                age_class=request.age_class,
                building_type=request.building_type,
                living_units=request.living_units,
            )
        except SchemaError as exc:
            return _error(400, "invalid_request", str(exc))
        except CoverageError as exc:
            return _error(422, "outside_coverage", str(exc))
        except DegenerateFitError as exc:
            return _error(422, "fit_degenerate", str(exc))
        return payload

    @app.get("/aggregates/{key}")
    def aggregates(key: str):
        art = app.state.artifacts
        if art is None:
            return _error(503, "model_not_loaded", "artifacts not loaded")
        if key == "national":
            key = ""
        if key != "" and (not key.isdigit() or len(key) not in (2, 5, 8)):
            return _error(422, "malformed_key", f"AGS key or prefix {key!r} is malformed")
        if key in art.stats:
            s = art.stats[key]
            return {
                "key": s.key or "national",
                "level": s.level,
                "n_samples": s.n_samples,
                "population": s.population,
                "am": s.am,
                "sd": s.sd,
                "gm": s.gm,
                "gsd": s.gsd,
                "percentiles": {f"{p:g}": v for p, v in s.percentiles.items()},
                "exceedance": {f"{t:g}": v for t, v in s.exceedance.items()},
            }
        if key in art.suppressed:
            return _error(
                404,
                "below_population_threshold",
                f"statistics for {key!r} suppressed "
                f"(n={art.suppressed[key].n_samples} samples)",
            )
        return _error(404, "unknown_key", f"no statistics for key {key!r}")

    return app


def serve(config: ServiceConfig, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    artifacts = load_artifacts(config)
    app = create_app(artifacts, cors_origins=config.cors_origins)
    uvicorn.run(app, host=host, port=port)
