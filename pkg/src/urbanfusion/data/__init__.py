from .events import DropReport, EventError, ObservationCube, locate_points, rasterize_events
from .features import (
    FeatureError,
    FeatureTable,
    SCHEMA,
    derive_aggregates,
    impute_missing,
    read_features,
    write_features,
)
from .split import DatasetSplit, SplitError, ZScore, chronological_split, split_sizes
from .tracts import TractError, TractGeometry, ingest_tracts, write_tracts
from .weather import WeatherError, WeatherSeries, ingest_weather

__all__ = [
    "DatasetSplit", "DropReport", "EventError", "FeatureError", "FeatureTable",
    "ObservationCube", "SCHEMA", "SplitError", "TractError", "TractGeometry",
    "WeatherError", "WeatherSeries", "ZScore", "chronological_split",
    "derive_aggregates", "impute_missing", "ingest_tracts", "ingest_weather",
    "locate_points", "rasterize_events", "read_features", "split_sizes",
    "write_features", "write_tracts",
]
