"""City-wide hourly weather (1D modality) resampled onto the observation clock."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SOURCE_COLUMNS = ("temperature", "humidity", "wind_speed", "wind_direction", "rain", "snow")
VARIABLES = ("temperature", "humidity", "wind_speed", "wind_direction", "precipitation")
MAX_GAP_HOURS = 3


class WeatherError(ValueError):
    pass


@dataclass
class WeatherSeries:
    time_index: pd.DatetimeIndex
    variables: list
    values: np.ndarray

    def __post_init__(self):
        self.time_index = pd.DatetimeIndex(self.time_index)
        self.variables = list(self.variables)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.time_index), len(self.variables)):
            raise WeatherError("weather values do not match time x variables")
        if np.isnan(self.values).any():
            raise WeatherError("weather series has missing cells")

    def check_aligned(self, cube) -> None:
        if len(self.time_index) != cube.T or not self.time_index.equals(cube.time_index):
            raise WeatherError("weather clock is not aligned with the observation cube")

    def to_csv(self, path) -> Path:
        df = pd.DataFrame(self.values, columns=self.variables)
        df.insert(0, "timestamp", self.time_index.strftime("%Y-%m-%dT%H:%M:%S"))
        df.to_csv(path, index=False, float_format="%.17g")
        return Path(path)

    @classmethod
    def from_csv(cls, path) -> "WeatherSeries":
        df = pd.read_csv(path, float_precision="round_trip")
        names = list(df.columns[1:])
        return cls(pd.to_datetime(df["timestamp"]), names, df[names].to_numpy(dtype=float))


def _circular_mean_deg(x: pd.Series) -> float:
    r = np.deg2rad(x.to_numpy())
    return float(np.rad2deg(np.arctan2(np.sin(r).mean(), np.cos(r).mean())) % 360.0)


def _longest_nan_run(mask: np.ndarray) -> tuple[int, int]:
    best = (0, -1)
    run = 0
    for i, m in enumerate(mask):
        run = run + 1 if m else 0
        if run > best[0]:
            best = (run, i - run + 1)
    return best


def ingest_weather(source, target) -> WeatherSeries:
    """Resample hourly records onto ``target``'s clock.

    Within each bin temperature, humidity and wind speed are averaged, wind
    direction is averaged on the circle, and rain + snow are summed into a
    single ``precipitation`` column. Gaps of up to three hours are linearly
    interpolated at the hourly level; a longer gap raises :class:`WeatherError`.
    """
    df = pd.read_csv(source) if isinstance(source, (str, Path)) else source.copy()
    missing = [c for c in ("timestamp",) + SOURCE_COLUMNS if c not in df.columns]
    if missing:
        raise WeatherError(f"weather source lacks columns {missing}")
    ts = pd.to_datetime(df["timestamp"], utc=True, format="mixed").dt.tz_convert(None)
    df = df.assign(timestamp=ts).drop_duplicates("timestamp").set_index("timestamp").sort_index()
    df = df[list(SOURCE_COLUMNS)].apply(pd.to_numeric, errors="coerce")

    start = target.time_index[0]
    end = target.time_index[-1] + pd.Timedelta(hours=target.interval)
    hourly_index = pd.date_range(start, end, freq="1h", inclusive="left")
    hourly = df.reindex(df.index.union(hourly_index))
    for col in SOURCE_COLUMNS:
        gap, at = _longest_nan_run(hourly.loc[hourly_index, col].isna().to_numpy())
        if gap > MAX_GAP_HOURS:
            raise WeatherError(
                f"weather column {col!r}: gap of {gap} hours starting {hourly_index[at]} "
                f"exceeds the {MAX_GAP_HOURS}-hour interpolation limit"
            )
    hourly = hourly.interpolate(method="time", limit_direction="both").loc[hourly_index]
    hourly["precipitation"] = hourly["rain"] + hourly["snow"]

    step = f"{target.interval}h"
    grouped = hourly.groupby(pd.Grouper(freq=step, origin=start, label="left", closed="left"))
    out = pd.DataFrame({
        "temperature": grouped["temperature"].mean(),
        "humidity": grouped["humidity"].mean(),
        "wind_speed": grouped["wind_speed"].mean(),
        "wind_direction": grouped["wind_direction"].agg(_circular_mean_deg),
        "precipitation": grouped["precipitation"].sum(),
    }).reindex(target.time_index)
    return WeatherSeries(target.time_index, list(VARIABLES), out[list(VARIABLES)].to_numpy())
