"""Seeded synthetic cities for tests, demos and desk-scale acceptance runs.

A city is a grid of square tracts with a feature table drawn around latent
cluster centroids. Count processes:

``constant``      Poisson with a fixed rate ``lam`` (0 gives an all-zero cube)
``zinb``          iid ZINB(n, p, pi) in every cell
``diffusion``     Poisson around a spatially smoothed AR(1) log-intensity field
``clustered``     Poisson around one AR(1) log-intensity per feature cluster
``weather_zinb``  ZINB whose mean follows temperature and whose zero
                  inflation drifts slowly per tract
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import yaml

from .data.events import ObservationCube
from .data.features import ECONOMY_FEATURES, LAND_FEATURES, SCHEMA, FeatureTable, write_features
from .data.tracts import KM2_PER_SQMI, TractGeometry, write_tracts
from .data.weather import VARIABLES, WeatherSeries
from .graph import distance_kernel, pairwise_distances

KM_PER_DEG_LAT = 111.19492664455873
PROCESSES = ("constant", "zinb", "diffusion", "clustered", "weather_zinb")


@dataclass
class SyntheticCity:
    tracts: list
    features: FeatureTable
    clusters: np.ndarray
    seed: int
    params: dict = field(default_factory=dict)

    @property
    def tract_ids(self) -> list:
        return [t.tract_id for t in self.tracts]


def gen_city(N: int, seed: int = 0, n_clusters: int = 4, spacing_km: float = 4.0,
             origin=(41.88, -87.63), feature_noise: float = 0.35) -> SyntheticCity:
    """Grid city of ``N`` tracts with cluster-structured features."""
    if N < 4:
        raise ValueError("a synthetic city needs at least 4 tracts")
    rng = np.random.default_rng(seed)
    cols = int(np.ceil(np.sqrt(N)))
    lat0, lon0 = origin
    dlat = spacing_km / KM_PER_DEG_LAT
    dlon = spacing_km / (KM_PER_DEG_LAT * np.cos(np.radians(lat0)))
    area = spacing_km ** 2 / KM2_PER_SQMI
    population = np.round(rng.lognormal(np.log(3000), 0.6, N)).astype(int)
    tracts = []
    for i in range(N):
        r, c = divmod(i, cols)
        lat, lon = lat0 + r * dlat, lon0 + c * dlon
        ring = (
            (lat - dlat / 2, lon - dlon / 2), (lat - dlat / 2, lon + dlon / 2),
            (lat + dlat / 2, lon + dlon / 2), (lat + dlat / 2, lon - dlon / 2),
            (lat - dlat / 2, lon - dlon / 2),
        )
        tracts.append(TractGeometry(f"17031{i:06d}", (lat, lon), int(population[i]), area, (ring,)))

    clusters = rng.permutation(np.arange(N) % n_clusters)
    names = [f for f, _ in SCHEMA]
    centroids = rng.normal(size=(n_clusters, len(names)))
    latent = centroids[clusters] + feature_noise * rng.normal(size=(N, len(names)))
    values = np.empty_like(latent)
    scale = rng.lognormal(0.0, 1.5, len(names))
    offset = rng.normal(0.0, 3.0, len(names)) * scale
    for j in range(len(names)):
        values[:, j] = offset[j] + scale[j] * latent[:, j]
    for group in (ECONOMY_FEATURES, LAND_FEATURES):
        idx = [names.index(f) for f in group]
        e = np.exp(latent[:, idx])
        values[:, idx] = 100.0 * e / e.sum(axis=1, keepdims=True)
    features = FeatureTable([t.tract_id for t in tracts], names, values, dict(SCHEMA))
    return SyntheticCity(tracts, features, clusters, seed,
                         {"n_clusters": n_clusters, "spacing_km": spacing_km, "feature_noise": feature_noise})


def _ar1(rng, T, size, rho, scale=1.0):
    """Stationary AR(1) paths with unit marginal variance times ``scale``."""
    out = np.empty((T,) + tuple(np.atleast_1d(size)))
    out[0] = rng.normal(size=size)
    innov = np.sqrt(1 - rho ** 2)
    for t in range(1, T):
        out[t] = rho * out[t - 1] + innov * rng.normal(size=size)
    return scale * out


def gen_weather(time_index, rng) -> WeatherSeries:
    """Diurnal + multi-day sinusoids with smooth noise for the five weather variables."""
    hours = (time_index - time_index[0]) / pd.Timedelta(hours=1)
    hours = np.asarray(hours, dtype=float)
    T = len(hours)
    step = hours[1] - hours[0] if T > 1 else 1.0
    rho = 0.97 ** step
    front = np.sin(2 * np.pi * hours / (24 * 5.3))
    temp = 8 + 7 * np.sin(2 * np.pi * (hours - 9) / 24) + 6 * front + _ar1(rng, T, (), rho, 1.5)
    humid = np.clip(65 - 10 * np.sin(2 * np.pi * (hours - 9) / 24) - 5 * front + _ar1(rng, T, (), rho, 5), 5, 100)
    wind = np.abs(4 + 2 * front + _ar1(rng, T, (), rho, 1.5))
    direction = np.mod(200 + 60 * front + np.cumsum(rng.normal(0, 5, T)), 360)
    precip = np.clip(_ar1(rng, T, (), rho, 1.0) - 1.2, 0, None) * 2.0
    values = np.column_stack([temp, humid, wind, direction, precip])
    return WeatherSeries(time_index, list(VARIABLES), values)


def diurnal(time_index, amplitude: float = 0.4) -> np.ndarray:
    h = np.asarray(time_index.hour) + np.asarray(time_index.minute) / 60
    return 1.0 + amplitude * np.sin(2 * np.pi * (h - 10) / 24)


def sample_zinb(rng, n, p, pi) -> np.ndarray:
    """Draws with P(y) = (1-pi) C(y+n-1, y) p^y (1-p)^n for y > 0 (p counts events)."""
    n, p, pi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (n, p, pi)))
    nb = rng.negative_binomial(n, 1.0 - p)
    return np.where(rng.random(n.shape) < pi, 0, nb).astype(np.int64)


def gen_counts(city: SyntheticCity, T: int, process: str, seed: int = 0, interval: int = 1,
               start="2019-01-01", **params):
    """Sample a ``T`` x N cube and an aligned weather series.

    Returns ``(cube, weather, truth)`` where ``truth`` records the generative
    parameters (and per-cell ZINB parameters for the ZINB processes).
    """
    if process not in PROCESSES:
        raise ValueError(f"unknown process {process!r}; choose from {PROCESSES}")
    if T < 200 and not params.pop("allow_short", False):
        raise ValueError("synthetic series need T >= 200")
    rng = np.random.default_rng(seed)
    time_index = pd.date_range(pd.Timestamp(start), periods=T, freq=f"{interval}h")
    weather = gen_weather(time_index, rng)
    N = len(city.tracts)
    truth = {"process": process, "seed": seed, **params}
    step = float(interval)

    if process == "constant":
        lam = params.get("lam", 0.0)
        counts = rng.poisson(lam, size=(T, N))
    elif process == "zinb":
        n, p, pi = params.get("n", 2.0), params.get("p", 0.5), params.get("pi", 0.6)
        counts = sample_zinb(rng, np.full((T, N), n), p, pi)
        truth.update(n=n, p=p, pi=pi)
    elif process == "diffusion":
        base = params.get("base", 30.0)
        strength = params.get("strength", 0.5)
        rho = params.get("rho", 0.9) ** step
        K = distance_kernel(pairwise_distances(city.tracts), params.get("sigma", 10.0), 0.0)
        K = K + np.eye(N)
        P = K / K.sum(axis=1, keepdims=True)
        z = np.zeros((T, N))
        z[0] = P @ rng.normal(size=N)
        for t in range(1, T):
            z[t] = rho * (P @ z[t - 1]) + np.sqrt(1 - rho ** 2) * (P @ rng.normal(size=N))
        z /= z.std()
        lam = base * rng.uniform(0.6, 1.4, N)[None] * diurnal(time_index)[:, None] * np.exp(strength * z)
        counts = rng.poisson(lam)
        truth["intensity"] = lam
    elif process == "clustered":
        base = params.get("base", 6.0)
        strength = params.get("strength", 0.8)
        rho = params.get("rho", 0.9) ** step
        node_share = params.get("node_noise", 0.1)
        k = int(city.clusters.max()) + 1
        c = _ar1(rng, T, k, rho)
        own = _ar1(rng, T, N, rho)
        z = np.sqrt(1 - node_share) * c[:, city.clusters] + np.sqrt(node_share) * own
        lam = base * rng.uniform(0.6, 1.4, N)[None] * diurnal(time_index)[:, None] * np.exp(strength * z)
        counts = rng.poisson(lam)
        truth["intensity"] = lam
    else:  # weather_zinb
        shape = params.get("shape", 5.0)
        base = params.get("base", 10.0)
        beta = params.get("beta", 0.6)
        temp = weather.values[:, 0]
        tz = (temp - temp.mean()) / temp.std()
        drift = _ar1(rng, T, N, 0.995 ** step, 0.3)
        mu = (base * rng.uniform(0.5, 1.5, N)[None] * diurnal(time_index)[:, None]
              * np.exp(beta * tz[:, None] + drift))
        logit0 = np.log(params.get("pi_mean", 0.05) / (1 - params.get("pi_mean", 0.05)))
        pi = 1 / (1 + np.exp(-(logit0 + rng.normal(0, 0.3, N)[None] + _ar1(rng, T, N, 0.995 ** step, 0.4))))
        p = mu / (shape + mu)
        n = np.full((T, N), shape)
        counts = sample_zinb(rng, n, p, pi)
        truth.update(n=n, p=p, pi=pi)
    cube = ObservationCube(time_index, city.tract_ids, counts, interval)
    return cube, weather, truth


def events_from_cube(cube: ObservationCube, city: SyntheticCity, seed: int = 0, coords_share: float = 0.5) -> pd.DataFrame:
    """Explode a cube into event rows; a share of rows carries lat/lon instead of tract_id."""
    rng = np.random.default_rng(seed)
    t_idx, n_idx = np.nonzero(cube.counts)
    reps = cube.counts[t_idx, n_idx]
    t_idx, n_idx = np.repeat(t_idx, reps), np.repeat(n_idx, reps)
    offsets = rng.uniform(0, cube.interval * 3600, t_idx.size)
    ts = cube.time_index[t_idx] + pd.to_timedelta(np.floor(offsets), unit="s")
    use_coords = rng.random(t_idx.size) < coords_share
    lat = np.full(t_idx.size, np.nan)
    lon = np.full(t_idx.size, np.nan)
    tract_id = np.array([city.tracts[n].tract_id for n in n_idx], dtype=object)
    for i in np.flatnonzero(use_coords):
        ring = city.tracts[n_idx[i]].polygon[0]
        lats, lons = [p[0] for p in ring], [p[1] for p in ring]
        # stay strictly inside the square so edge assignment is unambiguous
        lat[i] = rng.uniform(min(lats), max(lats)) * 0.98 + 0.01 * (min(lats) + max(lats))
        lon[i] = rng.uniform(min(lons), max(lons)) * 0.98 + 0.01 * (min(lons) + max(lons))
    tract_id[use_coords] = None
    return pd.DataFrame({
        "timestamp": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "tract_id": tract_id,
        "lat": lat,
        "lon": lon,
    })


def hourly_weather_frame(weather: WeatherSeries, interval: int) -> pd.DataFrame:
    """Hourly source-format weather (rain/snow split) consistent with ``weather``."""
    idx = pd.date_range(weather.time_index[0], periods=len(weather.time_index) * interval, freq="1h")
    rep = np.repeat(weather.values, interval, axis=0)
    precip = rep[:, 4] / interval
    return pd.DataFrame({
        "timestamp": idx.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "temperature": rep[:, 0],
        "humidity": rep[:, 1],
        "wind_speed": rep[:, 2],
        "wind_direction": rep[:, 3],
        "rain": np.where(rep[:, 0] > 0, precip, 0.0),
        "snow": np.where(rep[:, 0] > 0, 0.0, precip),
    })


def write_fixture(directory, city: SyntheticCity, cube: ObservationCube, weather: WeatherSeries,
                  as_events: bool = False, seed: int = 0, config: Optional[dict] = None):
    """Serialize a synthetic dataset in the ingest file formats plus a runnable config.yaml."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tracts(directory / "tracts.geojson", city.tracts)
    write_features(city.features, directory / "features.csv", directory / "categories.json")
    hourly_weather_frame(weather, cube.interval).to_csv(directory / "weather.csv", index=False, float_format="%.10g")
    data = {"tracts": "tracts.geojson", "features": "features.csv", "categories": "categories.json",
            "weather": "weather.csv", "interval": int(cube.interval)}
    if as_events:
        events_from_cube(cube, city, seed).to_csv(directory / "events.csv", index=False)
        end = cube.time_index[-1] + pd.Timedelta(hours=cube.interval)
        data.update(events="events.csv", start=cube.time_index[0].isoformat(), end=end.isoformat())
    else:
        cube.to_csv(directory / "observations.csv")
        data["observations"] = "observations.csv"
    cfg = {"data": data, "output": "runs/experiment", **(config or {})}
    (directory / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    return directory / "config.yaml"
