"""Tract-level (2D) feature tables and the 48-feature aggregate schema."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CATEGORIES = ("demography", "economy", "road", "land")

DEMOGRAPHY_FEATURES = (
    "totpop", "popden", "pctmale", "hhsize", "pcthighschool", "pctsomecollege",
    "pctbachelor", "medage", "pctyoung", "pctmiddleyoung", "pctasian", "pctwhite",
    "pctblack", "pcthisp", "carown", "pct2car", "timetowork", "pcttransit",
    "pctdrialone", "numworker", "unemploy", "medhhinc", "incpercap", "pctpoverty",
    "pctlowinc", "pctmodinc", "pctlowmidinc", "pcthighmidinc", "pctmidinc",
    "pcthighinc", "giniindex", "pctrentocc", "pctdesinfam", "pctsinfam",
    "medvalue", "medrent",
)
ECONOMY_FEATURES = ("Retail", "Office", "Service", "Entertain", "Indus")
ROAD_FEATURES = ("RdNetwkDen", "InterstDen", "Walkscore")
LAND_FEATURES = ("usgs_water", "usgs_developed", "usgs_cultivated", "usgs_vegetation")
OPTIONAL_FEATURES = ("Walkscore",)

SCHEMA = (
    [(f, "demography") for f in DEMOGRAPHY_FEATURES]
    + [(f, "economy") for f in ECONOMY_FEATURES]
    + [(f, "road") for f in ROAD_FEATURES]
    + [(f, "land") for f in LAND_FEATURES]
)

# LEHD workplace-area "CNS" NAICS sectors -> five industry groups.
LEHD_GROUPS = {
    "Retail": ("CNS07",),  # retail trade
    "Office": ("CNS09", "CNS10", "CNS11", "CNS13"),  # information, finance, real estate, management
    "Indus": ("CNS01", "CNS02", "CNS03", "CNS04", "CNS05", "CNS06"),
    "Service": ("CNS12", "CNS14", "CNS15", "CNS19", "CNS08", "CNS16", "CNS20"),
    "Entertain": ("CNS17", "CNS18"),  # arts/entertainment, accommodation/food
}
LEHD_COLUMNS = tuple(f"CNS{i:02d}" for i in range(1, 21))

# NLCD 2019 conterminous-US classes -> four land groups.
NLCD_GROUPS = {
    "usgs_water": ("nlcd_11", "nlcd_12", "nlcd_90", "nlcd_95"),
    "usgs_developed": ("nlcd_21", "nlcd_22", "nlcd_23", "nlcd_24"),
    "usgs_cultivated": ("nlcd_81", "nlcd_82"),
    "usgs_vegetation": ("nlcd_31", "nlcd_41", "nlcd_42", "nlcd_43", "nlcd_52", "nlcd_71"),
}
NLCD_COLUMNS = tuple(c for cols in NLCD_GROUPS.values() for c in cols)

SHARE_TOLERANCE = 0.5


class FeatureError(ValueError):
    pass


@dataclass
class FeatureTable:
    """N x F feature matrix; NaN cells mark missing values explicitly."""

    tract_ids: list
    feature_names: list
    values: np.ndarray
    categories: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tract_ids = [str(t) for t in self.tract_ids]
        self.feature_names = list(self.feature_names)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.tract_ids), len(self.feature_names)):
            raise FeatureError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.tract_ids)} tracts x {len(self.feature_names)} features"
            )
        if len(set(self.tract_ids)) != len(self.tract_ids):
            raise FeatureError("duplicate tract_id in feature table")
        for name, cat in self.categories.items():
            if cat not in CATEGORIES:
                raise FeatureError(f"feature {name!r}: unknown category {cat!r}")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.feature_names.index(name)]
        except ValueError:
            raise FeatureError(f"missing column {name!r}") from None

    def has(self, name: str) -> bool:
        return name in self.feature_names

    def select(self, names) -> "FeatureTable":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureTable(
            self.tract_ids, list(names), self.values[:, idx],
            {n: self.categories[n] for n in names if n in self.categories},
        )

    def reorder(self, tract_ids) -> "FeatureTable":
        """Rows permuted to follow ``tract_ids`` (must be the same set)."""
        tract_ids = [str(t) for t in tract_ids]
        if sorted(tract_ids) != sorted(self.tract_ids):
            raise FeatureError("feature table tracts do not match the requested node order")
        pos = {t: i for i, t in enumerate(self.tract_ids)}
        return FeatureTable(tract_ids, self.feature_names, self.values[[pos[t] for t in tract_ids]],
                            dict(self.categories))

    def names_in(self, category: str) -> list:
        return [n for n in self.feature_names if self.categories.get(n) == category]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.feature_names)
        df.insert(0, "tract_id", self.tract_ids)
        return df


def read_features(csv_path, categories_path=None) -> FeatureTable:
    """Load a feature CSV (first column ``tract_id``) and optional category sidecar JSON.

    Without a sidecar, categories come from the standard schema. Empty cells become NaN. Rows are sorted by tract_id.
    """
    df = pd.read_csv(csv_path, dtype={"tract_id": str}, float_precision="round_trip")
    if df.columns[0] != "tract_id":
        raise FeatureError("first column of the feature CSV must be tract_id")
    df = df.sort_values("tract_id", kind="mergesort")
    names = list(df.columns[1:])
    if categories_path is not None:
        categories = json.loads(Path(categories_path).read_text())
    else:
        categories = {n: c for n, c in SCHEMA if n in names}
    try:
        values = df[names].to_numpy(dtype=float)
    except ValueError as exc:
        raise FeatureError(f"non-numeric feature cell: {exc}") from None
    return FeatureTable(df["tract_id"].tolist(), names, values, categories)


def write_features(table: FeatureTable, csv_path, categories_path=None) -> None:
    table.to_frame().to_csv(csv_path, index=False, float_format="%.17g")
    if categories_path is not None:
        Path(categories_path).write_text(json.dumps(table.categories, indent=1, sort_keys=True))


def impute_missing(table: FeatureTable) -> tuple[FeatureTable, list]:
    """Replace NaN cells with the city-wide column median.

    Returns the imputed table and a log of ``(tract_id, feature, value)`` fills.
    A column with no observed value at all is rejected.
    """
    values = table.values.copy()
    filled = []
    for j, name in enumerate(table.feature_names):
        col = values[:, j]
        missing = np.isnan(col)
        if missing.all():
            raise FeatureError(f"feature column {name!r} is entirely missing")
        if missing.any():
            med = float(np.median(col[~missing]))
            col[missing] = med
            for i in np.flatnonzero(missing):
                filled.append((table.tract_ids[i], name, med))
    if filled:
        logger.info("imputed %d missing feature cells with column medians", len(filled))
    return FeatureTable(table.tract_ids, table.feature_names, values, dict(table.categories)), filled


def _share_groups(raw: FeatureTable, groups: dict, label: str) -> dict:
    source = [c for cols in groups.values() for c in cols]
    for c in source:
        if not raw.has(c):
            raise FeatureError(f"{label}: missing source column {c!r}")
    block = np.column_stack([raw.column(c) for c in source])
    totals = block.sum(axis=1)
    empty = np.all(block == 0, axis=1)
    bad = ~empty & ~np.isnan(totals) & (np.abs(totals - 100.0) > SHARE_TOLERANCE)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise FeatureError(
            f"{label}: shares for tract {raw.tract_ids[i]} sum to {totals[i]:.3f}, expected 100"
        )
    out = {}
    for name, cols in groups.items():
        v = np.column_stack([raw.column(c) for c in cols]).sum(axis=1)
        v[empty] = np.nan
        out[name] = v
    if empty.any():
        logger.info("%s: %d tracts with no reported shares left as missing", label, int(empty.sum()))
    return out


def derive_aggregates(raw: FeatureTable, area: Optional[dict] = None) -> FeatureTable:
    """Collapse raw source columns into the 48-feature tract schema.

    Expected raw columns: the 36 demographic variables (``popden`` may be
    derived from ``totpop``), the 20 LEHD sector shares ``CNS01..CNS20`` and the
    16 NLCD land-cover shares ``nlcd_XX`` (percent, each set summing to 100),
    ``road_miles`` and ``intersections``. Tract area in square miles comes from
    an ``area_sqmi`` column or the ``area`` mapping. ``Walkscore`` is passed
    through when present.
    """
    n = len(raw.tract_ids)
    if raw.has("area_sqmi"):
        areas = raw.column("area_sqmi")
    elif area is not None:
        try:
            areas = np.array([float(area[t]) for t in raw.tract_ids])
        except KeyError as exc:
            raise FeatureError(f"no area for tract {exc.args[0]!r}") from None
    else:
        raise FeatureError("missing source column 'area_sqmi' (or pass area=)")
    if np.any(~(areas > 0)):
        raise FeatureError("tract areas must be positive")

    cols: dict[str, np.ndarray] = {}
    for name in DEMOGRAPHY_FEATURES:
        if raw.has(name):
            cols[name] = raw.column(name)
        elif name == "popden" and raw.has("totpop"):
            cols[name] = raw.column("totpop") / areas
        else:
            raise FeatureError(f"demography: missing source column {name!r}")
    cols.update(_share_groups(raw, LEHD_GROUPS, "LEHD"))
    for src in ("road_miles", "intersections"):
        if not raw.has(src):
            raise FeatureError(f"road: missing source column {src!r}")
    cols["RdNetwkDen"] = raw.column("road_miles") / areas
    cols["InterstDen"] = raw.column("intersections") / areas
    if raw.has("Walkscore"):
        cols["Walkscore"] = raw.column("Walkscore")
    cols.update(_share_groups(raw, NLCD_GROUPS, "NLCD"))

    names = [f for f, _ in SCHEMA if f in cols]
    values = np.column_stack([cols[f] for f in names]) if names else np.empty((n, 0))
    categories = {f: c for f, c in SCHEMA if f in cols}
    return FeatureTable(raw.tract_ids, names, values, categories)


def check_schema(table: FeatureTable) -> list:
    """Return required schema features absent from ``table`` (Walkscore is optional)."""
    return [f for f, _ in SCHEMA if f not in OPTIONAL_FEATURES and not table.has(f)]
