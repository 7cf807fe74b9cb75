"""Census tract geometry: GeoJSON ingestion, centroids and areas."""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

KM2_PER_SQMI = 2.589988110336
EARTH_RADIUS_KM = 6371.0088


class TractError(ValueError):
    pass


@dataclass(frozen=True)
class TractGeometry:
    """One census tract.

    ``centroid`` and every polygon vertex are ``(lat, lon)`` in degrees.
    ``polygon`` holds the exterior ring of each part (holes are not kept).
    ``area`` is in square miles.
    """

    tract_id: str
    centroid: tuple[float, float]
    population: int
    area: float
    polygon: Optional[tuple[tuple[tuple[float, float], ...], ...]] = None

    def __post_init__(self):
        lat, lon = self.centroid
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise TractError(f"tract {self.tract_id}: centroid {self.centroid} out of range")
        if self.population < 0:
            raise TractError(f"tract {self.tract_id}: negative population")
        if not self.area > 0:
            raise TractError(f"tract {self.tract_id}: area must be positive, got {self.area}")


def ring_centroid(ring) -> tuple[float, float, float]:
    """Shoelace centroid of a closed or open ring of (x, y) points.

    Returns ``(cx, cy, signed_area)``. Degenerate rings fall back to the vertex mean.
    """
    pts = list(ring)
    if len(pts) > 1 and tuple(pts[0]) == tuple(pts[-1]):
        pts = pts[:-1]
    a = cx = cy = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
        cross = x0 * y1 - x1 * y0
        a += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    a *= 0.5
    if abs(a) < 1e-15:
        xs, ys = zip(*pts)
        return sum(xs) / len(xs), sum(ys) / len(ys), 0.0
    return cx / (6.0 * a), cy / (6.0 * a), a


def polygon_centroid(rings) -> tuple[float, float]:
    """Area-weighted centroid over the parts of a (multi)polygon, in (lat, lon)."""
    total = sx = sy = 0.0
    for ring in rings:
        cx, cy, a = ring_centroid(ring)
        w = abs(a)
        total += w
        sx += cx * w
        sy += cy * w
    if total == 0.0:
        cx, cy, _ = ring_centroid([p for ring in rings for p in ring])
        return cx, cy
    return sx / total, sy / total


def polygon_area_sqmi(rings) -> float:
    """Planar (equirectangular) area of lat/lon rings in square miles."""
    total = 0.0
    for ring in rings:
        lat0 = math.radians(sum(p[0] for p in ring) / len(ring))
        km = [
            (math.radians(lat) * EARTH_RADIUS_KM, math.radians(lon) * EARTH_RADIUS_KM * math.cos(lat0))
            for lat, lon in ring
        ]
        total += abs(ring_centroid(km)[2])
    return total / KM2_PER_SQMI


def _parse_rings(geometry, idx: int):
    if geometry is None:
        return None
    gtype = geometry.get("type")
    coords = geometry.get("coordinates")
    if gtype == "Polygon":
        parts = [coords]
    elif gtype == "MultiPolygon":
        parts = coords
    else:
        raise TractError(f"feature {idx}: unsupported geometry type {gtype!r}")
    rings = []
    try:
        for part in parts:
            exterior = part[0]
            ring = []
            for lon, lat, *_ in exterior:
                lat, lon = float(lat), float(lon)
                if not (-90 <= lat <= 90 and -180 <= lon <= 180) or not (math.isfinite(lat) and math.isfinite(lon)):
                    raise ValueError((lat, lon))
                ring.append((lat, lon))
            if len(ring) < 3:
                raise ValueError("ring with fewer than 3 vertices")
            rings.append(tuple(ring))
    except (TypeError, ValueError, IndexError) as exc:
        raise TractError(f"feature {idx}: malformed coordinates ({exc})") from None
    return tuple(rings)


def parse_tracts(collection: dict) -> list[TractGeometry]:
    if collection.get("type") != "FeatureCollection":
        raise TractError("tract file must be a GeoJSON FeatureCollection")
    tracts = {}
    for idx, feat in enumerate(collection.get("features", [])):
        props = feat.get("properties") or {}
        if "tract_id" not in props:
            raise TractError(f"feature {idx}: missing tract_id")
        tid = str(props["tract_id"])
        if tid in tracts:
            raise TractError(f"duplicate tract_id {tid!r} (feature {idx})")
        rings = _parse_rings(feat.get("geometry"), idx)
        if props.get("centroid") is not None:
            try:
                lat, lon = (float(v) for v in props["centroid"])
            except (TypeError, ValueError):
                raise TractError(f"feature {idx}: malformed centroid {props['centroid']!r}") from None
        elif rings:
            lat, lon = polygon_centroid(rings)
        else:
            raise TractError(f"feature {idx}: tract {tid} has neither centroid nor polygon")
        area = props.get("area_sqmi")
        if area is None:
            if not rings:
                raise TractError(f"feature {idx}: tract {tid} has no area_sqmi and no polygon")
            area = polygon_area_sqmi(rings)
        try:
            population = int(props.get("population", 0))
        except (TypeError, ValueError):
            raise TractError(f"feature {idx}: malformed population {props.get('population')!r}") from None
        try:
            tracts[tid] = TractGeometry(tid, (lat, lon), population, float(area), rings)
        except TractError as exc:
            raise TractError(f"feature {idx}: {exc}") from None
    return [tracts[k] for k in sorted(tracts)]


def ingest_tracts(path) -> list[TractGeometry]:
    """Read a tract GeoJSON file; tracts come back sorted by ``tract_id``."""
    with open(path) as fh:
        collection = json.load(fh)
    tracts = parse_tracts(collection)
    logger.info("loaded %d tracts from %s", len(tracts), path)
    return tracts


def tracts_to_geojson(tracts, extra_properties: Optional[dict] = None) -> dict:
    """Inverse of :func:`parse_tracts`; ``extra_properties`` maps tract_id -> dict."""
    features = []
    for t in tracts:
        props = {
            "tract_id": t.tract_id,
            "population": int(t.population),
            "area_sqmi": t.area,
            "centroid": [t.centroid[0], t.centroid[1]],
        }
        if extra_properties and t.tract_id in extra_properties:
            props.update(extra_properties[t.tract_id])
        geom = None
        if t.polygon:
            polys = [[[[lon, lat] for lat, lon in ring]] for ring in t.polygon]
            geom = (
                {"type": "Polygon", "coordinates": polys[0]}
                if len(polys) == 1
                else {"type": "MultiPolygon", "coordinates": polys}
            )
        features.append({"type": "Feature", "properties": props, "geometry": geom})
    return {"type": "FeatureCollection", "features": features}


def write_tracts(path, tracts, extra_properties=None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(tracts_to_geojson(tracts, extra_properties), indent=1))
    return path
