import json

import numpy as np
import pytest
import torch

from urbanfusion.data.tracts import parse_tracts


def square(lat0, lon0, size=1.0):
    """GeoJSON polygon coordinates ([lon, lat]) of an axis-aligned square."""
    return [[[lon0, lat0], [lon0 + size, lat0], [lon0 + size, lat0 + size], [lon0, lat0 + size], [lon0, lat0]]]


def feature(tract_id, coords, population=100, **props):
    return {
        "type": "Feature",
        "properties": {"tract_id": tract_id, "population": population, **props},
        "geometry": {"type": "Polygon", "coordinates": coords},
    }


@pytest.fixture
def three_tracts_geojson():
    return {
        "type": "FeatureCollection",
        "features": [
            feature("17031000300", square(0.0, 2.0), population=50),
            feature("17031000100", square(0.0, 0.0), population=300),
            feature("17031000200", square(0.0, 1.0), population=200),
        ],
    }


@pytest.fixture
def three_tracts(three_tracts_geojson):
    return parse_tracts(three_tracts_geojson)


@pytest.fixture
def tracts_file(tmp_path, three_tracts_geojson):
    path = tmp_path / "tracts.geojson"
    path.write_text(json.dumps(three_tracts_geojson))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)
