"""Distance-kernel and homophily-embedded tract adjacency matrices.

The distance graph weights tract pairs by a Gaussian kernel of their centroid
distance, thresholded at ``eps``. The homophily graph rescales those weights
by how strongly the two tracts' feature profiles correlate, averaged over
feature groups (demography, land cover, POI = economy + road).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._io import array_hash, read_json, write_manifest
from .data.tracts import EARTH_RADIUS_KM

logger = logging.getLogger(__name__)

DEFAULT_SIGMA = 10.0
DEFAULT_EPS = 0.3
DEFAULT_GROUPS = ("demography", "land", "poi")
GROUP_MEMBERS = {
    "demography": ("demography",),
    "land": ("land",),
    "poi": ("economy", "road"),
    "economy": ("economy",),
    "road": ("road",),
}


class GraphError(ValueError):
    pass


@dataclass
class DistanceMatrix:
    tract_ids: list
    d: np.ndarray  # km


@dataclass
class CorrelationStack:
    tract_ids: list
    matrices: dict  # group name -> N x N |corr|
    degenerate: dict = field(default_factory=dict)  # group -> tract_ids with constant vectors


@dataclass
class HomophilyGraph:
    tract_ids: list
    A_d: np.ndarray
    A_prime: np.ndarray
    sigma: float = DEFAULT_SIGMA
    eps: float = DEFAULT_EPS
    groups: tuple = DEFAULT_GROUPS
    row_normalized: bool = False

    def adjacency(self, variant: str) -> np.ndarray:
        """``A_d`` for the distance-only 3d variant, ``A'`` otherwise."""
        return self.A_d if variant == "3d" else self.A_prime

    def save(self, directory) -> dict:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "A_d": save_adjacency(directory / "A_d.csv", self.tract_ids, self.A_d),
            "A_prime": save_adjacency(directory / "A_prime.csv", self.tract_ids, self.A_prime),
            "heatmap_A_d": save_heatmap(directory / "heatmap_A_d.csv", self.A_d),
            "heatmap_A_prime": save_heatmap(directory / "heatmap_A_prime.csv", self.A_prime),
        }
        return write_manifest(
            directory / "graph.manifest.json", paths,
            kind="homophily_graph", sigma=self.sigma, eps=self.eps, groups=list(self.groups),
            row_normalized=self.row_normalized, tract_ids=self.tract_ids,
            A_d_hash=array_hash(self.A_d), A_prime_hash=array_hash(self.A_prime),
        )

    @classmethod
    def load(cls, directory) -> "HomophilyGraph":
        directory = Path(directory)
        manifest = read_json(directory / "graph.manifest.json")
        ids_d, A_d = load_adjacency(directory / "A_d.csv")
        ids_p, A_p = load_adjacency(directory / "A_prime.csv")
        if ids_d != ids_p:
            raise GraphError("A_d and A_prime exports disagree on node order")
        return cls(ids_d, A_d, A_p, manifest["sigma"], manifest["eps"], tuple(manifest["groups"]),
                   manifest.get("row_normalized", False))


def save_adjacency(path, tract_ids, A) -> Path:
    pd.DataFrame(A, columns=list(tract_ids)).to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def load_adjacency(path) -> tuple[list, np.ndarray]:
    df = pd.read_csv(path, float_precision="round_trip")
    return [str(c) for c in df.columns], df.to_numpy(dtype=float)


def save_heatmap(path, A) -> Path:
    np.savetxt(path, np.asarray(A), delimiter=",", fmt="%.10g")
    return Path(path)


def pairwise_distances(tracts) -> DistanceMatrix:
    """Great-circle distances (km) between tract centroids."""
    if len(tracts) < 2:
        raise GraphError("need at least two tracts to build a graph")
    lat = np.radians([t.centroid[0] for t in tracts])
    lon = np.radians([t.centroid[1] for t in tracts])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    a = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    ids = [t.tract_id for t in tracts]
    coincident = np.argwhere(np.triu(d == 0.0, k=1))
    for i, j in coincident:
        logger.warning("tracts %s and %s share a centroid (distance 0)", ids[i], ids[j])
    return DistanceMatrix(ids, d)


def distance_kernel(d, sigma: float = DEFAULT_SIGMA, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma^2)``; zero diagonal."""
    if not sigma > 0:
        raise GraphError("sigma must be positive")
    if not 0.0 <= eps <= 1.0:
        raise GraphError("eps must lie in [0, 1]")
    d = np.asarray(getattr(d, "d", d), dtype=float)
    w = np.exp(-(d ** 2) / sigma ** 2)
    w[w < eps] = 0.0
    np.fill_diagonal(w, 0.0)
    return w


def standardize_columns(values: np.ndarray) -> np.ndarray:
    """Z-score each feature column across nodes; constant columns become zeros."""
    values = np.asarray(values, dtype=float)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    out = np.zeros_like(values)
    ok = std > 0
    out[:, ok] = (values[:, ok] - mean[ok]) / std[ok]
    return out


def row_correlations(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """|Pearson correlation| between the rows of ``X``.

    Rows with zero variance get correlation 0 with everything, themselves
    included. Returns ``(corr, degenerate_mask)``.
    """
    Xc = X - X.mean(axis=1, keepdims=True)
    norms = np.sqrt((Xc ** 2).sum(axis=1))
    degenerate = norms <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=1))
    U = np.zeros_like(Xc)
    U[~degenerate] = Xc[~degenerate] / norms[~degenerate, None]
    corr = np.clip(np.abs(U @ U.T), 0.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    return corr, degenerate


def node_correlations(features, groups=DEFAULT_GROUPS, standardize: bool = True) -> CorrelationStack:
    """Per-group node-by-node correlation magnitudes over the group's features.

    ``features`` is a FeatureTable without missing cells. With ``standardize``
    every feature column is z-scored across nodes first so that unit choice
    (dollars vs. percentages vs. densities) does not dominate.
    """
    values = np.asarray(features.values, dtype=float)
    if np.isnan(values).any():
        raise GraphError("feature table has missing cells; impute before building the graph")
    if standardize:
        values = standardize_columns(values)
    matrices, degenerate = {}, {}
    for g in groups:
        members = GROUP_MEMBERS.get(g, (g,))
        cols = [j for j, n in enumerate(features.feature_names) if features.categories.get(n) in members]
        if len(cols) < 2:
            raise GraphError(f"feature group {g!r} needs at least two feature columns, found {len(cols)}")
        corr, bad = row_correlations(values[:, cols])
        matrices[g] = corr
        if bad.any():
            degenerate[g] = [features.tract_ids[i] for i in np.flatnonzero(bad)]
            logger.warning("group %s: %d tracts with constant feature vectors get correlation 0",
                           g, int(bad.sum()))
    return CorrelationStack(list(features.tract_ids), matrices, degenerate)


def homophily_embed(stack: CorrelationStack, A_d, tract_ids=None, row_normalize: bool = False) -> np.ndarray:
    """Average of ``Corr_g * A_d`` (elementwise) over the groups in ``stack``."""
    A_d = np.asarray(A_d, dtype=float)
    if tract_ids is not None and list(tract_ids) != list(stack.tract_ids):
        raise GraphError("correlation stack and distance graph use different node orders")
    if not stack.matrices:
        raise GraphError("correlation stack is empty")
    for g, C in stack.matrices.items():
        if C.shape != A_d.shape:
            raise GraphError(f"group {g!r}: correlation shape {C.shape} != adjacency shape {A_d.shape}")
    A = sum(C * A_d for C in stack.matrices.values()) / len(stack.matrices)
    np.fill_diagonal(A, 0.0)
    if row_normalize:
        rs = A.sum(axis=1, keepdims=True)
        A = np.divide(A, rs, out=np.zeros_like(A), where=rs > 0)
    return A


def build_graph(tracts, features, sigma=DEFAULT_SIGMA, eps=DEFAULT_EPS, groups=DEFAULT_GROUPS,
                row_normalize: bool = False, standardize: bool = True) -> HomophilyGraph:
    """Distance and homophily graphs in the node order of ``tracts``."""
    ids = [t.tract_id for t in tracts]
    features = features.reorder(ids)
    dist = pairwise_distances(tracts)
    A_d = distance_kernel(dist, sigma, eps)
    stack = node_correlations(features, groups, standardize=standardize)
    A_p = homophily_embed(stack, A_d, ids, row_normalize=row_normalize)
    return HomophilyGraph(ids, A_d, A_p, sigma, eps, tuple(groups), row_normalize)
