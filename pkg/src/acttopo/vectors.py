"""Lifetime-weighted vectorization of persistent subgraph structure.

Every unique edge across a training collection defines one dimension of a
sparse vector space. A persistence result is vectorized by placing, on each of
its edges present in that universe, either 1 (binary occupancy) or the
lifetime of the generator containing the edge times the edge weight. The
distance between two vectors is the L1 sum over the union of occupied
dimensions, which reduces to the Hamming distance in binary mode, and the
classification kernel is exp(-gamma * distance).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConsistencyError, UsageError
from .persistence import PersistenceResult

MODES = ("binary", "lifetime-weighted")


@dataclass
class EdgeItems:
    """Universe-independent sparse form of one persistence result.

    ``keys`` are sorted canonical edge identities (src * base + dst over
    global node ids) and ``values`` the lifetime-times-weight of each edge, so
    vectors against any universe are a pure dimension lookup away.
    """

    keys: np.ndarray  # sorted unique int64
    values: np.ndarray  # lifetime(generator of edge) * phi(edge)
    base: int
    n_generators: int
    input_id: str = ""

    @property
    def n_edges(self) -> int:
        return int(self.keys.size)


def edge_items(result: PersistenceResult) -> EdgeItems:
    filt = result.filtration
    keys = filt.src * np.int64(filt.n_nodes) + filt.dst
    values = result.lifetimes[result.edge_gen] * filt.weight
    order = np.argsort(keys)
    return EdgeItems(keys=keys[order], values=values[order].astype(np.float64),
                     base=filt.n_nodes, n_generators=result.n_generators,
                     input_id=result.input_id)


@dataclass
class EdgeUniverse:
    """Ordered map from edge identity to dimension index.

    Keys are ``src * base + dst`` over global node ids, so ascending key order
    is ascending (layer, source index, target index).
    """

    keys: np.ndarray  # sorted unique int64
    base: int  # total node count used for key encoding

    def __len__(self) -> int:
        return int(self.keys.size)

    def __eq__(self, other) -> bool:
        return (isinstance(other, EdgeUniverse) and self.base == other.base
                and self.keys.size == other.keys.size and bool(np.all(self.keys == other.keys)))

    def dimension_of(self, src_gid: int, dst_gid: int) -> int:
        """Dimension index of an edge, or -1 when absent."""
        key = np.int64(src_gid) * self.base + dst_gid
        pos = int(np.searchsorted(self.keys, key))
        return pos if pos < len(self.keys) and self.keys[pos] == key else -1

    def edge_endpoints(self, dim: int) -> tuple[int, int]:
        key = int(self.keys[dim])
        return key // self.base, key % self.base


def build_edge_universe(results: list) -> EdgeUniverse:
    """Universe of the unique edges across persistence results (or EdgeItems)."""
    if not results:
        raise UsageError("cannot build a universe from no results")
    items = [r if isinstance(r, EdgeItems) else edge_items(r) for r in results]
    base = items[0].base
    for it in items:
        if it.base != base:
            raise ConsistencyError("all results must come from the same network node space")
    keys = np.unique(np.concatenate([it.keys for it in items]))
    return EdgeUniverse(keys=keys, base=base)


@dataclass
class LifetimeVector:
    """Sparse nonnegative vector over an EdgeUniverse (dims sorted ascending)."""

    dims: np.ndarray  # int64, sorted
    values: np.ndarray  # float64, >= 0
    universe: EdgeUniverse
    input_id: str = ""

    @cached_property
    def l1(self) -> float:
        return float(self.values.sum())


def vector_from_items(items: EdgeItems, universe: EdgeUniverse,
                      mode: str = "lifetime-weighted") -> LifetimeVector:
    if len(universe) == 0:
        raise UsageError("edge universe is empty")
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}")
    if items.base != universe.base:
        raise ConsistencyError("result node space does not match the universe")
    pos = np.searchsorted(universe.keys, items.keys)
    pos_c = np.minimum(pos, len(universe) - 1)
    found = universe.keys[pos_c] == items.keys
    dims = pos_c[found].astype(np.int64)  # ascending, since items.keys are sorted
    values = np.ones(dims.size) if mode == "binary" else items.values[found]
    return LifetimeVector(dims=dims, values=values.astype(np.float64),
                          universe=universe, input_id=items.input_id)


def vectorize(result: PersistenceResult, universe: EdgeUniverse,
              mode: str = "lifetime-weighted") -> LifetimeVector:
    """Vectorize one persistence result against a universe.

    Edges absent from the universe are dropped (test items are represented
    only over the training dimensions).
    """
    return vector_from_items(edge_items(result), universe, mode)


def items_distance(a: EdgeItems, b: EdgeItems, mode: str = "lifetime-weighted") -> float:
    """Lifetime-weighted (or Hamming) distance over the union of two edge sets.

    Equivalent to building the pairwise universe, vectorizing both results
    against it, and taking lifetime_weighted_distance.
    """
    if a.base != b.base:
        raise UsageError("edge items live in different node spaces")
    common, ia, ib = np.intersect1d(a.keys, b.keys, assume_unique=True, return_indices=True)
    if mode == "binary":
        return float(a.keys.size + b.keys.size - 2 * common.size)
    overlap = float(np.minimum(a.values[ia], b.values[ib]).sum())
    return float(a.values.sum() + b.values.sum()) - 2.0 * overlap


def _check_same_universe(a: LifetimeVector, b: LifetimeVector) -> None:
    if a.universe is not b.universe and a.universe != b.universe:
        raise UsageError("vectors live in different edge universes")


def lifetime_weighted_distance(a: LifetimeVector, b: LifetimeVector) -> float:
    """L1 distance over the union of occupied dimensions.

    For nonnegative vectors this equals |a| + |b| - 2 * sum(min(a, b)) over
    shared dimensions; with binary values it is exactly the Hamming distance.
    """
    _check_same_universe(a, b)
    _, ia, ib = np.intersect1d(a.dims, b.dims, assume_unique=True, return_indices=True)
    overlap = float(np.minimum(a.values[ia], b.values[ib]).sum())
    return a.l1 + b.l1 - 2.0 * overlap


def pairwise_distance(vectors: list[LifetimeVector]) -> np.ndarray:
    """Symmetric matrix of lifetime-weighted distances."""
    n = len(vectors)
    if n == 0:
        return np.zeros((0, 0))
    for v in vectors[1:]:
        _check_same_universe(vectors[0], v)
    out = np.zeros((n, n))
    l1 = np.array([v.l1 for v in vectors])
    dense = np.zeros(len(vectors[0].universe))
    for i in range(n):
        dense[vectors[i].dims] = vectors[i].values
        for j in range(i + 1, n):
            overlap = np.minimum(dense[vectors[j].dims], vectors[j].values).sum()
            out[i, j] = out[j, i] = l1[i] + l1[j] - 2.0 * overlap
        dense[vectors[i].dims] = 0.0
    return out


def distance_rows(queries: list[LifetimeVector], refs: list[LifetimeVector]) -> np.ndarray:
    """Rectangular distance matrix (one row per query)."""
    for v in list(queries) + list(refs[1:]):
        _check_same_universe(refs[0], v)
    out = np.zeros((len(queries), len(refs)))
    ref_l1 = np.array([v.l1 for v in refs])
    dense = np.zeros(len(refs[0].universe))
    for i, q in enumerate(queries):
        dense[q.dims] = q.values
        for j, r in enumerate(refs):
            overlap = np.minimum(dense[r.dims], r.values).sum()
            out[i, j] = q.l1 + ref_l1[j] - 2.0 * overlap
        dense[q.dims] = 0.0
    return out


def save_vector_store(path, universe: EdgeUniverse, vecs: list[LifetimeVector],
                      labels=None) -> None:
    """Persist sparse vectors plus the universe manifest (edge keys in dimension order)."""
    arrays = {
        "universe_keys": universe.keys,
        "base": np.int64(universe.base),
        "input_ids": np.array([v.input_id for v in vecs]),
    }
    if labels is not None:
        arrays["labels"] = np.asarray(labels, dtype=np.int64)
    for i, v in enumerate(vecs):
        arrays[f"dims_{i}"] = v.dims
        arrays[f"values_{i}"] = v.values
    np.savez_compressed(path, **arrays)


def load_vector_store(path) -> tuple[EdgeUniverse, list[LifetimeVector], np.ndarray | None]:
    with np.load(path) as z:
        universe = EdgeUniverse(keys=z["universe_keys"], base=int(z["base"]))
        ids = [str(s) for s in z["input_ids"]]
        vecs = [LifetimeVector(dims=z[f"dims_{i}"], values=z[f"values_{i}"],
                               universe=universe, input_id=ids[i])
                for i in range(len(ids))]
        labels = z["labels"] if "labels" in z.files else None
    return universe, vecs, labels


def auto_gamma(distances: np.ndarray) -> float:
    """1 / median of off-diagonal distances; falls back to 1.0 when degenerate."""
    n = distances.shape[0]
    if n < 2:
        return 1.0
    off = distances[~np.eye(n, dtype=bool)]
    med = float(np.median(off))
    if med <= 0:
        warnings.warn("all pairwise distances are zero; falling back to gamma = 1.0")
        return 1.0
    return 1.0 / med


def kernel_matrix(vectors: list[LifetimeVector], gamma="auto",
                  clip_negative: bool = False) -> np.ndarray:
    """K_ij = exp(-gamma * d(v_i, v_j)); symmetric with unit diagonal.

    ``gamma="auto"`` uses the inverse median off-diagonal distance. Optional
    spectral clipping zeroes negative eigenvalues (off by default; it may
    perturb the unit diagonal).
    """
    if not vectors:
        raise UsageError("kernel_matrix needs at least one vector")
    d = pairwise_distance(vectors)
    g = auto_gamma(d) if gamma == "auto" else float(gamma)
    k = np.exp(-g * d)
    if clip_negative:
        vals, vecs = np.linalg.eigh((k + k.T) / 2.0)
        k = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return k
