"""Input-induced activation graphs.

A forward pass induces a weighted multipartite graph over the network's node
sets: an edge (u, v) carries the signed contribution w_uv * h_u of source
node u to the pre-activation of target node v, and the filtration weight is
its absolute value. Convolutions are unrolled into their sparse
matrix-multiplication form; max pooling passes a single edge from the argmax
source. Zero-weight edges are dropped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, UsageError, ValidationError
from .nn import (
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    NetworkSpec,
    NetworkWeights,
    ActivationRecord,
    conv_source_indices,
    layer_shapes,
    pool_source_indices,
    validate_weights,
)

POOL_EDGE_MODES = ("argmax", "window")


@dataclass(frozen=True)
class NodeId:
    layer: int  # node-set index; 0 = input nodes
    index: int  # linear index within the node set (channel-major, row-major)


@dataclass(frozen=True)
class InducedEdge:
    source: NodeId
    target: NodeId
    contribution: float  # signed w * h

    @property
    def phi(self) -> float:
        return abs(self.contribution)


def node_sets(spec: NetworkSpec) -> tuple[list[int], list[tuple[int, int] | None]]:
    """Node-set sizes plus, per spec layer, the (source, target) node-set pair.

    Flatten layers reindex without creating nodes, so they map to None.
    """
    shapes = layer_shapes(spec)
    sizes = [int(np.prod(shapes[0]))]
    mapping: list[tuple[int, int] | None] = []
    cur = 0
    for li, layer in enumerate(spec.layers):
        if isinstance(layer, Flatten):
            mapping.append(None)
        else:
            sizes.append(int(np.prod(shapes[li + 1])))
            mapping.append((cur, cur + 1))
            cur += 1
    return sizes, mapping


@dataclass
class InducedGraph:
    """Columnar edge storage: src/dst hold global node ids, layer-offset encoded."""

    nodes_per_layer: tuple[int, ...]
    src: np.ndarray  # int64
    dst: np.ndarray  # int64
    contribution: np.ndarray  # float64, signed
    input_id: str = ""

    @property
    def n_nodes(self) -> int:
        return int(sum(self.nodes_per_layer))

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def phi(self) -> np.ndarray:
        return np.abs(self.contribution)

    @property
    def layer_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.nodes_per_layer)])

    def node_of(self, gid: int) -> NodeId:
        offs = self.layer_offsets
        layer = int(np.searchsorted(offs, gid, side="right") - 1)
        return NodeId(layer, int(gid - offs[layer]))

    def gid_of(self, node: NodeId) -> int:
        return int(self.layer_offsets[node.layer] + node.index)

    def edge(self, i: int) -> InducedEdge:
        return InducedEdge(self.node_of(int(self.src[i])), self.node_of(int(self.dst[i])),
                           float(self.contribution[i]))

    def edge_keys(self) -> np.ndarray:
        """Canonical int64 identity per edge: src * n_nodes + dst."""
        return self.src * np.int64(self.n_nodes) + self.dst

    def save(self, path) -> None:
        np.savez_compressed(path, nodes_per_layer=np.asarray(self.nodes_per_layer, dtype=np.int64),
                            src=self.src, dst=self.dst, contribution=self.contribution,
                            input_id=np.array(self.input_id))

    @staticmethod
    def load(path) -> "InducedGraph":
        with np.load(path) as z:
            return InducedGraph(
                nodes_per_layer=tuple(int(x) for x in z["nodes_per_layer"]),
                src=z["src"].astype(np.int64),
                dst=z["dst"].astype(np.int64),
                contribution=z["contribution"].astype(np.float64),
                input_id=str(z["input_id"]),
            )


def build_induced_graph(spec: NetworkSpec, weights: NetworkWeights, record: ActivationRecord,
                        input_id: str = "", phi_threshold: float = 0.0,
                        pool_edges: str = "argmax") -> InducedGraph:
    """Construct the induced graph from a recorded forward pass.

    ``phi_threshold`` keeps only edges with |contribution| strictly above it
    (the default 0.0 drops exactly the structural zeros). ``pool_edges``
    selects whether max-pool layers emit one edge from the argmax source or
    one per window node.
    """
    if phi_threshold < 0:
        raise UsageError("phi_threshold must be >= 0")
    if pool_edges not in POOL_EDGE_MODES:
        raise UsageError(f"pool_edges must be one of {POOL_EDGE_MODES}")
    validate_weights(spec, weights)
    shapes = layer_shapes(spec)
    if len(record.pre) != len(spec.layers):
        raise ConsistencyError("activation record does not match the network depth")
    for li, pre in enumerate(record.pre):
        if pre.shape != shapes[li + 1]:
            raise ConsistencyError(
                f"layer {li} activation shape {pre.shape} does not match spec shape {shapes[li + 1]}"
            )

    sizes, mapping = node_sets(spec)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    src_parts: list[np.ndarray] = []
    dst_parts: list[np.ndarray] = []
    con_parts: list[np.ndarray] = []

    def emit(set_src: int, set_dst: int, s_local: np.ndarray, d_local: np.ndarray, con: np.ndarray):
        keep = np.abs(con) > phi_threshold
        if not np.any(keep):
            return
        src_parts.append(offsets[set_src] + s_local[keep].astype(np.int64))
        dst_parts.append(offsets[set_dst] + d_local[keep].astype(np.int64))
        con_parts.append(con[keep].astype(np.float64))

    for li, layer in enumerate(spec.layers):
        if isinstance(layer, Flatten):
            continue
        set_src, set_dst = mapping[li]
        h = (record.post[li - 1] if li > 0 else record.input).reshape(-1)
        if isinstance(layer, Dense):
            w, _ = weights.params[li]
            con = w * h[None, :]
            d_local, s_local = np.nonzero(np.abs(con) > phi_threshold)
            emit(set_src, set_dst, s_local, d_local, con[d_local, s_local])
        elif isinstance(layer, Conv2d):
            w, _ = weights.params[li]
            in_shape = shapes[li] if li > 0 else spec.input_shape
            idx, (oh, ow) = conv_source_indices(in_shape, layer.kernel_h, layer.kernel_w,
                                                layer.stride, layer.padding)
            vals = np.where(idx >= 0, h[np.maximum(idx, 0)], 0.0)
            n_pos = idx.shape[0]
            wmat = w.reshape(layer.out_channels, -1)
            for co in range(layer.out_channels):
                con = vals * wmat[co][None, :]
                p_idx, k_idx = np.nonzero(np.abs(con) > phi_threshold)
                emit(set_src, set_dst, idx[p_idx, k_idx], co * n_pos + p_idx, con[p_idx, k_idx])
        elif isinstance(layer, MaxPool2d):
            n_out = record.pre[li].size
            if pool_edges == "argmax":
                s_local = record.pool_argmax[li]
                emit(set_src, set_dst, s_local, np.arange(n_out), h[s_local])
            else:
                in_shape = shapes[li]
                idx, _ = pool_source_indices(in_shape, layer.kernel, layer.stride)
                d_local = np.repeat(np.arange(n_out), idx.shape[1])
                emit(set_src, set_dst, idx.reshape(-1), d_local, h[idx.reshape(-1)])

    if src_parts:
        src = np.concatenate(src_parts)
        dst = np.concatenate(dst_parts)
        con = np.concatenate(con_parts)
    else:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)
        con = np.empty(0, dtype=np.float64)
    return InducedGraph(nodes_per_layer=tuple(sizes), src=src, dst=dst, contribution=con,
                        input_id=input_id)


def verify_forward_equivalence(graph: InducedGraph, spec: NetworkSpec, weights: NetworkWeights,
                               record: ActivationRecord, tol: float = 1e-9) -> dict[int, float]:
    """Check that per-node incoming contributions plus bias reproduce the pre-activations.

    Covers Dense and Conv2d targets (max-pool pass-through holds by
    construction). Returns the max absolute deviation per checked node set and
    raises ValidationError naming the worst node if any deviation exceeds
    ``tol``.
    """
    sizes, mapping = node_sets(spec)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    incoming = np.zeros(int(offsets[-1]))
    np.add.at(incoming, graph.dst, graph.contribution)

    report: dict[int, float] = {}
    for li, layer in enumerate(spec.layers):
        if not isinstance(layer, (Dense, Conv2d)):
            continue
        set_dst = mapping[li][1]
        lo, hi = offsets[set_dst], offsets[set_dst + 1]
        _, b = weights.params[li]
        if isinstance(layer, Dense):
            bias = b
        else:
            per_channel = (hi - lo) // layer.out_channels
            bias = np.repeat(b, per_channel)
        expected = record.pre[li].reshape(-1)
        dev = np.abs(incoming[lo:hi] + bias - expected)
        worst = float(dev.max()) if dev.size else 0.0
        report[set_dst] = worst
        if worst > tol:
            node = int(np.argmax(dev))
            raise ValidationError(
                f"edge-sum deviates by {worst:.3e} (> {tol:.1e}) at node set {set_dst}, node {node}"
            )
    return report
