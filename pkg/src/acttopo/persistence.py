"""Zero-dimensional persistent homology over descending edge-weight filtrations.

Edges enter in decreasing weight order; a union-find sweep tracks connected
components under the elder rule (the earlier-born component survives a merge)
and assigns every edge to exactly one generator, so generator subgraphs can
be reconstructed after the fact. Components alive at the end of the sweep are
infinite pairs and are assigned death weight 0, the infimum of possible edge
weights.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import UsageError
from .graphs import InducedGraph


def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


def _sweep(src, dst, n_nodes):
    """Union-find sweep over edges already in filtration order.

    Per-edge cases: both endpoints new -> a component is born and the edge and
    both vertices join the new generator; one endpoint new -> the edge and new
    vertex join the existing component's generator; same component -> cycle
    edge, assigned to that generator; two components -> elder rule, the
    younger dies here and the merge edge goes to the survivor.
    """
    n_edges = src.shape[0]
    parent = np.full(n_nodes, -1, np.int64)
    root_gen = np.full(n_nodes, -1, np.int64)
    vertex_gen = np.full(n_nodes, -1, np.int64)
    edge_gen = np.empty(n_edges, np.int64)
    gen_birth = np.empty(n_edges, np.int64)
    gen_death = np.full(n_edges, -1, np.int64)
    live = np.empty(n_edges, np.int64)
    n_gens = 0
    n_live = 0
    for i in range(n_edges):
        u = src[i]
        v = dst[i]
        u_new = parent[u] == -1
        v_new = parent[v] == -1
        if u_new and v_new:
            g = n_gens
            n_gens += 1
            gen_birth[g] = i
            parent[u] = u
            parent[v] = u
            root_gen[u] = g
            vertex_gen[u] = g
            vertex_gen[v] = g
            edge_gen[i] = g
            n_live += 1
        elif u_new or v_new:
            if u_new:
                r = _find(parent, v)
                parent[u] = r
                vertex_gen[u] = root_gen[r]
            else:
                r = _find(parent, u)
                parent[v] = r
                vertex_gen[v] = root_gen[r]
            edge_gen[i] = root_gen[r]
        else:
            ru = _find(parent, u)
            rv = _find(parent, v)
            if ru == rv:
                edge_gen[i] = root_gen[ru]
            else:
                ga = root_gen[ru]
                gb = root_gen[rv]
                # elder rule; birth indices are distinct, gen-id tie-break kept for safety
                if gen_birth[ga] < gen_birth[gb] or (gen_birth[ga] == gen_birth[gb] and ga < gb):
                    surv, r_surv, dead, r_dead = ga, ru, gb, rv
                else:
                    surv, r_surv, dead, r_dead = gb, rv, ga, ru
                gen_death[dead] = i
                parent[r_dead] = r_surv
                edge_gen[i] = surv
                n_live -= 1
        live[i] = n_live
    return edge_gen, vertex_gen, gen_birth[:n_gens].copy(), gen_death[:n_gens].copy(), live, n_gens


try:  # optional JIT; semantics are identical either way
    import numba

    _find = numba.njit(cache=True)(_find)
    _sweep = numba.njit(cache=True)(_sweep)
except ImportError:  # pragma: no cover - numba is a declared dependency
    pass


@dataclass
class Filtration:
    """Edges sorted by (weight desc, source, target); index 0 is the heaviest edge."""

    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    orig_index: np.ndarray  # position of each filtration entry in the source edge list
    n_nodes: int
    input_id: str = ""

    def __len__(self) -> int:
        return int(self.src.size)

    @classmethod
    def from_edges(cls, src, dst, weight, n_nodes: int | None = None,
                   input_id: str = "") -> "Filtration":
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        weight = np.asarray(weight, dtype=np.float64)
        if src.size == 0:
            raise UsageError("cannot build a filtration from an empty edge list")
        if not (src.size == dst.size == weight.size):
            raise UsageError("src, dst and weight must have equal lengths")
        if not np.all(np.isfinite(weight)) or np.any(weight < 0):
            raise UsageError("filtration weights must be finite and nonnegative")
        if n_nodes is None:
            n_nodes = int(max(src.max(), dst.max())) + 1
        order = np.lexsort((dst, src, -weight))
        return cls(src=src[order], dst=dst[order], weight=weight[order],
                   orig_index=order.astype(np.int64), n_nodes=int(n_nodes), input_id=input_id)


def build_filtration(graph: InducedGraph) -> Filtration:
    """Descending-weight filtration of an induced graph.

    Ties break by (source layer, source index, target index) ascending, which
    is exactly ascending (global source id, global target id).
    """
    return Filtration.from_edges(graph.src, graph.dst, graph.phi,
                                 n_nodes=graph.n_nodes, input_id=graph.input_id)


@dataclass
class PersistencePair:
    generator_id: int
    birth_index: int
    death_index: int | float  # math.inf for infinite pairs
    birth_weight: float
    death_weight: float  # 0.0 for infinite pairs

    @property
    def lifetime(self) -> float:
        return self.birth_weight - self.death_weight

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.death_index)


@dataclass
class GeneratorSubgraph:
    generator_id: int
    vertices: frozenset[int]  # global node ids
    edges: frozenset[int]  # indices into the parent graph's edge list
    pair: PersistencePair


@dataclass
class PersistenceResult:
    """Pairs plus per-edge/per-vertex generator assignment for one filtration."""

    filtration: Filtration
    birth_index: np.ndarray  # per generator
    death_index: np.ndarray  # per generator, -1 encodes infinity
    edge_gen: np.ndarray  # per filtration position
    vertex_gen: np.ndarray  # per node, -1 for nodes absent from the graph
    live_components: np.ndarray  # live component count after each insertion

    @property
    def input_id(self) -> str:
        return self.filtration.input_id

    @property
    def n_generators(self) -> int:
        return int(self.birth_index.size)

    @property
    def n_infinite(self) -> int:
        return int(np.sum(self.death_index < 0))

    @cached_property
    def birth_weight(self) -> np.ndarray:
        return self.filtration.weight[self.birth_index]

    @cached_property
    def death_weight(self) -> np.ndarray:
        w = np.zeros(self.n_generators)
        finite = self.death_index >= 0
        w[finite] = self.filtration.weight[self.death_index[finite]]
        return w

    @cached_property
    def lifetimes(self) -> np.ndarray:
        """Weight-scale lifetimes, birth - death; infinite pairs use death 0."""
        return self.birth_weight - self.death_weight

    @property
    def index_lifetimes(self) -> np.ndarray:
        """Index-scale lifetimes (death index - birth index), inf for infinite pairs."""
        out = np.full(self.n_generators, np.inf)
        finite = self.death_index >= 0
        out[finite] = (self.death_index[finite] - self.birth_index[finite]).astype(np.float64)
        return out

    @property
    def pairs(self) -> list[PersistencePair]:
        bw, dw = self.birth_weight, self.death_weight
        return [
            PersistencePair(
                generator_id=g,
                birth_index=int(self.birth_index[g]),
                death_index=math.inf if self.death_index[g] < 0 else int(self.death_index[g]),
                birth_weight=float(bw[g]),
                death_weight=float(dw[g]),
            )
            for g in range(self.n_generators)
        ]

    @property
    def generators(self) -> list[GeneratorSubgraph]:
        """Generator subgraphs; every graph edge belongs to exactly one of them.

        A generator's vertex set is the vertices assigned at its birth or
        attachment events together with the endpoints of its assigned edges.
        """
        pairs = self.pairs
        vertices: list[set[int]] = [set() for _ in range(self.n_generators)]
        for node in np.nonzero(self.vertex_gen >= 0)[0]:
            vertices[self.vertex_gen[node]].add(int(node))
        edges: list[list[int]] = [[] for _ in range(self.n_generators)]
        for pos in range(len(self.filtration)):
            g = int(self.edge_gen[pos])
            edges[g].append(int(self.filtration.orig_index[pos]))
            vertices[g].add(int(self.filtration.src[pos]))
            vertices[g].add(int(self.filtration.dst[pos]))
        return [
            GeneratorSubgraph(generator_id=g, vertices=frozenset(vertices[g]),
                              edges=frozenset(edges[g]), pair=pairs[g])
            for g in range(self.n_generators)
        ]

    def diagram(self, top_k: int | None = None) -> np.ndarray:
        """(n, 2) array of (birth_weight, death_weight) points, optionally the
        top_k most persistent."""
        pts = np.column_stack([self.birth_weight, self.death_weight])
        if top_k is not None and top_k < len(pts):
            order = np.argsort(-self.lifetimes, kind="stable")[:top_k]
            pts = pts[order]
        return pts

    def edge_gen_by_orig(self) -> np.ndarray:
        """Generator assignment indexed by the parent graph's edge order."""
        out = np.empty(len(self.filtration), dtype=np.int64)
        out[self.filtration.orig_index] = self.edge_gen
        return out

    def save(self, path) -> None:
        np.savez_compressed(
            path,
            src=self.filtration.src, dst=self.filtration.dst,
            weight=self.filtration.weight, orig_index=self.filtration.orig_index,
            n_nodes=np.int64(self.filtration.n_nodes),
            input_id=np.array(self.filtration.input_id),
            birth_index=self.birth_index, death_index=self.death_index,
            edge_gen=self.edge_gen, vertex_gen=self.vertex_gen,
            live_components=self.live_components,
        )

    @staticmethod
    def load(path) -> "PersistenceResult":
        with np.load(path) as z:
            filt = Filtration(src=z["src"], dst=z["dst"], weight=z["weight"],
                              orig_index=z["orig_index"], n_nodes=int(z["n_nodes"]),
                              input_id=str(z["input_id"]))
            return PersistenceResult(
                filtration=filt,
                birth_index=z["birth_index"], death_index=z["death_index"],
                edge_gen=z["edge_gen"], vertex_gen=z["vertex_gen"],
                live_components=z["live_components"],
            )


def compute_persistence(filtration: Filtration) -> PersistenceResult:
    """Sweep the filtration, producing pairs and the full generator assignment."""
    edge_gen, vertex_gen, birth, death, live, _ = _sweep(
        np.ascontiguousarray(filtration.src), np.ascontiguousarray(filtration.dst),
        filtration.n_nodes)
    return PersistenceResult(filtration=filtration, birth_index=birth, death_index=death,
                             edge_gen=edge_gen, vertex_gen=vertex_gen, live_components=live)


def persistence_of_graph(graph: InducedGraph) -> PersistenceResult:
    return compute_persistence(build_filtration(graph))


def betti0_at(filtration: Filtration, omega: float) -> int:
    """Number of connected components of the subgraph with weight >= omega.

    Computed by a fresh breadth-first flood fill, independent of the
    union-find sweep; intended as an oracle and debugging aid.
    """
    if omega < 0:
        raise UsageError("threshold must be >= 0")
    count = int(np.searchsorted(-filtration.weight, -omega, side="right"))
    return flood_fill_components(filtration.src[:count], filtration.dst[:count])


def flood_fill_components(src: np.ndarray, dst: np.ndarray) -> int:
    """Connected components of an edge list via BFS over an adjacency map."""
    adj: dict[int, list[int]] = {}
    for u, v in zip(src.tolist(), dst.tolist()):
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    seen: set[int] = set()
    components = 0
    for start in adj:
        if start in seen:
            continue
        components += 1
        queue = deque([start])
        seen.add(start)
        while queue:
            node = queue.popleft()
            for nbr in adj[node]:
                if nbr not in seen:
                    seen.add(nbr)
                    queue.append(nbr)
    return components
