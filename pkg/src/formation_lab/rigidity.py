"""Graphs, frameworks, edge maps and the infinitesimal-rigidity rank test.

A framework is an undirected graph together with an embedding of its
vertices as points in R^n.  The edge map sends a configuration to the
vector of squared inter-agent distances, one component per edge, and its
Jacobian (the rigidity matrix) decides infinitesimal rigidity: the
framework is infinitesimally rigid when the Jacobian rank equals
n*N - n*(n+1)/2, i.e. the only infinitesimal motions preserving all edge
lengths are rigid-body motions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Edge = tuple[int, int]


class DimensionMismatchError(ValueError):
    """Configuration shape is inconsistent with the graph / ambient dimension."""


class UnsupportedFrameworkError(ValueError):
    """Raised for frameworks with fewer vertices than ambient dimensions.

    The rank criterion used here is only defined for N >= n; smaller
    frameworks are rejected instead of silently misclassified.
    """


def canonical_edges(edges) -> tuple[Edge, ...]:
    """Normalize an edge iterable to sorted (i, j) pairs with i < j.

    Rejects self-loops and duplicates.  The resulting lexicographic order
    is the canonical order every edge-indexed vector in this package uses.
    """
    seen = set()
    out = []
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise ValueError(f"self-loop edge ({i}, {j}) is not allowed")
        if i > j:
            i, j = j, i
        if (i, j) in seen:
            raise ValueError(f"duplicate edge ({i}, {j})")
        seen.add((i, j))
        out.append((i, j))
    return tuple(sorted(out))


@dataclass(frozen=True)
class UndirectedGraph:
    """Undirected graph on vertices 0..N-1 with a canonical edge order.

    The derived index/incidence arrays are what the numerical kernels use;
    they are aligned with the canonical edge order.
    """

    vertex_count: int
    edges: tuple[Edge, ...]
    edge_tails: np.ndarray = field(init=False, repr=False, compare=False)
    edge_heads: np.ndarray = field(init=False, repr=False, compare=False)
    incidence_transpose: np.ndarray = field(init=False, repr=False, compare=False)
    adjacency_transpose: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.vertex_count < 1:
            raise ValueError("vertex_count must be a positive integer")
        normalized = canonical_edges(self.edges)
        if len(normalized) == 0:
            raise ValueError("graph must have at least one edge")
        for i, j in normalized:
            if not (0 <= i < self.vertex_count and 0 <= j < self.vertex_count):
                raise ValueError(f"edge ({i}, {j}) has a vertex outside 0..{self.vertex_count - 1}")
        object.__setattr__(self, "edges", normalized)
        tails = np.array([e[0] for e in normalized], dtype=int)
        heads = np.array([e[1] for e in normalized], dtype=int)
        m = len(normalized)
        inc_t = np.zeros((self.vertex_count, m))
        inc_t[tails, np.arange(m)] = 1.0
        inc_t[heads, np.arange(m)] = -1.0
        adj_t = np.abs(inc_t)
        for arr in (tails, heads, inc_t, adj_t):
            arr.setflags(write=False)
        object.__setattr__(self, "edge_tails", tails)
        object.__setattr__(self, "edge_heads", heads)
        object.__setattr__(self, "incidence_transpose", inc_t)
        object.__setattr__(self, "adjacency_transpose", adj_t)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def edge_index(self, i: int, j: int) -> int:
        """Position of edge {i, j} in the canonical order."""
        key = (i, j) if i < j else (j, i)
        return self.edges.index(key)

    def incident_edges(self, i: int) -> tuple[int, ...]:
        return tuple(m for m, (a, b) in enumerate(self.edges) if a == i or b == i)

    @classmethod
    def complete(cls, vertex_count: int) -> "UndirectedGraph":
        edges = [(i, j) for i in range(vertex_count) for j in range(i + 1, vertex_count)]
        return cls(vertex_count, tuple(edges))


@dataclass(frozen=True)
class FormationSpec:
    """Target shape: a graph plus one positive desired distance per edge.

    ``desired_distances`` may be keyed by (i, j) in either vertex order;
    the derived arrays are aligned with the graph's canonical edge order.
    """

    graph: UndirectedGraph
    ambient_dim: int
    desired_distances: dict[Edge, float]
    distance_vector: np.ndarray = field(init=False, repr=False, compare=False)
    squared_distance_vector: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be a positive integer")
        normalized = {}
        for (i, j), d in self.desired_distances.items():
            key = (i, j) if i < j else (j, i)
            if key in normalized:
                raise ValueError(f"distance for edge {key} given twice")
            normalized[key] = float(d)
        missing = set(self.graph.edges) - set(normalized)
        extra = set(normalized) - set(self.graph.edges)
        if missing:
            raise ValueError(f"missing desired distance for edges {sorted(missing)}")
        if extra:
            raise ValueError(f"desired distance given for non-edges {sorted(extra)}")
        vec = np.array([normalized[e] for e in self.graph.edges], dtype=float)
        if np.any(vec <= 0.0) or not np.all(np.isfinite(vec)):
            raise ValueError("all desired distances must be positive finite reals")
        vec.setflags(write=False)
        sq = vec * vec
        sq.setflags(write=False)
        object.__setattr__(self, "desired_distances", normalized)
        object.__setattr__(self, "distance_vector", vec)
        object.__setattr__(self, "squared_distance_vector", sq)

    @property
    def vertex_count(self) -> int:
        return self.graph.vertex_count

    @property
    def dof(self) -> int:
        """Stacked configuration dimension n*N."""
        return self.ambient_dim * self.graph.vertex_count


def as_point_matrix(p, vertex_count: int, ambient_dim: int) -> np.ndarray:
    """Validate a configuration and return it as an (N, n) float array.

    Accepts either the stacked (n*N,) vector or the (N, n) matrix form.
    """
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 1:
        if arr.size != vertex_count * ambient_dim:
            raise DimensionMismatchError(
                f"expected {vertex_count * ambient_dim} stacked coordinates, got {arr.size}"
            )
        return arr.reshape(vertex_count, ambient_dim)
    if arr.ndim == 2:
        if arr.shape != (vertex_count, ambient_dim):
            raise DimensionMismatchError(
                f"expected point matrix of shape {(vertex_count, ambient_dim)}, got {arr.shape}"
            )
        return arr
    raise DimensionMismatchError(f"configuration must be 1-D or 2-D, got ndim={arr.ndim}")


def edge_map(graph: UndirectedGraph, p, ambient_dim: int | None = None) -> np.ndarray:
    """Squared inter-agent distance per edge, in canonical edge order.

    ``p`` is an (N, n) point matrix, or a stacked (n*N,) vector if
    ``ambient_dim`` is given.
    """
    if ambient_dim is None:
        arr = np.asarray(p, dtype=float)
        if arr.ndim != 2:
            raise DimensionMismatchError("stacked configuration needs ambient_dim")
        ambient_dim = arr.shape[1]
    pts = as_point_matrix(p, graph.vertex_count, ambient_dim)
    ei = np.fromiter((e[0] for e in graph.edges), dtype=int)
    ej = np.fromiter((e[1] for e in graph.edges), dtype=int)
    diff = pts[ej] - pts[ei]
    return np.einsum("md,md->m", diff, diff)


def rigidity_matrix(graph: UndirectedGraph, p, ambient_dim: int | None = None) -> np.ndarray:
    """Jacobian of the edge map: one row per edge, one column per coordinate.

    The row of edge {i, j} carries 2*(p_i - p_j) in the i-block and
    2*(p_j - p_i) in the j-block.
    """
    if ambient_dim is None:
        arr = np.asarray(p, dtype=float)
        if arr.ndim != 2:
            raise DimensionMismatchError("stacked configuration needs ambient_dim")
        ambient_dim = arr.shape[1]
    pts = as_point_matrix(p, graph.vertex_count, ambient_dim)
    n = ambient_dim
    mat = np.zeros((graph.edge_count, graph.vertex_count * n))
    for m, (i, j) in enumerate(graph.edges):
        diff = 2.0 * (pts[i] - pts[j])
        mat[m, i * n : (i + 1) * n] = diff
        mat[m, j * n : (j + 1) * n] = -diff
    return mat


@dataclass(frozen=True)
class RigidityVerdict:
    rigid: bool
    rank: int
    required_rank: int
    singular_values: tuple[float, ...]


def is_infinitesimally_rigid(
    graph: UndirectedGraph,
    p,
    ambient_dim: int | None = None,
    rank_tolerance: float = 1e-9,
) -> RigidityVerdict:
    """Rank test for infinitesimal rigidity of the framework at p.

    A singular value sigma counts toward the rank when
    sigma > rank_tolerance * sigma_max.  Requires N >= n.
    """
    if ambient_dim is None:
        arr = np.asarray(p, dtype=float)
        if arr.ndim != 2:
            raise DimensionMismatchError("stacked configuration needs ambient_dim")
        ambient_dim = arr.shape[1]
    n, big_n = ambient_dim, graph.vertex_count
    if big_n < n:
        raise UnsupportedFrameworkError(
            f"rigidity test needs at least as many vertices as dimensions (N={big_n} < n={n})"
        )
    mat = rigidity_matrix(graph, p, ambient_dim)
    sigma = np.linalg.svd(mat, compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(sigma > rank_tolerance * sigma[0]))
    required = n * big_n - n * (n + 1) // 2
    return RigidityVerdict(
        rigid=(rank == required),
        rank=rank,
        required_rank=required,
        singular_values=tuple(float(s) for s in sigma),
    )


def is_target_formation(spec: FormationSpec, p, tol: float = 1e-9) -> bool:
    """True when every squared edge length matches the target within tol (sup norm)."""
    fg = edge_map(spec.graph, p, spec.ambient_dim)
    return bool(np.max(np.abs(fg - spec.squared_distance_vector)) <= tol)
