"""Skeleton graphs and the graph priors injected into attention.

Hop encoding looks up a learnable per-head bias by hop distance. Path
encoding averages position-weighted embeddings of the bone lengths met on a
shortest path between two joints. The symmetric-normalized adjacency feeds
the static GCN branch.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from gator.errors import ConfigError, GraphError
from gator.numerics import ModelParams, Tensor, xavier_uniform
from gator.numerics import tensor as T

PATH_WEIGHT_MODES = ("shared", "per_pair")


@dataclass(frozen=True)
class SkeletonGraph:
    names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    bone_lengths: tuple[float, ...]
    # Tree metadata for building a body; optional for plain graphs.
    parents: tuple[int, ...] | None = None
    directions: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self):
        n = len(self.names)
        if n == 0:
            raise GraphError("skeleton has no joints")
        if len(self.bone_lengths) != len(self.edges):
            raise GraphError("one bone length per edge required")
        seen = set()
        for (a, b), length in zip(self.edges, self.bone_lengths):
            if not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a}, {b}) references a missing joint")
            if a == b:
                raise GraphError(f"self-loop at joint {a}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
            if not length > 0:
                raise GraphError(f"bone {key} has non-positive length {length}")
        # connectivity is checked lazily by hop_distance_matrix, but a
        # skeleton must be connected to be usable at all
        _bfs_all(self)

    @property
    def num_joints(self) -> int:
        return len(self.names)

    @property
    def max_degree(self) -> int:
        return int(self.adjacency().sum(axis=1).max())

    def adjacency(self) -> np.ndarray:
        n = self.num_joints
        a = np.zeros((n, n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_joints)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(x) for x in nbrs]

    def edge_length(self, i: int, j: int) -> float:
        return self._length_map()[(min(i, j), max(i, j))]

    def _length_map(self) -> dict[tuple[int, int], float]:
        return {(min(a, b), max(a, b)): float(l) for (a, b), l in zip(self.edges, self.bone_lengths)}

    def permuted(self, perm) -> "SkeletonGraph":
        """Relabel joints so that old joint ``i`` becomes joint ``perm[i]``."""
        perm = [int(p) for p in perm]
        n = self.num_joints
        if sorted(perm) != list(range(n)):
            raise ValueError("perm must be a permutation of range(N)")
        inv = np.argsort(perm)
        names = tuple(self.names[inv[k]] for k in range(n))
        edges = tuple((perm[a], perm[b]) for a, b in self.edges)
        parents = None
        if self.parents is not None:
            parents = tuple(-1 if self.parents[inv[k]] < 0 else perm[self.parents[inv[k]]]
                            for k in range(n))
        directions = None
        if self.directions is not None:
            directions = tuple(self.directions[inv[k]] for k in range(n))
        return SkeletonGraph(names, edges, self.bone_lengths, parents, directions)

    @classmethod
    def from_parents(cls, names, parents, lengths, directions=None) -> "SkeletonGraph":
        """Build a tree skeleton. ``lengths[j]`` is the bone from parent to ``j``."""
        edges, bone_lengths = [], []
        roots = [j for j, p in enumerate(parents) if p < 0]
        if len(roots) != 1:
            raise GraphError(f"expected exactly one root joint, found {len(roots)}")
        for j, p in enumerate(parents):
            if p >= 0:
                edges.append((p, j))
                bone_lengths.append(float(lengths[j]))
        dirs = None
        if directions is not None:
            dirs = tuple(tuple(float(c) for c in d) for d in directions)
        return cls(tuple(names), tuple(edges), tuple(bone_lengths), tuple(int(p) for p in parents), dirs)


def parse_skeleton_text(text: str) -> SkeletonGraph:
    """Parse a skeleton description, one joint per line.

    Format: ``name parent length [dx dy dz]`` where ``parent`` is ``-`` for the
    root (its length is ignored) and the optional direction gives the bone's
    rest orientation. Blank lines and ``#`` comments are skipped.
    """
    names, parent_names, lengths, dirs = [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 6):
            raise ConfigError(f"skeleton line {lineno}: expected 3 or 6 fields, got {len(parts)}")
        name, parent = parts[0], parts[1]
        if name in names:
            raise ConfigError(f"skeleton line {lineno}: duplicate joint {name!r}")
        try:
            length = float(parts[2])
            direction = tuple(float(x) for x in parts[3:6]) if len(parts) == 6 else None
        except ValueError:
            raise ConfigError(f"skeleton line {lineno}: non-numeric field") from None
        names.append(name)
        parent_names.append(None if parent == "-" else parent)
        lengths.append(length)
        dirs.append(direction)
    if not names:
        raise ConfigError("empty skeleton description")
    index = {n: i for i, n in enumerate(names)}
    parents = []
    for name, pname in zip(names, parent_names):
        if pname is None:
            parents.append(-1)
        elif pname not in index:
            raise ConfigError(f"joint {name!r} has unknown parent {pname!r}")
        else:
            parents.append(index[pname])
    _check_tree(parents, names)
    directions = None
    if all(d is not None for i, d in enumerate(dirs) if parents[i] >= 0):
        directions = [d if d is not None else (0.0, 0.0, 0.0) for d in dirs]
    return SkeletonGraph.from_parents(names, parents, lengths, directions)


def _check_tree(parents, names):
    for start in range(len(parents)):
        seen, j = set(), start
        while j >= 0:
            if j in seen:
                raise ConfigError(f"parent links of {names[start]!r} form a cycle")
            seen.add(j)
            j = parents[j]


def _bfs(nbrs: list[list[int]], source: int) -> np.ndarray:
    dist = np.full(len(nbrs), -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _bfs_all(graph: SkeletonGraph) -> np.ndarray:
    nbrs = graph.neighbors()
    n = graph.num_joints
    d = np.stack([_bfs(nbrs, s) for s in range(n)])
    bad = np.argwhere(d < 0)
    if bad.size:
        i, j = bad[0]
        raise GraphError(f"graph is disconnected: no path between joints {i} and {j}")
    return d


# ---------------------------------------------------------------- hop matrix

@dataclass(frozen=True)
class HopMatrix:
    D: np.ndarray

    @property
    def max_hop(self) -> int:
        return int(self.D.max())


def hop_distance_matrix(graph: SkeletonGraph) -> HopMatrix:
    d = _bfs_all(graph)
    d.setflags(write=False)
    return HopMatrix(d)


def hop_encoding(hop: HopMatrix, table: Tensor) -> Tensor:
    """HE[i, j] = table[D[i, j]], shape N x N x H."""
    n = hop.D.shape[0]
    if hop.max_hop >= table.shape[0]:
        raise IndexError(f"hop {hop.max_hop} exceeds hop table with {table.shape[0]} rows")
    flat = T.gather(table, hop.D.reshape(-1), axis=0)
    return T.reshape(flat, (n, n, table.shape[1]))


# ---------------------------------------------------------------- path table

@dataclass(frozen=True)
class PathTable:
    joints: tuple[tuple[tuple[int, ...], ...], ...]   # joints[i][j]: i ... j
    lengths: tuple[tuple[tuple[float, ...], ...], ...]  # bone lengths along the path
    max_hop: int
    edge_lengths: np.ndarray = field(repr=False)  # N x N x max_hop, zero padded
    position_weights: np.ndarray = field(repr=False)  # N x N x max_hop, 1/D_ij on valid slots


def shortest_path_table(graph: SkeletonGraph) -> PathTable:
    d = hop_distance_matrix(graph).D
    nbrs = graph.neighbors()
    lengths_of = graph._length_map()
    n = graph.num_joints
    max_hop = int(d.max())
    joints, lengths = [], []
    k = max(max_hop, 1)
    edge_lengths = np.zeros((n, n, k))
    pos_w = np.zeros((n, n, k))
    for i in range(n):
        jrow, lrow = [], []
        for j in range(n):
            # greedy smallest-index step toward j yields the lexicographically
            # smallest sequence among all shortest paths
            path = [i]
            cur = i
            while cur != j:
                cur = next(v for v in nbrs[cur] if d[v, j] == d[cur, j] - 1)
                path.append(cur)
            ls = tuple(lengths_of[(min(a, b), max(a, b))] for a, b in zip(path[:-1], path[1:]))
            jrow.append(tuple(path))
            lrow.append(ls)
            if ls:
                edge_lengths[i, j, :len(ls)] = ls
                pos_w[i, j, :len(ls)] = 1.0 / len(ls)
        joints.append(tuple(jrow))
        lengths.append(tuple(lrow))
    edge_lengths.setflags(write=False)
    pos_w.setflags(write=False)
    return PathTable(tuple(joints), tuple(lengths), max_hop, edge_lengths, pos_w)


# ---------------------------------------------------------------- encodings

def init_graph_encoding(params: ModelParams, prefix: str, max_hop: int, heads: int,
                        edge_dim: int, rng: np.random.Generator, num_joints: int,
                        mode: str = "shared") -> None:
    """Register hop table, edge embedding and path position weights.

    Tables that act as additive attention biases start at zero, so a fresh
    model behaves exactly like one without graph encodings.
    """
    if mode not in PATH_WEIGHT_MODES:
        raise ConfigError(f"unknown path weight mode {mode!r}")
    k = max(max_hop, 1)
    params.add(f"{prefix}.hop_table", np.zeros((max_hop + 1, heads)))
    if mode == "shared":
        params.add(f"{prefix}.edge_W", xavier_uniform(rng, 1, edge_dim).reshape(edge_dim))
        params.add(f"{prefix}.edge_b", np.zeros(edge_dim))
        params.add(f"{prefix}.path_w", np.zeros((k, heads, edge_dim)))
    else:
        params.add(f"{prefix}.edge_W", xavier_uniform(rng, 1, heads).reshape(heads))
        params.add(f"{prefix}.edge_b", np.zeros(heads))
        params.add(f"{prefix}.path_w", np.zeros((num_joints, num_joints, k)))


def path_encoding(paths: PathTable, edge_W: Tensor, edge_b: Tensor, path_w: Tensor,
                  mode: str = "shared") -> Tensor:
    """PE[i, j, h]: mean over path positions k of <w[k, h], f(e_ij^k)>.

    In ``shared`` mode ``path_w`` is (max_hop, H, H_e) and is shared by
    position across pairs. In ``per_pair`` mode it is (N, N, max_hop) scalar
    weights and ``f`` maps each bone length straight to H dims. The diagonal
    is zero.
    """
    e = Tensor(paths.edge_lengths[..., None])            # N,N,K,1
    embedded = T.add(T.mul(e, edge_W), edge_b)           # N,N,K,E
    if mode == "per_pair":
        weights = T.mul(path_w, Tensor(paths.position_weights))   # N,N,K
        return T.sum(T.mul(embedded, T.reshape(weights, weights.shape + (1,))), axis=2)
    if mode != "shared":
        raise ConfigError(f"unknown path weight mode {mode!r}")
    weighted = T.mul(embedded, Tensor(paths.position_weights[..., None]))
    return T.einsum("ijke,khe->ijh", weighted, path_w)


def normalized_adjacency(graph: SkeletonGraph) -> np.ndarray:
    a = graph.adjacency() + np.eye(graph.num_joints)
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]
