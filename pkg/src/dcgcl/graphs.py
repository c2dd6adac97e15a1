"""Graph containers, TU-format I/O, random-walk encodings and batching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class TUFormatError(ValueError):
    """Malformed TU dataset file; message carries file name and line number."""


@dataclass(frozen=True, eq=False)
class Graph:
    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, 0-based, both directions listed
    node_features: np.ndarray  # (n, d) float64
    label: int | None = None
    graph_id: int = 0

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        feats = np.asarray(self.node_features, dtype=np.float64)
        if self.num_nodes < 1:
            raise ValueError("a graph needs at least one node")
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise ValueError(f"node_features shape {feats.shape} does not match n={self.num_nodes}")
        if edges.size and (edges.min() < 0 or edges.max() >= self.num_nodes):
            raise ValueError("edge endpoint out of range")
        edges.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "node_features", feats)

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        if self.edges.size:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        return a

    def is_symmetric(self) -> bool:
        fwd = {tuple(e) for e in self.edges.tolist()}
        return all((j, i) in fwd for i, j in fwd)

    def same_as(self, other: "Graph") -> bool:
        return (self.num_nodes == other.num_nodes
                and self.label == other.label
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.node_features, other.node_features))

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so that old node ``perm[k]`` becomes node ``k``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return Graph(self.num_nodes, inv[self.edges], self.node_features[perm],
                     self.label, self.graph_id)


@dataclass(frozen=True, eq=False)
class GraphBatch:
    total_nodes: int
    edges: np.ndarray
    node_features: np.ndarray
    membership: np.ndarray
    graph_sizes: np.ndarray
    labels: np.ndarray  # -1 where a graph has no label
    pe: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_graphs(self) -> int:
        return int(self.graph_sizes.shape[0])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.graph_sizes)[:-1]]).astype(np.int64)

    def attention_mask(self) -> np.ndarray:
        """Boolean (n, n) block-diagonal mask: True where nodes share a graph."""
        if "attn" not in self._cache:
            m = self.membership
            self._cache["attn"] = m[:, None] == m[None, :]
        return self._cache["attn"]

    def pooling_matrix(self) -> np.ndarray:
        """(N, n) matrix whose product with node rows gives per-graph means."""
        if "pool" not in self._cache:
            p = np.zeros((self.num_graphs, self.total_nodes))
            p[self.membership, np.arange(self.total_nodes)] = 1.0
            p /= self.graph_sizes[:, None]
            self._cache["pool"] = p
        return self._cache["pool"]

    def membership_onehot(self) -> np.ndarray:
        if "onehot" not in self._cache:
            self._cache["onehot"] = (self.membership[None, :]
                                     == np.arange(self.num_graphs)[:, None])
        return self._cache["onehot"]

    def with_features(self, node_features: np.ndarray, pe: np.ndarray | None = None) -> "GraphBatch":
        return GraphBatch(self.total_nodes, self.edges, np.asarray(node_features, dtype=np.float64),
                          self.membership, self.graph_sizes, self.labels,
                          self.pe if pe is None else pe, self._cache)

    def split(self) -> list[Graph]:
        graphs = []
        for g, (off, size) in enumerate(zip(self.offsets, self.graph_sizes)):
            sel = self.membership[self.edges[:, 0]] == g if self.edges.size else np.zeros(0, bool)
            label = int(self.labels[g]) if self.labels[g] >= 0 else None
            graphs.append(Graph(int(size), self.edges[sel] - off,
                                self.node_features[off:off + size], label, g))
        return graphs


def batch_graphs(graphs: Sequence[Graph], pe: Sequence[np.ndarray] | None = None) -> GraphBatch:
    if len(graphs) == 0:
        raise ValueError("cannot batch an empty list of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ValueError(f"mixed feature dimensions in batch: {sorted(dims)}")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)], axis=0)
    membership = np.repeat(np.arange(len(graphs)), sizes)
    labels = np.array([-1 if g.label is None else g.label for g in graphs], dtype=np.int64)
    stacked_pe = None
    if pe is not None:
        stacked_pe = np.concatenate([np.asarray(p, dtype=np.float64) for p in pe], axis=0)
        if stacked_pe.shape[0] != sizes.sum():
            raise ValueError("positional encoding rows do not match node count")
    return GraphBatch(int(sizes.sum()), edges.reshape(-1, 2), np.concatenate(
        [g.node_features for g in graphs], axis=0), membership, sizes, labels, stacked_pe)


def compute_rwse(graph: Graph, num_steps: int = 8) -> np.ndarray:
    """Random-walk return probabilities: column k is diag(T^k), T = D^-1 A."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    a = graph.adjacency()
    deg = a.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    t = a * inv[:, None]
    out = np.zeros((graph.num_nodes, num_steps))
    power = t
    for k in range(num_steps):
        out[:, k] = np.diag(power)
        power = power @ t
    return out


# --------------------------------------------------------------------------
# TU format


def _dataset_dir(directory: Path, name: str) -> Path:
    nested = directory / name
    if (nested / f"{name}_A.txt").exists():
        return nested
    return directory


def _read_ints(path: Path, per_line: int) -> list[tuple[int, list[int]]]:
    rows = []
    lines = path.read_text().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    for lineno, raw in enumerate(lines, start=1):
        tokens = [t.strip() for t in raw.split(",")]
        if len(tokens) != per_line:
            raise TUFormatError(f"{path.name}:{lineno}: expected {per_line} value(s), got {raw!r}")
        try:
            rows.append((lineno, [int(t) for t in tokens]))
        except ValueError:
            raise TUFormatError(f"{path.name}:{lineno}: non-integer token in {raw!r}") from None
    return rows


def parse_tu_dataset(directory: str | Path, name: str) -> list[Graph]:
    """Parse a TU benchmark dataset (``<name>_A.txt`` and friends).

    Node labels become one-hot features; without a node-label file every
    node gets a single constant feature of 1. Graph labels are remapped to
    0..k-1 in sorted order. Self-loops are dropped and the edge list must be
    symmetric.
    """
    root = _dataset_dir(Path(directory), name)
    files = {key: root / f"{name}_{key}.txt" for key in ("A", "graph_indicator", "graph_labels")}
    for path in files.values():
        if not path.exists():
            raise FileNotFoundError(f"missing TU file: {path}")

    indicator_rows = _read_ints(files["graph_indicator"], 1)
    indicator = np.array([v[0] for _, v in indicator_rows], dtype=np.int64)
    label_rows = _read_ints(files["graph_labels"], 1)
    raw_labels = [v[0] for _, v in label_rows]
    num_graphs = len(raw_labels)
    if indicator.size == 0:
        raise TUFormatError(f"{files['graph_indicator'].name}: no nodes")
    if np.any(np.diff(indicator) < 0):
        bad = int(np.argmax(np.diff(indicator) < 0)) + 2
        raise TUFormatError(f"{files['graph_indicator'].name}:{bad}: graph ids must be non-decreasing")
    if indicator[0] < 1 or indicator[-1] > num_graphs:
        raise TUFormatError(f"{files['graph_indicator'].name}: graph ids outside 1..{num_graphs}")
    sizes = np.bincount(indicator - 1, minlength=num_graphs)
    if np.any(sizes == 0):
        missing = int(np.argmax(sizes == 0)) + 1
        raise TUFormatError(f"{files['graph_indicator'].name}: graph {missing} has no nodes")
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    num_nodes = indicator.size

    per_graph_edges: list[list[tuple[int, int]]] = [[] for _ in range(num_graphs)]
    for lineno, (i, j) in _read_ints(files["A"], 2):
        if not (1 <= i <= num_nodes and 1 <= j <= num_nodes):
            raise TUFormatError(f"{files['A'].name}:{lineno}: node id out of range 1..{num_nodes}")
        gi, gj = indicator[i - 1], indicator[j - 1]
        if gi != gj:
            raise TUFormatError(
                f"{files['A'].name}:{lineno}: edge ({i}, {j}) joins graphs {gi} and {gj}")
        if i == j:
            continue
        off = offsets[gi - 1]
        per_graph_edges[gi - 1].append((i - 1 - off, j - 1 - off))

    node_label_file = root / f"{name}_node_labels.txt"
    if node_label_file.exists():
        rows = _read_ints(node_label_file, 1)
        if len(rows) != num_nodes:
            raise TUFormatError(
                f"{node_label_file.name}: {len(rows)} labels for {num_nodes} nodes")
        node_labels = np.array([v[0] for _, v in rows])
        values, codes = np.unique(node_labels, return_inverse=True)
        features = np.zeros((num_nodes, values.size))
        features[np.arange(num_nodes), codes] = 1.0
    else:
        features = np.ones((num_nodes, 1))

    classes = {v: k for k, v in enumerate(sorted(set(raw_labels)))}
    graphs = []
    for g in range(num_graphs):
        lo, hi = offsets[g], offsets[g] + sizes[g]
        edges = np.array(per_graph_edges[g], dtype=np.int64).reshape(-1, 2)
        graph = Graph(int(sizes[g]), edges, features[lo:hi], classes[raw_labels[g]], g)
        if not graph.is_symmetric():
            raise TUFormatError(f"{files['A'].name}: graph {g + 1} has an asymmetric edge list")
        graphs.append(graph)
    return graphs


def write_tu_dataset(graphs: Sequence[Graph], directory: str | Path, name: str) -> Path:
    """Write graphs in TU format. Features must be one-hot or a constant 1 column."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise ValueError("mixed feature dimensions")
    onehot = None
    all_feats = np.concatenate([g.node_features for g in graphs], axis=0)
    if not (all_feats.shape[1] == 1 and np.all(all_feats == 1.0)):
        if not (np.all((all_feats == 0) | (all_feats == 1)) and np.all(all_feats.sum(axis=1) == 1)):
            raise ValueError("only one-hot node labels or constant features can be written")
        onehot = all_feats.argmax(axis=1)

    a_lines, ind_lines = [], []
    offset = 0
    for gid, g in enumerate(graphs, start=1):
        ind_lines.extend([str(gid)] * g.num_nodes)
        a_lines.extend(f"{i + 1 + offset}, {j + 1 + offset}" for i, j in g.edges.tolist())
        offset += g.num_nodes
    (root / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (root / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    (root / f"{name}_graph_labels.txt").write_text(
        "\n".join(str(0 if g.label is None else g.label) for g in graphs) + "\n")
    if onehot is not None:
        (root / f"{name}_node_labels.txt").write_text("\n".join(map(str, onehot.tolist())) + "\n")
    return root


def dataset_stats(graphs: Sequence[Graph]) -> dict:
    return {
        "graphs": len(graphs),
        "mean_nodes": float(np.mean([g.num_nodes for g in graphs])),
        "mean_edges": float(np.mean([g.edges.shape[0] / 2 for g in graphs])),
        "classes": len({g.label for g in graphs}),
        "feature_dim": graphs[0].feature_dim,
    }


# --------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class GeneratorSpec:
    """One class of the synthetic corpus.

    ``kind`` is ``"er"`` (edge probability ``p``) or ``"communities"``
    (two equal blocks, ``p_in`` inside and ``p_out`` across).
    """
    kind: str
    p: float = 0.2
    p_in: float = 0.5
    p_out: float = 0.05


DEFAULT_CLASSES = (GeneratorSpec("er", p=0.2), GeneratorSpec("communities", p_in=0.5, p_out=0.05))


def _sample_edges(spec: GeneratorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    iu, ju = np.triu_indices(n, k=1)
    if spec.kind == "er":
        prob = np.full(iu.shape, spec.p)
    elif spec.kind == "communities":
        block = np.arange(n) >= n // 2
        prob = np.where(block[iu] == block[ju], spec.p_in, spec.p_out)
    else:
        raise ValueError(f"unknown generator kind {spec.kind!r}")
    keep = rng.random(iu.shape) < prob
    src, dst = iu[keep], ju[keep]
    return np.stack([np.concatenate([src, dst]), np.concatenate([dst, src])], axis=1)


def generate_synthetic_dataset(
    num_graphs: int,
    class_spec: Sequence[GeneratorSpec] = DEFAULT_CLASSES,
    seed: int = 0,
    num_nodes: int | tuple[int, int] = 20,
) -> list[Graph]:
    """Balanced two-or-more class corpus with constant node features.

    Identical generators are allowed but give a chance-level corpus.
    """
    if len(class_spec) < 2:
        raise ValueError("need at least two generators")
    rng = np.random.default_rng(seed)
    labels = np.arange(num_graphs) % len(class_spec)
    rng.shuffle(labels)
    graphs = []
    for gid, y in enumerate(labels):
        if isinstance(num_nodes, tuple):
            n = int(rng.integers(num_nodes[0], num_nodes[1] + 1))
        else:
            n = int(num_nodes)
        edges = _sample_edges(class_spec[y], n, rng)
        graphs.append(Graph(n, edges, np.ones((n, 1)), int(y), gid))
    return graphs


def triangle_count(graph: Graph) -> int:
    a = graph.adjacency()
    return int(round(np.trace(a @ a @ a) / 6))


def ceil_count(p: float, n: int) -> int:
    """``ceil(p * n)`` robust to float noise such as ``0.7 * 10 = 7.000000000000001``."""
    return int(math.ceil(p * n - 1e-9))
