"""Graphs, node tables, embeddings, and the normalized adjacency operator.

File formats
------------
Edge list        lines "u v"; '#' starts a comment; an optional first line
                 "n <count>" pins the node count.
Node table       one JSON object per line with fields id (int), text
                 (string, optional), label (class-name string, optional).
Embedding matrix "n d" header, then n rows of d whitespace-separated floats.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

UNREACHABLE = -1


class FormatError(ValueError):
    """An input file does not match its documented format."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph over nodes 0..n-1.

    Neighbor lists are stored in CSR form (`indptr`, `indices`) with each
    row sorted ascending. No self-loops, no duplicate edges.
    """

    n: int
    edges: frozenset
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        if n < 1:
            raise ValueError("graph needs at least one node")
        canon = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop ({u},{u}) is not storable")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) has an endpoint >= n={n}")
            canon.add((min(u, v), max(u, v)))
        if canon:
            arr = np.array(sorted(canon), dtype=np.intp)
            rows = np.concatenate([arr[:, 0], arr[:, 1]])
            cols = np.concatenate([arr[:, 1], arr[:, 0]])
            order = np.lexsort((cols, rows))
            rows, cols = rows[order], cols[order]
            counts = np.bincount(rows, minlength=n)
        else:
            cols = np.empty(0, dtype=np.intp)
            counts = np.zeros(n, dtype=np.intp)
        indptr = np.zeros(n + 1, dtype=np.intp)
        np.cumsum(counts, out=indptr[1:])
        return cls(n=n, edges=frozenset(canon), indptr=indptr, indices=cols)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def degree(self, u: int) -> int:
        return int(self.indptr[u + 1] - self.indptr[u])


@dataclass(frozen=True)
class NodeTable:
    """Per-node texts and ground-truth labels plus the class vocabulary."""

    n: int
    class_names: list
    texts: list | None = None
    labels: list | None = None

    def __post_init__(self):
        folded = [name.strip().casefold() for name in self.class_names]
        if any(not f for f in folded):
            raise ValueError("class names must be non-empty")
        if len(set(folded)) != len(folded):
            raise ValueError("class names must be distinct after case-folding")
        if self.texts is not None and len(self.texts) != self.n:
            raise ValueError("texts length differs from node count")
        if self.labels is not None:
            if len(self.labels) != self.n:
                raise ValueError("labels length differs from node count")
            c = len(self.class_names)
            for i, y in enumerate(self.labels):
                if not (0 <= y < c):
                    raise ValueError(f"label {y} of node {i} is out of range")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense n-by-d node feature matrix, finite float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("embedding matrix must be 2-D")
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise ValueError(f"non-finite embedding value at row {bad[0]}, column {bad[1]}")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetrically normalized adjacency with implicit self-connections.

    Entries are deg̃(u)^-1/2 * deg̃(v)^-1/2 on the pattern of (A + I),
    where deg̃ counts the self-connection. Stored CSR; supports `@ dense`.
    """

    n: int
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    data: np.ndarray = field(repr=False)

    def __matmul__(self, dense: np.ndarray) -> np.ndarray:
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2 or dense.shape[0] != self.n:
            raise ValueError(f"operand must be ({self.n}, k), got {dense.shape}")
        return kernels.spmm(self.indptr, self.indices, self.data, dense)

    def toarray(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for i in range(self.n):
            lo, hi = self.indptr[i], self.indptr[i + 1]
            out[i, self.indices[lo:hi]] = self.data[lo:hi]
        return out


def normalized_adjacency(graph: Graph) -> NormalizedAdjacency:
    """Build the normalized operator used by the graph convolution."""
    n = graph.n
    deg = np.diff(graph.indptr).astype(np.float64) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    if graph.num_edges:
        arr = np.array(sorted(graph.edges), dtype=np.intp)
        rows = np.concatenate([arr[:, 0], arr[:, 1], np.arange(n, dtype=np.intp)])
        cols = np.concatenate([arr[:, 1], arr[:, 0], np.arange(n, dtype=np.intp)])
    else:
        rows = np.arange(n, dtype=np.intp)
        cols = np.arange(n, dtype=np.intp)
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    vals = dinv[rows] * dinv[cols]
    indptr = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return NormalizedAdjacency(n=n, indptr=indptr, indices=cols, data=vals)


def hop_distances(graph: Graph, core: int) -> np.ndarray:
    """Shortest-path hop counts from `core`; UNREACHABLE (-1) if disconnected."""
    if not (0 <= core < graph.n):
        raise ValueError(f"core {core} out of range for n={graph.n}")
    return kernels.bfs_levels(graph.indptr, graph.indices, graph.n, core)


def load_edge_list(path) -> Graph:
    """Read an undirected edge list; see the module docstring for the format."""
    edges = set()
    header_n = None
    max_idx = -1
    saw_content = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if not saw_content and parts[0] == "n" and len(parts) == 2:
                try:
                    header_n = int(parts[1])
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad node count {parts[1]!r}") from None
                if header_n < 1:
                    raise FormatError(f"{path}:{lineno}: node count must be positive")
                saw_content = True
                continue
            saw_content = True
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected two integers, got {body!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: expected two integers, got {body!r}") from None
            if u < 0 or v < 0:
                raise FormatError(f"{path}:{lineno}: negative node index")
            if u == v:
                logger.warning("%s:%d: skipping self-loop on node %d", path, lineno, u)
                max_idx = max(max_idx, u)
                continue
            edges.add((min(u, v), max(u, v)))
            max_idx = max(max_idx, u, v)
    if not saw_content:
        raise FormatError(f"{path}: no edges or header found")
    n = header_n if header_n is not None else max_idx + 1
    if max_idx >= n:
        raise FormatError(f"{path}: node index {max_idx} exceeds declared count {n}")
    return Graph.from_edges(n, edges)


def load_node_table(path, class_names) -> NodeTable:
    """Read a JSON-lines node table and resolve label strings to indices."""
    lookup = {name.strip().casefold(): i for i, name in enumerate(class_names)}
    texts, labels, ids = [], [], []
    any_text = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid record: {exc}") from None
            if "id" not in rec:
                raise FormatError(f"{path}:{lineno}: record has no id")
            ids.append(int(rec["id"]))
            if "text" in rec:
                any_text = True
                texts.append(str(rec["text"]))
            else:
                texts.append("")
            if "label" in rec and rec["label"] is not None:
                key = str(rec["label"]).strip().casefold()
                if key not in lookup:
                    raise FormatError(
                        f"{path}:{lineno}: unknown class {rec['label']!r} for id {rec['id']}"
                    )
                labels.append(lookup[key])
            else:
                labels.append(None)
    if not ids:
        raise FormatError(f"{path}: empty node table")
    if ids != list(range(len(ids))):
        raise FormatError(f"{path}: node ids must be 0..{len(ids) - 1} in order without gaps")
    have = [y is not None for y in labels]
    if any(have) and not all(have):
        missing = have.index(False)
        raise FormatError(f"{path}: label missing for id {missing} while others are labeled")
    return NodeTable(
        n=len(ids),
        class_names=list(class_names),
        texts=texts if any_text else None,
        labels=labels if all(have) else None,
    )


def load_embeddings(path) -> EmbeddingMatrix:
    """Read a text embedding matrix with an "n d" header."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}: header must be 'n d'")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}: header must be 'n d'") from None
        if n < 1 or d < 1:
            raise FormatError(f"{path}: header dimensions must be positive")
        out = np.empty((n, d), dtype=np.float64)
        row = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            if row >= n:
                raise FormatError(f"{path}: expected {n} rows, found more at line {lineno}")
            parts = line.split()
            if len(parts) != d:
                raise FormatError(
                    f"{path}:{lineno}: expected {d} values, got {len(parts)}"
                )
            for j, tok in enumerate(parts):
                try:
                    val = float(tok)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: bad float {tok!r}") from None
                if not math.isfinite(val):
                    raise FormatError(
                        f"{path}:{lineno}: non-finite value {tok!r} at row {row}, column {j}"
                    )
                out[row, j] = val
            row += 1
    if row != n:
        raise FormatError(f"{path}: expected {n} rows, got {row}")
    return EmbeddingMatrix(out)


def save_embeddings(path, matrix: EmbeddingMatrix) -> None:
    """Write a matrix in the loadable text format at full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{matrix.rows} {matrix.cols}\n")
        for row in matrix.data:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
