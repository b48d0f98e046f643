import hashlib
import logging
import math
from enum import Enum
from typing import Iterable, NamedTuple, Optional, Sequence, TextIO

import numpy as np
import pandas as pd
from scipy import sparse

from starcd.errors import GraphError, GraphFormatError
from starcd.partition import Partition, canonicalize

logger = logging.getLogger("starcd")

SYMMETRY_TOLERANCE = 1e-9


class SignProfile(Enum):
    NONNEGATIVE = "nonnegative"
    SIGNED = "signed"


def _clean(matrix: sparse.csr_matrix) -> sparse.csr_matrix:
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    matrix.sort_indices()
    return matrix


def _frozen(matrix: sparse.csr_matrix) -> sparse.csr_matrix:
    _clean(matrix)
    for arr in (matrix.data, matrix.indices, matrix.indptr):
        arr.flags.writeable = False
    return matrix


def _split_signs(net: sparse.csr_matrix):
    positive = net.copy()
    positive.data = np.clip(positive.data, 0.0, None)
    negative = net.copy()
    negative.data = -np.clip(negative.data, None, 0.0)
    return _clean(positive), _clean(negative)


class Graph:
    """
    Immutable weighted graph on nodes 0..n-1.

    Undirected graphs are stored symmetrically: every edge {i, j} appears as the
    ordered entries (i, j) and (j, i), self-loops appear once on the diagonal.
    Positive and negative weight mass are held in two nonnegative channels; the
    public weight of an entry is positive - negative. Only graphs built by
    aggregate_by_partition can carry mass in both channels for the same entry.
    """

    def __init__(self, n: int, directed: bool, positive: sparse.csr_matrix, negative: sparse.csr_matrix,
                 node_labels: Optional[Sequence[str]] = None, aggregated: bool = False):
        if positive.shape != (n, n) or negative.shape != (n, n):
            raise GraphError("Channel matrices must be {0}x{0}".format(n))
        if node_labels is not None:
            node_labels = tuple(str(label) for label in node_labels)
            if len(node_labels) != n:
                raise GraphError("Got {} node labels for {} nodes".format(len(node_labels), n))
        self.n = n
        self.directed = directed
        self.positive = _frozen(sparse.csr_matrix(positive, dtype=float, copy=True))
        self.negative = _frozen(sparse.csr_matrix(negative, dtype=float, copy=True))
        self.node_labels = node_labels
        self.aggregated = aggregated
        self._weights = None
        self._fingerprint = None

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple], directed: bool,
                   node_labels: Optional[Sequence[str]] = None) -> "Graph":
        """
        Build a graph from (source, target, weight) triples. Duplicate pairs are
        summed; for undirected graphs each off-diagonal edge is mirrored.
        """
        edges = list(edges)
        if edges:
            rows, cols, weights = (np.asarray(col) for col in zip(*edges))
            rows = rows.astype(np.int64)
            cols = cols.astype(np.int64)
            weights = weights.astype(float)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            weights = np.zeros(0)
        if len(rows) and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
            raise GraphError("Edge endpoint outside 0..{}".format(n - 1))
        if not np.all(np.isfinite(weights)):
            raise GraphError("Edge weights must be finite")
        if np.any(weights == 0):
            raise GraphError("Zero-weight edges are not allowed, zero means absence")
        if not directed:
            off = rows != cols
            rows, cols, weights = (np.concatenate([rows, cols[off]]), np.concatenate([cols, rows[off]]),
                                   np.concatenate([weights, weights[off]]))
        net = sparse.coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
        positive, negative = _split_signs(net)
        return cls(n, directed, positive, negative, node_labels)

    @property
    def weights(self) -> sparse.csr_matrix:
        if self._weights is None:
            self._weights = _frozen(self.positive - self.negative)
        return self._weights

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        coo = self.weights.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    @property
    def sign_profile(self) -> SignProfile:
        return SignProfile.SIGNED if self.negative.nnz > 0 else SignProfile.NONNEGATIVE

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            digest = hashlib.sha256()
            digest.update("{}:{}:{}".format(self.n, int(self.directed), int(self.aggregated)).encode("ascii"))
            for channel in (self.positive, self.negative):
                for arr in (channel.indptr, channel.indices, channel.data):
                    digest.update(np.ascontiguousarray(arr, dtype=np.float64 if arr is channel.data
                                                       else np.int64).tobytes())
            self._fingerprint = digest.hexdigest()
        return self._fingerprint

    def label(self, node: int) -> str:
        if self.node_labels is None:
            return str(node)
        return self.node_labels[node]

    def labels(self) -> tuple[str, ...]:
        if self.node_labels is None:
            return tuple(str(i) for i in range(self.n))
        return self.node_labels

    def binarized(self) -> "Graph":
        if self.sign_profile is SignProfile.SIGNED:
            raise GraphError("Cannot binarize a signed graph")
        unit = self.weights.copy()
        unit.data = np.ones_like(unit.data)
        return Graph(self.n, self.directed, unit, sparse.csr_matrix((self.n, self.n)), self.node_labels)

    def __repr__(self):
        return "Graph(n={}, directed={}, entries={}, {})".format(
            self.n, self.directed, self.weights.nnz, self.sign_profile.value)


def _split_fields(line: str) -> list[str]:
    if "\t" in line:
        fields = line.split("\t")
    elif "," in line:
        fields = line.split(",")
    else:
        fields = line.split()
    return [field.strip() for field in fields]


def load_edge_list(stream: Iterable[str], directed: bool, weighted: bool,
                   node_labels: Optional[Sequence[str]] = None) -> Graph:
    """
    Read an edge list, one `<src> <dst> [<weight>]` per line. Tab, comma or
    whitespace delimited; lines starting with `#` are comments. Node identifiers
    are mapped to indices in order of first appearance.

    :param node_labels: fixes the node set and order up front; isolated nodes are
                        kept and identifiers outside the list are rejected.
    """
    expected = 3 if weighted else 2
    index = {}
    if node_labels is not None:
        index = {str(label): i for i, label in enumerate(node_labels)}
    edges = []
    for line_number, line in enumerate(stream, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = _split_fields(line)
        if len(fields) != expected:
            raise GraphFormatError("expected {} fields, got {}: {!r}".format(expected, len(fields), line),
                                   line_number)
        if not fields[0] or not fields[1]:
            raise GraphFormatError("empty node identifier: {!r}".format(line), line_number)
        weight = 1.0
        if weighted:
            try:
                weight = float(fields[2])
            except ValueError:
                raise GraphFormatError("weight is not a number: {!r}".format(fields[2]), line_number)
            if not math.isfinite(weight):
                raise GraphFormatError("weight must be finite, got {}".format(fields[2]), line_number)
            if weight == 0:
                raise GraphFormatError("zero-weight edge, zero means absence", line_number)
        if node_labels is not None:
            unknown = [label for label in fields[:2] if label not in index]
            if unknown:
                raise GraphFormatError("unknown node {!r}".format(unknown[0]), line_number)
        source = index.setdefault(fields[0], len(index))
        target = index.setdefault(fields[1], len(index))
        edges.append((source, target, weight))
    logger.debug("Read %d edge lines over %d nodes", len(edges), len(index))
    return Graph.from_edges(len(index), edges, directed, node_labels=list(index))


def check_label(label: str, forbidden: str = "\n\r") -> str:
    """Reject node labels a line-based text file cannot carry back unchanged."""
    if not label or label != label.strip() or label.startswith("#") or any(ch in label for ch in forbidden):
        raise GraphFormatError("node label {!r} cannot be written to a text file".format(label))
    return label


def write_edge_list(g: Graph, stream: TextIO):
    """
    Write `g` so that load_edge_list(weighted=True) reads back the same entries.
    Fields are tab separated when a label contains a space or a comma.
    """
    labels = [check_label(label, "\t\n\r") for label in g.labels()]
    delimiter = "\t" if any(" " in label or "," in label for label in labels) else " "
    stream.write("# {} graph, {} nodes\n".format("directed" if g.directed else "undirected", g.n))
    for source, target, weight in g.edges:
        if not g.directed and target < source:
            continue
        stream.write("{}\n".format(delimiter.join([labels[source], labels[target], repr(weight)])))


def from_dense_matrix(m, directed: bool, node_labels: Optional[Sequence[str]] = None) -> Graph:
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise GraphError("Matrix must be square, got shape {}".format(m.shape))
    if np.isnan(m).any():
        raise GraphError("Matrix contains NaN entries")
    if not np.isfinite(m).all():
        raise GraphError("Matrix contains infinite entries")
    if not directed:
        asymmetry = float(np.abs(m - m.T).max()) if m.size else 0.0
        if asymmetry > SYMMETRY_TOLERANCE:
            raise GraphError("Matrix is not symmetric (max deviation {:.3g})".format(asymmetry))
        m = (m + m.T) / 2.0
    net = sparse.csr_matrix(m)
    positive, negative = _split_signs(net)
    return Graph(m.shape[0], directed, positive, negative, node_labels)


def _is_numeric(values) -> bool:
    return not pd.to_numeric(pd.Series(values), errors="coerce").isna().any()


def load_dense_matrix_csv(source, directed: bool = False) -> Graph:
    """Read a CSV matrix of reals with an optional header row and/or label column."""
    frame = pd.read_csv(source, header=None, dtype=str, keep_default_na=False)
    if frame.empty:
        raise GraphFormatError("empty matrix file")
    has_header = not _is_numeric(frame.iloc[0, 1:])
    has_index = not _is_numeric(frame.iloc[1 if has_header else 0:, 0])
    body = frame.iloc[1 if has_header else 0:, 1 if has_index else 0:]
    labels = None
    if has_header:
        labels = list(frame.iloc[0, 1 if has_index else 0:])
    elif has_index:
        labels = list(frame.iloc[:, 0])
    try:
        values = body.astype(float).to_numpy()
    except ValueError as e:
        raise GraphFormatError("matrix cell is not a number: {}".format(e))
    return from_dense_matrix(values, directed, labels)


class NodeMarginals(NamedTuple):
    k_out: np.ndarray
    k_in: np.ndarray
    s_out: np.ndarray
    s_in: np.ndarray
    s_out_plus: np.ndarray
    s_out_minus: np.ndarray
    s_in_plus: np.ndarray
    s_in_minus: np.ndarray


def node_marginals(g: Graph) -> NodeMarginals:
    weights = g.weights
    s_out_plus = np.asarray(g.positive.sum(axis=1)).ravel()
    s_out_minus = np.asarray(g.negative.sum(axis=1)).ravel()
    s_in_plus = np.asarray(g.positive.sum(axis=0)).ravel()
    s_in_minus = np.asarray(g.negative.sum(axis=0)).ravel()
    return NodeMarginals(
        k_out=np.diff(weights.indptr).astype(np.int64),
        k_in=np.bincount(weights.indices, minlength=g.n).astype(np.int64),
        s_out=s_out_plus - s_out_minus,
        s_in=s_in_plus - s_in_minus,
        s_out_plus=s_out_plus,
        s_out_minus=s_out_minus,
        s_in_plus=s_in_plus,
        s_in_minus=s_in_minus,
    )


class Totals(NamedTuple):
    L: int
    w_tot: float
    w_plus: float
    w_minus: float


def totals(g: Graph) -> Totals:
    w_plus = float(g.positive.sum())
    w_minus = float(g.negative.sum())
    return Totals(int(g.weights.nnz), w_plus - w_minus, w_plus, w_minus)


def membership_matrix(p: Partition) -> sparse.csr_matrix:
    return sparse.csr_matrix((np.ones(p.n), (np.arange(p.n), p.assignment)), shape=(p.n, p.k))


def aggregate_by_partition(g: Graph, p) -> Graph:
    """
    Collapse every community of `p` into one node. Intra-community weight becomes
    a self-loop, weight between communities is summed, sign channels stay apart.
    """
    p = canonicalize(p)
    if p.n != g.n:
        raise GraphError("Partition has {} entries for a graph with {} nodes".format(p.n, g.n))
    h = membership_matrix(p)
    positive = (h.T @ g.positive @ h).tocsr()
    negative = (h.T @ g.negative @ h).tocsr()
    return Graph(p.k, g.directed, positive, negative, aggregated=True)
