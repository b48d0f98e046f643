import logging
import math
from typing import NamedTuple, Sequence

import numpy as np

from starcd.errors import PartitionError, EnsembleError

logger = logging.getLogger("starcd")


def _first_appearance_labels(raw) -> np.ndarray:
    arr = np.asarray(raw)
    if arr.ndim != 1:
        raise PartitionError("Partition assignment must be one-dimensional, got shape {}".format(arr.shape))
    if len(arr) == 0:
        raise PartitionError("Cannot canonicalize an empty assignment")
    if arr.dtype.kind in "iub":
        uniq, first, inverse = np.unique(arr, return_index=True, return_inverse=True)
        relabel = np.empty(len(uniq), dtype=np.int64)
        relabel[np.argsort(first, kind="stable")] = np.arange(len(uniq), dtype=np.int64)
        return relabel[inverse.reshape(-1)]
    mapping = {}
    out = np.empty(len(arr), dtype=np.int64)
    for i, label in enumerate(raw):
        out[i] = mapping.setdefault(label, len(mapping))
    return out


class Partition:
    """
    Assignment of every node to a community. Community ids are always canonical:
    0..k-1, numbered by first appearance in node order.
    """

    def __init__(self, assignment):
        labels = _first_appearance_labels(assignment)
        labels.flags.writeable = False
        self.assignment = labels
        self.n = len(labels)
        self.k = int(labels.max()) + 1

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(n))

    @classmethod
    def whole(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64))

    @property
    def key(self) -> bytes:
        return self.assignment.tobytes()

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def communities(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(self.sizes())[:-1]
        return np.split(order, bounds)

    def tolist(self) -> list[int]:
        return self.assignment.tolist()

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.assignment, other.assignment))

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return "Partition(n={}, k={})".format(self.n, self.k)


def canonicalize(p) -> Partition:
    if isinstance(p, Partition):
        return p
    return Partition(p)


class Contingency(NamedTuple):
    table: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray


def contingency(p1, p2) -> Contingency:
    p1, p2 = canonicalize(p1), canonicalize(p2)
    if p1.n != p2.n:
        raise PartitionError("Partitions have different lengths: {} and {}".format(p1.n, p2.n))
    codes = p1.assignment * p2.k + p2.assignment
    table = np.bincount(codes, minlength=p1.k * p2.k).reshape(p1.k, p2.k)
    return Contingency(table, table.sum(axis=1), table.sum(axis=0))


def _pairs(counts: np.ndarray) -> int:
    counts = counts.astype(np.int64)
    return int((counts * (counts - 1) // 2).sum())


class PairCounts(NamedTuple):
    z: int
    b: int
    c: int
    m: int


def pair_counts(p1, p2) -> PairCounts:
    """
    Exact pair counts behind the adjusted Rand index.

    :return: z pairs together in both partitions, b pairs together in the first,
             c pairs together in the second and m = C(n, 2), all python ints.
    """
    table, rows, cols = contingency(p1, p2)
    n = int(rows.sum())
    return PairCounts(_pairs(table), _pairs(rows), _pairs(cols), n * (n - 1) // 2)


def ari(p1, p2) -> float:
    """
    Adjusted Rand index between two partitions of the same node set.

    The chance correction is carried out on exact integers and rounded once, so
    the result is the correctly rounded value of (z - bc/M) / ((b+c)/2 - bc/M).
    Returns 1.0 when the denominator vanishes, which only happens when both
    partitions are all-singletons or both are all-in-one.
    """
    p1, p2 = canonicalize(p1), canonicalize(p2)
    if p1.n != p2.n:
        raise PartitionError("Partitions have different lengths: {} and {}".format(p1.n, p2.n))
    if p1.n < 2:
        raise PartitionError("ARI needs at least two nodes")
    z, b, c, m = pair_counts(p1, p2)
    numerator = 2 * (z * m - b * c)
    denominator = (b + c) * m - 2 * b * c
    if denominator == 0:
        return 1.0
    return numerator / denominator


class AriMatrix:
    """Pairwise ARI similarity network over an ensemble, diagonal held at zero."""

    def __init__(self, values: np.ndarray):
        values = np.array(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise EnsembleError("ARI matrix must be square, got shape {}".format(values.shape))
        if not np.array_equal(values, values.T):
            raise EnsembleError("ARI matrix must be symmetric")
        np.fill_diagonal(values, 0.0)
        values.flags.writeable = False
        self.values = values
        self.t = values.shape[0]

    def strength(self) -> np.ndarray:
        # fsum keeps row sums independent of member order
        return np.array([math.fsum(row) for row in self.values.tolist()])

    def normalized_strength(self) -> np.ndarray:
        if self.t < 2:
            return np.zeros(self.t)
        return self.strength() / (self.t - 1)

    def scaled(self, factor: float) -> "AriMatrix":
        return AriMatrix(self.values * factor)

    def __repr__(self):
        return "AriMatrix(t={})".format(self.t)


def ari_matrix_from_partitions(partitions: Sequence[Partition]) -> AriMatrix:
    partitions = [canonicalize(p) for p in partitions]
    t = len(partitions)
    if t < 2:
        raise EnsembleError("ARI matrix needs at least two partitions, got {}".format(t))
    values = np.zeros((t, t))
    cache = {}
    for i in range(t):
        for j in range(i + 1, t):
            pair = (partitions[i].key, partitions[j].key)
            value = cache.get(pair)
            if value is None:
                value = ari(partitions[i], partitions[j])
                cache[pair] = value
            values[i, j] = value
            values[j, i] = value
    logger.debug("Computed ARI matrix over %d partitions (%d distinct pairs)", t, len(cache))
    return AriMatrix(values)


def ari_matrix(ens) -> AriMatrix:
    return ari_matrix_from_partitions(ens.partitions)
