import heapq
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy import sparse

from starcd.errors import GraphError, ModelCompatibilityError, StaleStateError, EnsembleError
from starcd.graph import Graph, NodeMarginals, SignProfile, node_marginals, totals
from starcd.partition import canonicalize

logger = logging.getLogger("starcd")


class NullModel(Enum):
    CONFIGURATION_BINARY = "binary"
    CONFIGURATION_WEIGHTED = "weighted"
    SIGNED_CONFIGURATION = "signed"
    PRECOMPUTED = "precomputed"


def parse_null_model(name: str) -> NullModel:
    try:
        return NullModel(name.lower())
    except ValueError:
        raise ModelCompatibilityError("Unknown null model {!r}, use one of: {}".format(
            name, ", ".join(m.value for m in NullModel)))


@dataclass(frozen=True)
class ModularityScore:
    q: float
    model: NullModel
    graph_fingerprint: str

    def _check(self, other: "ModularityScore"):
        if not isinstance(other, ModularityScore):
            raise TypeError("Can only compare modularity scores with each other")
        if other.model is not self.model:
            raise ModelCompatibilityError("Cannot compare Q under {} with Q under {}".format(
                self.model.value, other.model.value))

    def __sub__(self, other: "ModularityScore") -> float:
        self._check(other)
        return self.q - other.q

    def __lt__(self, other):
        self._check(other)
        return self.q < other.q

    def __le__(self, other):
        self._check(other)
        return self.q <= other.q

    def __gt__(self, other):
        self._check(other)
        return self.q > other.q

    def __ge__(self, other):
        self._check(other)
        return self.q >= other.q

    def __float__(self):
        return self.q


def check_compatible(g: Graph, model: NullModel):
    if model is NullModel.CONFIGURATION_BINARY:
        if g.sign_profile is SignProfile.SIGNED:
            raise ModelCompatibilityError("Binary configuration model needs unit weights, graph is signed")
        data = g.positive.data
        if g.aggregated:
            # aggregated weights count the unit links merged into each entry
            if not np.all(data == np.round(data)):
                raise ModelCompatibilityError("Aggregated graph carries non-integer link counts")
        elif not np.all(data == 1.0):
            raise ModelCompatibilityError("Binary configuration model needs unit weights, "
                                          "use Graph.binarized() first")
    elif model is NullModel.CONFIGURATION_WEIGHTED:
        if g.sign_profile is SignProfile.SIGNED:
            raise ModelCompatibilityError("Weighted configuration model needs nonnegative weights, "
                                          "use the signed model for signed graphs")


class _Channel(NamedTuple):
    sign: float
    total: float
    s_in: np.ndarray
    s_out: np.ndarray


def _channels(g: Graph, model: NullModel) -> tuple[float, list[_Channel]]:
    """Normalization constant and the null-model channels of `model` on `g`."""
    check_compatible(g, model)
    w_plus, w_minus = totals(g)[2:]
    marginals = node_marginals(g)
    if model in (NullModel.CONFIGURATION_BINARY, NullModel.CONFIGURATION_WEIGHTED):
        # on unit-weight graphs strengths are degrees and w_plus is L
        norm = w_plus
        channels = [_Channel(1.0, w_plus, marginals.s_in_plus, marginals.s_out_plus)]
    elif model is NullModel.SIGNED_CONFIGURATION:
        norm = w_plus + w_minus
        channels = []
        if w_plus > 0:
            channels.append(_Channel(1.0, w_plus, marginals.s_in_plus, marginals.s_out_plus))
        if w_minus > 0:
            channels.append(_Channel(-1.0, w_minus, marginals.s_in_minus, marginals.s_out_minus))
    else:
        norm = w_plus + w_minus
        channels = []
    if norm <= 0:
        raise GraphError("Modularity is undefined on a graph without edges")
    return norm, channels


def expected_weight(marginals: NodeMarginals, model: NullModel, i: int, j: int):
    """
    Null-model expected weight between i and j.

    :return: a float for the configuration models, a (p_plus, p_minus) pair for the
             signed model where an empty sign channel contributes 0.
    """
    if model is NullModel.PRECOMPUTED:
        raise ModelCompatibilityError("The precomputed model has no null term")
    if model is NullModel.CONFIGURATION_BINARY:
        links = int(marginals.k_in.sum())
        if links == 0:
            raise GraphError("Expected weight undefined for L = 0")
        return float(marginals.k_in[i]) * float(marginals.k_out[j]) / links
    if model is NullModel.CONFIGURATION_WEIGHTED:
        w_tot = float(marginals.s_in.sum())
        if w_tot == 0:
            raise GraphError("Expected weight undefined for w_tot = 0")
        return marginals.s_in[i] * marginals.s_out[j] / w_tot
    w_plus = float(marginals.s_in_plus.sum())
    w_minus = float(marginals.s_in_minus.sum())
    p_plus = marginals.s_in_plus[i] * marginals.s_out_plus[j] / w_plus if w_plus > 0 else 0.0
    p_minus = marginals.s_in_minus[i] * marginals.s_out_minus[j] / w_minus if w_minus > 0 else 0.0
    return float(p_plus), float(p_minus)


def modularity(g: Graph, p, model: NullModel) -> ModularityScore:
    """
    Q = (1/D) sum over same-community ordered pairs (i, j), diagonal included, of
    w_ij - p_ij. The signed model combines the positive and negative channel
    modularities weighted by their share of the total absolute weight.
    """
    p = canonicalize(p)
    if p.n != g.n:
        raise GraphError("Partition has {} entries for a graph with {} nodes".format(p.n, g.n))
    norm, channels = _channels(g, model)
    labels = p.assignment
    weights = g.weights.tocoo()
    same = labels[weights.row] == labels[weights.col]
    internal = math.fsum(weights.data[same])
    null = 0.0
    for channel in channels:
        t_in = np.bincount(labels, weights=channel.s_in, minlength=p.k)
        t_out = np.bincount(labels, weights=channel.s_out, minlength=p.k)
        null += channel.sign * math.fsum(t_in * t_out) / channel.total
    return ModularityScore((internal - null) / norm, model, g.fingerprint)


class MoveState:
    """
    Working state of one local-moving pass: community of every node and the
    per-community in/out strength sums of every null-model channel. Owned by a
    single optimizer run.
    """

    def __init__(self, g: Graph, model: NullModel, assignment=None):
        self.graph = g
        self.model = model
        self.fingerprint = g.fingerprint
        self.norm, channels = _channels(g, model)
        n = g.n
        self._factors = [channel.sign / channel.total for channel in channels]
        self._s_in = [channel.s_in.tolist() for channel in channels]
        self._s_out = [channel.s_out.tolist() for channel in channels]

        # w_uj + w_ju without self-loops, the only edge term a move changes
        both = (g.weights + g.weights.T).tocsr()
        both = (both - sparse.diags(both.diagonal())).tocsr()
        both.eliminate_zeros()
        indptr, indices, data = both.indptr.tolist(), both.indices.tolist(), both.data.tolist()
        self._neighbors = [(indices[indptr[u]:indptr[u + 1]], data[indptr[u]:indptr[u + 1]]) for u in range(n)]

        if assignment is None:
            community = list(range(n))
        else:
            community = canonicalize(assignment).tolist()
            if len(community) != n:
                raise GraphError("Assignment has {} entries for a graph with {} nodes".format(len(community), n))
        self.community = community
        self.size = [0] * n
        self._t_in = [[0.0] * n for _ in channels]
        self._t_out = [[0.0] * n for _ in channels]
        for u, c in enumerate(community):
            self.size[c] += 1
            for ch in range(len(channels)):
                self._t_in[ch][c] += self._s_in[ch][u]
                self._t_out[ch][c] += self._s_out[ch][u]
        self._empty = [c for c in range(n) if self.size[c] == 0]
        heapq.heapify(self._empty)

    @property
    def n(self) -> int:
        return self.graph.n

    def neighbor_weights(self, u: int) -> dict:
        community = self.community
        weights = {}
        for v, w in zip(*self._neighbors[u]):
            c = community[v]
            weights[c] = weights.get(c, 0.0) + w
        return weights

    def insertion_gain(self, u: int, c: int, edge_weight: float, contains_u: bool) -> float:
        """
        Unnormalized gain of putting the isolated node u into community c, where
        `edge_weight` is the weight between u and c in both directions. When c is
        u's own community its totals are taken without u.
        """
        gain = edge_weight
        for ch, factor in enumerate(self._factors):
            s_in = self._s_in[ch][u]
            s_out = self._s_out[ch][u]
            t_in = self._t_in[ch][c]
            t_out = self._t_out[ch][c]
            if contains_u:
                t_in -= s_in
                t_out -= s_out
            gain -= factor * (s_in * t_out + s_out * t_in)
        return gain

    def empty_community(self) -> Optional[int]:
        return self._empty[0] if self._empty else None

    def move(self, u: int, target: int):
        source = self.community[u]
        if source == target:
            return
        for ch in range(len(self._factors)):
            self._t_in[ch][source] -= self._s_in[ch][u]
            self._t_out[ch][source] -= self._s_out[ch][u]
            self._t_in[ch][target] += self._s_in[ch][u]
            self._t_out[ch][target] += self._s_out[ch][u]
        if self.size[target] == 0:
            self._empty.remove(target)
            heapq.heapify(self._empty)
        self.size[source] -= 1
        self.size[target] += 1
        self.community[u] = target
        if self.size[source] == 0:
            heapq.heappush(self._empty, source)


def delta_modularity_move(state: MoveState, node: int, source: int, target: int,
                          fingerprint: Optional[str] = None) -> float:
    """
    Q(after) - Q(before) for moving `node` from `source` to `target`, in
    O(degree(node)).

    :param fingerprint: fingerprint of the graph the caller believes the state
                        belongs to; a mismatch raises StaleStateError.
    """
    if fingerprint is not None and fingerprint != state.fingerprint:
        raise StaleStateError("Move state was built for graph {}, not {}".format(
            state.fingerprint[:12], fingerprint[:12]))
    if state.community[node] != source:
        raise StaleStateError("Node {} is in community {}, not {}".format(node, state.community[node], source))
    if not 0 <= target < state.n:
        raise GraphError("Community id {} outside 0..{}".format(target, state.n - 1))
    if source == target:
        return 0.0
    weights = state.neighbor_weights(node)
    leave = state.insertion_gain(node, source, weights.get(source, 0.0), contains_u=True)
    join = state.insertion_gain(node, target, weights.get(target, 0.0), contains_u=False)
    return (join - leave) / state.norm


def epsilon_optimal_set(ens, epsilon: float) -> list[int]:
    """Indices of ensemble members within `epsilon` of the best modularity, ascending."""
    if epsilon < 0 or math.isnan(epsilon):
        raise EnsembleError("epsilon must be >= 0, got {}".format(epsilon))
    q = ens.q_values
    if len(q) == 0:
        raise EnsembleError("Empty ensemble")
    q_max = q.max()
    return [i for i, value in enumerate(q.tolist()) if q_max - value <= epsilon]
