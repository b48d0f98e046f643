import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from starcd.errors import ConfigError, ConsensusError, EnsembleError
from starcd.graph import Graph, SignProfile, from_dense_matrix
from starcd.louvain import Ensemble, LouvainParams, run_ensemble, split_seed
from starcd.modularity import ModularityScore, NullModel, check_compatible, modularity
from starcd.partition import AriMatrix, Partition, ari_matrix

logger = logging.getLogger("starcd")


class SelectionMethod(Enum):
    STAR = "star"
    CONSENSUS = "consensus"
    MAX_MOD = "max_mod"
    MOST_FREQUENT = "most_frequent"


def parse_methods(names: Sequence[str]) -> list[SelectionMethod]:
    methods = []
    for name in names:
        try:
            method = SelectionMethod(name.strip().lower())
        except ValueError:
            raise EnsembleError("Unknown selection method {!r}, use one of: {}".format(
                name, ", ".join(m.value for m in SelectionMethod)))
        if method not in methods:
            methods.append(method)
    return methods


@dataclass
class SelectionResult:
    method: SelectionMethod
    partition: Partition
    q: ModularityScore
    source_index: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConsensusParams:
    tau: float = 0.5
    runs_per_iter: Optional[int] = None
    max_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1], got {}".format(self.tau))
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1, got {}".format(self.max_iters))
        if self.runs_per_iter is not None and self.runs_per_iter < 1:
            raise ConfigError("runs_per_iter must be >= 1, got {}".format(self.runs_per_iter))


def _member_result(method: SelectionMethod, ens: Ensemble, index: int, diagnostics: dict) -> SelectionResult:
    partition, score = ens.members[index]
    return SelectionResult(method, partition, score, index, diagnostics)


def star_select(ens: Ensemble, m: Optional[AriMatrix] = None) -> SelectionResult:
    """
    Pick the member with maximal strength in the ARI similarity network; ties go
    to the higher modularity, then to the lower index.
    """
    if len(ens) < 2:
        raise EnsembleError("STAR needs at least two ensemble members")
    if m is None:
        m = ari_matrix(ens)
    if m.t != len(ens):
        raise EnsembleError("ARI matrix is {0}x{0} but the ensemble has {1} members".format(m.t, len(ens)))
    strength = m.strength().tolist()
    q = ens.q_values.tolist()
    winner = max(range(len(ens)), key=lambda i: (strength[i], q[i], -i))
    logger.debug("STAR picked member %d with strength %.6f", winner, strength[winner])
    return _member_result(SelectionMethod.STAR, ens, winner, {
        "strength": strength,
        "normalized_strength": m.normalized_strength().tolist(),
    })


def max_modularity_select(ens: Ensemble) -> SelectionResult:
    if len(ens) == 0:
        raise EnsembleError("Empty ensemble")
    q = ens.q_values.tolist()
    winner = max(range(len(ens)), key=lambda i: (q[i], -i))
    return _member_result(SelectionMethod.MAX_MOD, ens, winner, {})


def most_frequent_select(ens: Ensemble) -> SelectionResult:
    if len(ens) == 0:
        raise EnsembleError("Empty ensemble")
    keys = [p.key for p in ens.partitions]
    counts = Counter(keys)
    q = ens.q_values.tolist()
    winner = max(range(len(ens)), key=lambda i: (counts[keys[i]], q[i], -i))
    return _member_result(SelectionMethod.MOST_FREQUENT, ens, winner, {
        "multiplicity": counts[keys[winner]],
        "distinct": len(counts),
    })


def _co_assignment(partitions: Sequence[Partition]) -> np.ndarray:
    if not partitions:
        raise EnsembleError("Empty ensemble")
    n = partitions[0].n
    counts = np.zeros((n, n), dtype=np.int64)
    for p in partitions:
        labels = p.assignment
        counts += labels[:, None] == labels[None, :]
    return counts / len(partitions)


def consensus_matrix(ens: Ensemble) -> np.ndarray:
    """D_ij = fraction of members placing i and j in the same community."""
    if len(ens) == 0:
        raise EnsembleError("Empty ensemble")
    return _co_assignment(ens.partitions)


def _consensus_graph(d: np.ndarray, tau: float) -> Graph:
    w = d.copy()
    np.fill_diagonal(w, 0.0)
    strongest = w.argmax(axis=1)
    w[w < tau] = 0.0
    # a row emptied by the threshold keeps its strongest entry
    for i in np.flatnonzero(~w.any(axis=1)):
        j = strongest[i]
        if d[i, j] > 0 and i != j:
            w[i, j] = w[j, i] = d[i, j]
    return from_dense_matrix(w, directed=False)


def consensus_cluster(g: Graph, model: NullModel, params: ConsensusParams,
                      ensemble: Optional[Ensemble] = None, louvain_params: Optional[LouvainParams] = None,
                      workers: int = 1) -> SelectionResult:
    """
    Consensus clustering: run an ensemble, threshold its co-assignment matrix at
    tau, cluster the thresholded matrix as a weighted graph and repeat until all
    runs of an iteration agree.

    :param ensemble: when given, used as the first iteration instead of fresh runs.
    :return: the consensus partition with Q evaluated on `g` under `model`.
    """
    if g.sign_profile is SignProfile.SIGNED:
        raise ConsensusError("consensus requires nonnegative weights")
    check_compatible(g, model)
    runs = params.runs_per_iter or (len(ensemble) if ensemble is not None else None)
    if runs is None:
        raise ConsensusError("runs_per_iter is required when no ensemble is supplied")
    if ensemble is not None and ensemble.graph_fingerprint != g.fingerprint:
        raise EnsembleError("Supplied ensemble belongs to a different graph")

    current, current_model = g, model
    partitions = []
    converged = False
    iteration = 0
    for iteration in range(1, params.max_iters + 1):
        if iteration == 1 and ensemble is not None:
            partitions = ensemble.partitions
        else:
            round_ensemble = run_ensemble(current, current_model, runs, split_seed(params.seed, iteration),
                                          louvain_params, workers)
            partitions = round_ensemble.partitions
        distinct = len({p.key for p in partitions})
        logger.debug("Consensus iteration %d: %d distinct partitions over %d runs", iteration, distinct,
                     len(partitions))
        if distinct == 1:
            converged = True
            break
        if iteration == params.max_iters:
            break
        current = _consensus_graph(_co_assignment(partitions), params.tau)
        current_model = NullModel.CONFIGURATION_WEIGHTED

    scores = [modularity(g, p, model) for p in partitions]
    best = max(range(len(partitions)), key=lambda i: (scores[i].q, -i))
    if not converged:
        logger.warning("Consensus did not converge within %d iterations, returning the best-Q partition "
                       "of the last iteration", params.max_iters)
    return SelectionResult(SelectionMethod.CONSENSUS, partitions[best], scores[best], None, {
        "iterations": iteration,
        "converged": converged,
        "distinct_final": len({p.key for p in partitions}),
    })


_ensemble_selector_table = {
    SelectionMethod.STAR: star_select,
    SelectionMethod.MAX_MOD: max_modularity_select,
    SelectionMethod.MOST_FREQUENT: most_frequent_select,
}


def select(method: SelectionMethod, ens: Ensemble, g: Optional[Graph] = None,
           consensus_params: Optional[ConsensusParams] = None, reuse_ensemble: bool = False,
           louvain_params: Optional[LouvainParams] = None, workers: int = 1) -> SelectionResult:
    if method is SelectionMethod.CONSENSUS:
        if g is None:
            raise ConsensusError("Consensus clustering needs the graph, not only the ensemble")
        params = consensus_params or ConsensusParams(runs_per_iter=len(ens))
        if params.runs_per_iter is None:
            params = ConsensusParams(params.tau, len(ens), params.max_iters, params.seed)
        return consensus_cluster(g, ens.model, params, ens if reuse_ensemble else None, louvain_params, workers)
    return _ensemble_selector_table[method](ens)
