import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from starcd.errors import ConfigError, EnsembleError, GraphError
from starcd.graph import Graph, aggregate_by_partition
from starcd.modularity import ModularityScore, MoveState, NullModel, check_compatible, modularity
from starcd.partition import Partition, canonicalize
from starcd.runner import ParallelRunner

logger = logging.getLogger("starcd")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
# moves whose normalized gain does not clear this are float noise, not improvements
MOVE_TOLERANCE = 1e-13


def split_seed(base: int, index: int) -> int:
    """
    Derive the seed of ensemble member `index` from `base`: the splitmix64
    finalizer applied to base + (index + 1) * 0x9E3779B97F4A7C15 (mod 2**64).
    Fixed across versions so ensembles replay on every machine.
    """
    z = (int(base) + (int(index) + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class NodeOrder(Enum):
    SHUFFLED = "shuffled"
    FIXED = "fixed"


@dataclass(frozen=True)
class LouvainParams:
    seed: int = 0
    min_gain: float = 1e-7
    max_levels: int = 64
    node_order: NodeOrder = NodeOrder.SHUFFLED

    def __post_init__(self):
        if self.min_gain < 0:
            raise ConfigError("min_gain must be >= 0, got {}".format(self.min_gain))
        if self.max_levels < 1:
            raise ConfigError("max_levels must be >= 1, got {}".format(self.max_levels))
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be an unsigned 64-bit integer, got {}".format(self.seed))


def _local_moving(state: MoveState, rng: np.random.Generator, params: LouvainParams) -> int:
    """Sweep over the nodes until a sweep gains less than min_gain. Returns the number of moves."""
    n = state.n
    moves = 0
    while True:
        if params.node_order is NodeOrder.SHUFFLED:
            order = rng.permutation(n).tolist()
        else:
            order = range(n)
        sweep_gain = 0.0
        sweep_moves = 0
        for u in order:
            weights = state.neighbor_weights(u)
            if not weights:
                continue
            source = state.community[u]
            stay = state.insertion_gain(u, source, weights.get(source, 0.0), contains_u=True)
            best, best_gain = source, stay
            for c in sorted(weights):
                if c == source:
                    continue
                gain = state.insertion_gain(u, c, weights[c], contains_u=False)
                if gain > best_gain:
                    best, best_gain = c, gain
            if state.size[source] > 1 and 0.0 > best_gain:
                best, best_gain = state.empty_community(), 0.0
            delta = (best_gain - stay) / state.norm
            if best != source and delta > MOVE_TOLERANCE:
                state.move(u, best)
                sweep_gain += delta
                sweep_moves += 1
        moves += sweep_moves
        logger.debug("Sweep moved %d nodes, gain %.3g", sweep_moves, sweep_gain)
        if sweep_moves == 0 or sweep_gain < params.min_gain:
            return moves


def louvain_once(g: Graph, model: NullModel, params: LouvainParams,
                 trace: Optional[list] = None) -> tuple[Partition, ModularityScore]:
    """
    One seeded Louvain run: local moving on the current level, aggregation of the
    resulting communities, repeated until a level changes nothing.

    :param trace: optional list receiving the modularity of the flattened
                  partition after every level.
    :return: the flat partition of the original nodes and its modularity.
    """
    check_compatible(g, model)
    if g.weights.nnz == 0:
        raise GraphError("Cannot optimize modularity on a graph without edges")
    rng = np.random.default_rng(params.seed)
    flat = np.arange(g.n)
    level_graph = g
    for level in range(params.max_levels):
        state = MoveState(level_graph, model)
        moves = _local_moving(state, rng, params)
        level_partition = canonicalize(state.community)
        flat = level_partition.assignment[flat]
        logger.debug("Level %d: %d nodes -> %d communities after %d moves",
                     level, level_graph.n, level_partition.k, moves)
        if trace is not None:
            trace.append(modularity(g, flat, model).q)
        if level_partition.k == level_graph.n:
            break
        level_graph = aggregate_by_partition(level_graph, level_partition)
    partition = canonicalize(flat)
    return partition, modularity(g, partition, model)


class Ensemble:
    """T Louvain outcomes on one graph under one null model, ordered by member index."""

    def __init__(self, graph_fingerprint: str, model: NullModel,
                 members: Sequence[tuple[Partition, ModularityScore]], seeds: Sequence[int]):
        members = [(canonicalize(p), score) for p, score in members]
        if not members:
            raise EnsembleError("An ensemble needs at least one member")
        if len(members) != len(seeds):
            raise EnsembleError("Got {} members but {} seeds".format(len(members), len(seeds)))
        for p, score in members:
            if score.model is not model:
                raise EnsembleError("Member scored under {} in a {} ensemble".format(score.model.value, model.value))
            if score.graph_fingerprint != graph_fingerprint:
                raise EnsembleError("Member scored on a different graph")
            if p.n != members[0][0].n:
                raise EnsembleError("Members partition different node counts")
        self.graph_fingerprint = graph_fingerprint
        self.model = model
        self.members = members
        self.seeds = [int(s) for s in seeds]

    @property
    def partitions(self) -> list[Partition]:
        return [p for p, _ in self.members]

    @property
    def scores(self) -> list[ModularityScore]:
        return [score for _, score in self.members]

    @property
    def q_values(self) -> np.ndarray:
        return np.array([score.q for _, score in self.members])

    def validate(self, g: Graph, tolerance: float = 1e-9):
        if g.fingerprint != self.graph_fingerprint:
            raise EnsembleError("Ensemble belongs to graph {}, not {}".format(
                self.graph_fingerprint[:12], g.fingerprint[:12]))
        for index, (p, score) in enumerate(self.members):
            q = modularity(g, p, self.model).q
            if abs(q - score.q) > tolerance:
                raise EnsembleError("Member {} stores Q={:.12f} but evaluates to {:.12f}".format(index, score.q, q))

    def __len__(self):
        return len(self.members)

    def __repr__(self):
        return "Ensemble(t={}, model={})".format(len(self.members), self.model.value)


def _louvain_member(g: Graph, model: NullModel, params: LouvainParams):
    return louvain_once(g, model, params)


def run_ensemble(g: Graph, model: NullModel, t: int, base_seed: int,
                 params: Optional[LouvainParams] = None, workers: int = 1) -> Ensemble:
    """Run `t` Louvain members, member i seeded with split_seed(base_seed, i)."""
    if t < 1:
        raise EnsembleError("Ensemble size must be >= 1, got {}".format(t))
    check_compatible(g, model)
    params = params or LouvainParams()
    seeds = [split_seed(base_seed, i) for i in range(t)]
    logger.info("Running %d Louvain members (%s model) on %r", t, model.value, g)
    runner = ParallelRunner(workers)
    members = runner.map(_louvain_member, [(g, model, dataclasses.replace(params, seed=s)) for s in seeds])
    ensemble = Ensemble(g.fingerprint, model, members, seeds)
    logger.info("Ensemble done: Q in [%.6f, %.6f], %d distinct partitions", ensemble.q_values.min(),
                ensemble.q_values.max(), len({p.key for p in ensemble.partitions}))
    return ensemble
