import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from starcd.errors import BenchmarkError
from starcd.graph import Graph
from starcd.louvain import split_seed
from starcd.partition import Partition

logger = logging.getLogger("starcd")

MAX_INSTANCE_RETRIES = 10
SIZE_RESAMPLES = 1000


class WeightMode(Enum):
    UNIT = "unit"
    NOISY_UNIT = "noisy_unit"


@dataclass(frozen=True)
class LfrParams:
    n: int = 1000
    avg_deg: float = 20.0
    max_deg: int = 50
    gamma: float = 2.0
    beta: float = 3.0
    cmin: int = 10
    cmax: int = 50
    mu: float = 0.1
    weight_mode: WeightMode = WeightMode.NOISY_UNIT
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.cmin <= self.cmax <= self.n:
            raise BenchmarkError("Need 1 <= cmin <= cmax <= n, got cmin={} cmax={} n={}".format(
                self.cmin, self.cmax, self.n))
        if not 0 < self.avg_deg <= self.max_deg:
            raise BenchmarkError("Need 0 < avg_deg <= max_deg, got {} and {}".format(self.avg_deg, self.max_deg))
        if self.max_deg >= self.n:
            raise BenchmarkError("max_deg must be below n")
        if not 0.0 <= self.mu <= 1.0:
            raise BenchmarkError("mu must lie in [0, 1], got {}".format(self.mu))

    def echo(self) -> dict:
        params = asdict(self)
        params["weight_mode"] = self.weight_mode.value
        return params


@dataclass
class BenchmarkInstance:
    graph: Graph
    truth: Partition
    params_echo: dict
    instance_seed: int

    @property
    def name(self) -> str:
        if "mu" in self.params_echo:
            return "lfr_mu{:g}_seed{}".format(self.params_echo["mu"], self.instance_seed)
        return "planted_k{}_seed{}".format(self.params_echo.get("k"), self.instance_seed)


def generate_planted(k: int, size: int, p_in: float, p_out: float, seed: int,
                     bridges: bool = False) -> BenchmarkInstance:
    """
    Planted-partition graph: k blocks of `size` nodes, each intra-block pair linked
    with probability p_in, each inter-block pair with p_out, unit weights.

    :param bridges: also link the last node of every block to the first node of
                    the next one.
    """
    if k < 1 or size < 1:
        raise BenchmarkError("Need k >= 1 and size >= 1")
    if not 0.0 <= p_out < p_in <= 1.0:
        raise BenchmarkError("Need 0 <= p_out < p_in <= 1, got p_in={} p_out={}".format(p_in, p_out))
    rng = np.random.default_rng(seed)
    n = k * size
    block = np.arange(n) // size
    rows, cols = np.triu_indices(n, 1)
    prob = np.where(block[rows] == block[cols], p_in, p_out)
    keep = rng.random(len(rows)) < prob
    edges = set(zip(rows[keep].tolist(), cols[keep].tolist()))
    if bridges:
        for b in range(1, k):
            edges.add((b * size - 1, b * size))
    graph = Graph.from_edges(n, [(u, v, 1.0) for u, v in sorted(edges)], directed=False)
    echo = {"k": k, "size": size, "p_in": p_in, "p_out": p_out, "bridges": bridges}
    return BenchmarkInstance(graph, Partition(block), echo, seed)


def _power_integral(a: float, b: float, exponent: float) -> float:
    if abs(exponent + 1.0) < 1e-12:
        return math.log(b / a)
    return (b ** (exponent + 1.0) - a ** (exponent + 1.0)) / (exponent + 1.0)


def _power_law_mean(xmin: float, xmax: float, gamma: float) -> float:
    return _power_integral(xmin, xmax, 1.0 - gamma) / _power_integral(xmin, xmax, -gamma)


def _sample_power_law(rng: np.random.Generator, size: int, xmin: float, xmax: float, gamma: float) -> np.ndarray:
    u = rng.random(size)
    if abs(gamma - 1.0) < 1e-12:
        return xmin * (xmax / xmin) ** u
    a = xmin ** (1.0 - gamma)
    b = xmax ** (1.0 - gamma)
    return (a + u * (b - a)) ** (1.0 / (1.0 - gamma))


def _degree_sequence(p: LfrParams, rng: np.random.Generator) -> np.ndarray:
    """Truncated power-law degrees whose total is round(avg_deg * n), made even."""
    if p.avg_deg >= p.max_deg:
        degrees = np.full(p.n, p.max_deg, dtype=np.int64)
        kmin = p.max_deg
    else:
        if _power_law_mean(1.0, p.max_deg, p.gamma) > p.avg_deg:
            raise BenchmarkError("avg_deg {} is below the smallest mean reachable with gamma={} and max_deg={}"
                                 .format(p.avg_deg, p.gamma, p.max_deg))
        xmin = brentq(lambda x: _power_law_mean(x, p.max_deg, p.gamma) - p.avg_deg, 1.0,
                       p.max_deg * (1.0 - 1e-9))
        degrees = np.rint(_sample_power_law(rng, p.n, xmin, p.max_deg, p.gamma)).astype(np.int64)
        kmin = max(1, int(math.floor(xmin)))
        degrees = np.clip(degrees, kmin, p.max_deg)
    target = int(round(p.avg_deg * p.n))
    deficit = target - int(degrees.sum())
    while deficit != 0:
        step = 1 if deficit > 0 else -1
        movable = np.flatnonzero(degrees < p.max_deg) if step > 0 else np.flatnonzero(degrees > kmin)
        if len(movable) == 0:
            raise BenchmarkError("Cannot reach average degree {} within [{}, {}]".format(p.avg_deg, kmin, p.max_deg))
        chosen = rng.choice(movable, size=min(abs(deficit), len(movable)), replace=False)
        degrees[chosen] += step
        deficit -= step * len(chosen)
    if degrees.sum() % 2:
        movable = np.flatnonzero(degrees < p.max_deg)
        if len(movable):
            degrees[rng.choice(movable)] += 1
        else:
            degrees[rng.choice(np.flatnonzero(degrees > 1))] -= 1
    return degrees


def _community_sizes(p: LfrParams, rng: np.random.Generator) -> np.ndarray:
    """Truncated power-law community sizes in [cmin, cmax] summing to n."""
    sizes = []
    total = 0
    while total < p.n:
        size = int(math.floor(_sample_power_law(rng, 1, p.cmin, p.cmax + 1, p.beta)[0]))
        size = min(max(size, p.cmin), p.cmax)
        remaining = p.n - total
        if size <= remaining:
            sizes.append(size)
            total += size
        elif remaining >= p.cmin:
            sizes.append(remaining)
            total += remaining
        else:
            sizes = np.array(sizes, dtype=np.int64)
            room = p.cmax - sizes
            if room.sum() < remaining:
                raise _InstanceFailed("community sizes cannot absorb {} leftover nodes".format(remaining))
            for _ in range(remaining):
                sizes[rng.choice(np.flatnonzero(room > 0))] += 1
                room = p.cmax - sizes
            return sizes
    return np.array(sizes, dtype=np.int64)


class _InstanceFailed(Exception):
    pass


def _place_nodes(internal: np.ndarray, sizes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Put every node into a community larger than its internal degree. Nodes go in
    decreasing internal degree so every later node fits wherever an earlier one did.
    """
    free = sizes.copy()
    membership = np.empty(len(internal), dtype=np.int64)
    shuffled = rng.permutation(len(internal))
    order = shuffled[np.argsort(-internal[shuffled], kind="stable")]
    for u in order.tolist():
        eligible = np.flatnonzero((free > 0) & (sizes > internal[u]))
        if len(eligible) == 0:
            raise _InstanceFailed("no community can host internal degree {}".format(internal[u]))
        c = rng.choice(eligible, p=free[eligible] / free[eligible].sum())
        membership[u] = c
        free[c] -= 1
    return membership


def _fix_parity(degrees: np.ndarray, internal: np.ndarray, membership: np.ndarray, sizes: np.ndarray,
                max_deg: int, rng: np.random.Generator):
    """Make every community's internal stub count and the external stub count even."""
    for c in range(len(sizes)):
        members = np.flatnonzero(membership == c)
        if internal[members].sum() % 2 == 0:
            continue
        external = members[(degrees[members] > internal[members]) & (internal[members] < sizes[c] - 1)]
        if len(external):
            internal[rng.choice(external)] += 1
            continue
        growable = members[(internal[members] < sizes[c] - 1) & (degrees[members] < max_deg)]
        if len(growable):
            u = rng.choice(growable)
            internal[u] += 1
            degrees[u] += 1
            continue
        u = rng.choice(members[internal[members] > 0])
        internal[u] -= 1
        degrees[u] -= 1
    if (degrees - internal).sum() % 2:
        external = np.flatnonzero((degrees > internal) & (degrees < max_deg))
        if len(external) == 0:
            raise _InstanceFailed("cannot even out external stubs")
        degrees[rng.choice(external)] += 1


def _pair_stubs(stubs: np.ndarray, rng: np.random.Generator, allowed, taken: set) -> list[tuple[int, int]]:
    """
    Random stub matching followed by rewiring: a self-loop, multi-edge or
    forbidden pair (u, v) is swapped against an accepted edge (a, b) into
    (u, a) and (v, b) whenever both new edges are admissible.
    """
    pairs = rng.permutation(stubs).reshape(-1, 2).tolist()
    edges = []
    bad = []
    for u, v in pairs:
        key = (u, v) if u < v else (v, u)
        if u != v and allowed(u, v) and key not in taken:
            taken.add(key)
            edges.append(key)
        else:
            bad.append((u, v))
    budget = 200 * len(bad) + 1000
    while bad:
        budget -= 1
        if budget < 0 or not edges:
            raise _InstanceFailed("stub rewiring did not resolve {} pairs".format(len(bad)))
        u, v = bad.pop()
        index = int(rng.integers(len(edges)))
        a, b = edges[index]
        if rng.random() < 0.5:
            a, b = b, a
        first = (u, a) if u < a else (a, u)
        second = (v, b) if v < b else (b, v)
        if (u != a and v != b and first != second and allowed(u, a) and allowed(v, b)
                and first not in taken and second not in taken):
            taken.discard(edges[index])
            edges[index] = first
            edges.append(second)
            taken.add(first)
            taken.add(second)
        else:
            bad.insert(0, (u, v))
    return edges


def _sizes_fit(internal: np.ndarray, sizes: np.ndarray) -> bool:
    """True when every node can get a seat in a community larger than its internal degree."""
    for threshold in np.unique(internal).tolist():
        if np.count_nonzero(internal >= threshold) > sizes[sizes > threshold].sum():
            return False
    return True


def _lfr_attempt(p: LfrParams, rng: np.random.Generator) -> tuple[list, np.ndarray]:
    degrees = _degree_sequence(p, rng)
    internal = np.rint((1.0 - p.mu) * degrees).astype(np.int64)
    # a node needs internal degree + 1 members in its community
    internal = np.minimum(internal, p.cmax - 1)
    if p.mu == 0.0:
        degrees = internal.copy()
    for _ in range(SIZE_RESAMPLES):
        try:
            sizes = _community_sizes(p, rng)
        except _InstanceFailed:
            continue
        if _sizes_fit(internal, sizes):
            break
    else:
        raise _InstanceFailed("no community-size sample could host the internal degrees")
    membership = _place_nodes(internal, sizes, rng)
    _fix_parity(degrees, internal, membership, sizes, p.max_deg, rng)

    taken = set()
    edges = []
    for c in range(len(sizes)):
        members = np.flatnonzero(membership == c)
        stubs = np.repeat(members, internal[members])
        if len(stubs):
            edges.extend(_pair_stubs(stubs, rng, lambda u, v: True, taken))
    stubs = np.repeat(np.arange(p.n), degrees - internal)
    if len(stubs):
        edges.extend(_pair_stubs(stubs, rng, lambda u, v: membership[u] != membership[v], taken))
    return edges, membership


def generate_lfr(p: LfrParams) -> BenchmarkInstance:
    """
    LFR-style benchmark: power-law degrees and community sizes, each node keeping
    a fraction 1 - mu of its links inside its own community. Undirected, with
    weights set by p.weight_mode.
    """
    if (1.0 - p.mu) * p.max_deg > p.cmax:
        raise BenchmarkError("Infeasible: internal degree {:.1f} of the largest hub exceeds cmax={}".format(
            (1.0 - p.mu) * p.max_deg, p.cmax))
    for attempt in range(MAX_INSTANCE_RETRIES):
        rng = np.random.default_rng(p.seed if attempt == 0 else split_seed(p.seed, attempt))
        try:
            edges, membership = _lfr_attempt(p, rng)
        except _InstanceFailed as e:
            logger.debug("LFR attempt %d for seed %d failed: %s", attempt, p.seed, e)
            continue
        if p.weight_mode is WeightMode.NOISY_UNIT:
            weights = rng.uniform(0.8, 1.2, size=len(edges))
        else:
            weights = np.ones(len(edges))
        edges.sort()
        graph = Graph.from_edges(p.n, [(u, v, w) for (u, v), w in zip(edges, weights.tolist())], directed=False)
        logger.debug("LFR instance mu=%g seed=%d: %d edges, %d communities", p.mu, p.seed, len(edges),
                     int(membership.max()) + 1)
        return BenchmarkInstance(graph, Partition(membership), p.echo(), p.seed)
    raise BenchmarkError("LFR generation failed after {} attempts for seed {}".format(MAX_INSTANCE_RETRIES, p.seed))


def generate_factor_returns(block_sizes: Sequence[int], intra_loading: float, market_loading: float,
                            t_obs: int, seed: int) -> np.ndarray:
    """
    Returns of a one-market, one-factor-per-block model:
    r_it = market_loading * m_t + intra_loading * f_block(i),t + e_it, every
    factor and residual an independent standard Gaussian.

    :return: assets x t_obs matrix.
    """
    block_sizes = [int(s) for s in block_sizes]
    if not block_sizes or min(block_sizes) < 1:
        raise BenchmarkError("Need at least one non-empty block")
    for name, value in (("intra_loading", intra_loading), ("market_loading", market_loading)):
        if not 0.0 <= value < 1.0:
            raise BenchmarkError("{} must lie in [0, 1), got {}".format(name, value))
    assets = sum(block_sizes)
    if t_obs <= assets:
        raise BenchmarkError("Need more observations ({}) than assets ({})".format(t_obs, assets))
    rng = np.random.default_rng(seed)
    market = rng.standard_normal(t_obs)
    factors = rng.standard_normal((len(block_sizes), t_obs))
    noise = rng.standard_normal((assets, t_obs))
    block = np.repeat(np.arange(len(block_sizes)), block_sizes)
    return market_loading * market[None, :] + intra_loading * factors[block] + noise


def factor_truth(block_sizes: Sequence[int]) -> Partition:
    return Partition(np.repeat(np.arange(len(block_sizes)), [int(s) for s in block_sizes]))


def lfr_instance_seed(base_seed: int, mu: float, instance: int) -> int:
    """Seed of LFR instance `instance` at mixing `mu`; independent of the rest of a sweep grid."""
    return split_seed(split_seed(base_seed, int(round(mu * 1000))), instance)
