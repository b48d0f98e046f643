import dataclasses
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from starcd.benchgen import LfrParams, generate_lfr, lfr_instance_seed
from starcd.config import StarConfig
from starcd.errors import ConfigError, ConsensusError, FormatError
from starcd.formats import atomic_write, save_ensemble, save_instance, save_selection
from starcd.graph import Graph, SignProfile
from starcd.louvain import Ensemble, LouvainParams, run_ensemble, split_seed
from starcd.modularity import NullModel, epsilon_optimal_set
from starcd.partition import Partition, ari
from starcd.runner import ParallelRunner
from starcd.selection import ConsensusParams, SelectionMethod, select

logger = logging.getLogger("starcd")

CSV_FORMAT_VERSION = 1
SWEEP_HEADER = "# starcd sweep v{}".format(CSV_FORMAT_VERSION)
CELL_HEADER = "# starcd sweep cell v{}".format(CSV_FORMAT_VERSION)
CELL_COLUMNS = ["mu", "instance", "instance_seed", "method", "t_runs", "ari_truth", "q", "communities",
                "converged"]
SWEEP_COLUMNS = ["mu", "method", "t_runs", "mean_ari_truth", "std_ari_truth", "mean_q", "std_q", "instances"]


@dataclass(frozen=True)
class SweepConfig:
    lfr: LfrParams = field(default_factory=LfrParams)
    mu_grid: tuple = tuple(round(0.1 * i, 1) for i in range(1, 10))
    instances_per_mu: int = 10
    t_runs: int = 50
    methods: tuple = tuple(SelectionMethod)
    base_seed: int = 0
    output_dir: str = "starcd-output"
    louvain: LouvainParams = field(default_factory=LouvainParams)
    consensus: ConsensusParams = field(default_factory=ConsensusParams)
    reuse_ensemble: bool = False
    keep_ensembles: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.mu_grid:
            raise ConfigError("mu_grid is empty")
        for mu in self.mu_grid:
            if not 0.0 <= mu <= 1.0:
                raise ConfigError("mu_grid value {} outside [0, 1]".format(mu))
        if self.instances_per_mu < 1:
            raise ConfigError("instances_per_mu must be >= 1, got {}".format(self.instances_per_mu))
        if self.t_runs < 2:
            raise ConfigError("t_runs must be >= 2, got {}".format(self.t_runs))
        if not self.methods:
            raise ConfigError("No selection methods requested")

    @classmethod
    def from_config(cls, cfg: StarConfig) -> "SweepConfig":
        return cls(cfg.lfr, tuple(cfg.mu_grid), cfg.instances_per_mu, cfg.t_runs, tuple(cfg.methods),
                   cfg.base_seed, cfg.output_dir, cfg.louvain, cfg.consensus, cfg.reuse_ensemble,
                   cfg.keep_ensembles, cfg.workers)


@dataclass
class SweepRow:
    mu: float
    method: str
    t_runs: int
    mean_ari_truth: float
    std_ari_truth: float
    mean_q: float
    std_q: float
    instances: int


def cell_path(cfg: SweepConfig, mu: float, instance: int) -> Path:
    name = "instance_{:04d}_t{}.csv".format(instance, cfg.t_runs)
    return Path(cfg.output_dir) / "cells" / "mu{:g}".format(mu) / name


def _format_cell(rows: list[dict]) -> str:
    frame = pd.DataFrame(rows, columns=CELL_COLUMNS)
    buffer = io.StringIO()
    buffer.write(CELL_HEADER + "\n")
    frame.to_csv(buffer, index=False, float_format="%.6f", lineterminator="\n")
    return buffer.getvalue()


def _read_cell(path: Path) -> pd.DataFrame:
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != CELL_HEADER:
            raise FormatError("{} has header {!r}, expected {!r}".format(path, header, CELL_HEADER))
        return pd.read_csv(f, dtype={"instance_seed": str, "method": str})


def _cell_done(cfg: SweepConfig, mu: float, instance: int) -> bool:
    path = cell_path(cfg, mu, instance)
    if not path.exists():
        return False
    try:
        done = set(_read_cell(path)["method"])
    except (FormatError, pd.errors.ParserError, KeyError) as e:
        logger.warning("Recomputing unreadable cell %s: %s", path, e)
        return False
    return {m.value for m in cfg.methods} <= done


def run_cell(cfg: SweepConfig, mu: float, instance: int) -> str:
    """
    One (mu, instance) cell of a sweep: generate the instance, run the ensemble,
    apply every selector and write the per-method rows atomically. Returns the
    path of the cell file.
    """
    path = cell_path(cfg, mu, instance)
    instance_seed = lfr_instance_seed(cfg.base_seed, mu, instance)
    bench = generate_lfr(dataclasses.replace(cfg.lfr, mu=mu, seed=instance_seed))
    instance_dir = Path(cfg.output_dir) / "instances"
    save_instance(bench, instance_dir)

    model = NullModel.CONFIGURATION_WEIGHTED
    ens = run_ensemble(bench.graph, model, cfg.t_runs, split_seed(instance_seed, 1), cfg.louvain)
    if cfg.keep_ensembles:
        save_ensemble(ens, instance_dir / "{}_t{}".format(bench.name, cfg.t_runs))
    consensus = dataclasses.replace(cfg.consensus, seed=split_seed(instance_seed, 2),
                                    runs_per_iter=cfg.consensus.runs_per_iter or cfg.t_runs)
    rows = []
    for method in cfg.methods:
        result = select(method, ens, bench.graph, consensus, cfg.reuse_ensemble, cfg.louvain)
        rows.append({
            "mu": mu,
            "instance": instance,
            "instance_seed": str(instance_seed),
            "method": method.value,
            "t_runs": cfg.t_runs,
            "ari_truth": ari(result.partition, bench.truth),
            "q": result.q.q,
            "communities": result.partition.k,
            "converged": int(result.diagnostics.get("converged", True)),
        })
    atomic_write(path, _format_cell(rows))
    logger.info("Sweep cell mu=%g instance=%d done", mu, instance)
    return str(path)


def aggregate_cells(cells: pd.DataFrame, methods: Sequence[SelectionMethod]) -> list[SweepRow]:
    """Mean and population standard deviation per (mu, method, t_runs)."""
    order = {method.value: i for i, method in enumerate(methods)}
    grouped = cells.groupby(["mu", "method", "t_runs"], sort=False).agg(
        mean_ari_truth=("ari_truth", "mean"),
        std_ari_truth=("ari_truth", lambda s: s.std(ddof=0)),
        mean_q=("q", "mean"),
        std_q=("q", lambda s: s.std(ddof=0)),
        instances=("ari_truth", "size"),
    ).reset_index()
    grouped["order"] = grouped["method"].map(order)
    grouped = grouped.sort_values(["mu", "order", "t_runs"], kind="stable")
    return [SweepRow(float(r.mu), str(r.method), int(r.t_runs), float(r.mean_ari_truth),
                     float(r.std_ari_truth), float(r.mean_q), float(r.std_q), int(r.instances))
            for r in grouped.itertuples(index=False)]


def format_sweep(rows: Sequence[SweepRow]) -> str:
    frame = pd.DataFrame([dataclasses.asdict(row) for row in rows], columns=SWEEP_COLUMNS)
    buffer = io.StringIO()
    buffer.write(SWEEP_HEADER + "\n")
    frame.to_csv(buffer, index=False, float_format="%.6f", lineterminator="\n")
    return buffer.getvalue()


def run_sweep(cfg: SweepConfig) -> list[SweepRow]:
    """
    Benchmark sweep over the mu grid. Cells already on disk are reused, the rest
    run through the worker pool; results are assembled from the cell files in
    grid order.
    """
    cells = list(itertools.product(cfg.mu_grid, range(cfg.instances_per_mu)))
    pending = [(cfg, mu, i) for mu, i in cells if not _cell_done(cfg, mu, i)]
    logger.info("Sweep: %d cells, %d already done", len(cells), len(cells) - len(pending))
    ParallelRunner(cfg.workers).map(run_cell, pending)

    frames = [_read_cell(cell_path(cfg, mu, i)) for mu, i in cells]
    frame = pd.concat(frames, ignore_index=True)
    frame = frame[frame["method"].isin([m.value for m in cfg.methods])]
    nonconverged = int((frame["converged"] == 0).sum())
    if nonconverged:
        logger.warning("%d consensus selections did not converge", nonconverged)
    rows = aggregate_cells(frame, cfg.methods)
    out = Path(cfg.output_dir)
    atomic_write(out / "sweep_t{}.csv".format(cfg.t_runs), format_sweep(rows))
    atomic_write(out / "sweep_t{}_instances.csv".format(cfg.t_runs), _format_cell(frame.to_dict("records")))
    return rows


def sweep_nonconverged(cfg: SweepConfig) -> int:
    frame = pd.concat([_read_cell(cell_path(cfg, mu, i))
                       for mu, i in itertools.product(cfg.mu_grid, range(cfg.instances_per_mu))])
    return int((frame["converged"] == 0).sum())


def q_histogram(q_values: np.ndarray, bins: int = 20) -> pd.DataFrame:
    counts, edges = np.histogram(q_values, bins=bins)
    return pd.DataFrame({"q_low": edges[:-1], "q_high": edges[1:], "count": counts})


def load_sector_labels(path) -> dict:
    """Two-column `<node_label> <sector>` file, `#` comments."""
    frame = pd.read_csv(path, sep=r"\s+|,|\t", engine="python", header=None, names=["node", "sector"],
                        comment="#", dtype=str)
    if frame.isna().any().any():
        raise FormatError("Sector file {} has rows without a sector".format(path))
    return dict(zip(frame["node"], frame["sector"]))


def shannon_heterogeneity(counts: Sequence[int]) -> float:
    counts = np.asarray([c for c in counts if c > 0], dtype=float)
    if len(counts) == 0:
        return 0.0
    share = counts / counts.sum()
    return float(-(share * np.log(share)).sum())


def sector_composition(p: Partition, labels: Sequence[str], sectors: dict) -> list[dict]:
    """Per community: how many members fall into each sector, plus the Shannon entropy of that mix."""
    table = []
    for c, members in enumerate(p.communities()):
        mix = pd.Series([sectors.get(labels[u], "unknown") for u in members.tolist()]).value_counts()
        mix = mix.sort_index(kind="stable")
        table.append({
            "community": c,
            "size": int(len(members)),
            "sectors": {str(k): int(v) for k, v in mix.items()},
            "heterogeneity": shannon_heterogeneity(mix.tolist()),
        })
    return table


def select_methods(methods: Sequence[SelectionMethod], ens: Ensemble, g: Graph,
                   consensus_params: Optional[ConsensusParams] = None, reuse_ensemble: bool = False,
                   louvain_params: Optional[LouvainParams] = None,
                   workers: int = 1) -> tuple[dict, dict]:
    """
    Apply every method to `ens`. Consensus on a signed graph is skipped, not
    raised, so the other methods still run.

    :return: results by method name, and skip reasons by method name.
    """
    results = {}
    skipped = {}
    for method in methods:
        if method is SelectionMethod.CONSENSUS and g.sign_profile is SignProfile.SIGNED:
            skipped[method.value] = "consensus requires nonnegative weights"
            logger.warning("Skipping consensus: the graph carries negative weights")
            continue
        try:
            result = select(method, ens, g, consensus_params, reuse_ensemble, louvain_params, workers)
        except ConsensusError as e:
            skipped[method.value] = str(e)
            logger.warning("Skipping consensus: %s", e)
            continue
        results[method.value] = result
        logger.info("%s: Q=%.6f, %d communities", method.value, result.q.q, result.partition.k)
    return results, skipped


@dataclass
class PipelineReport:
    ensemble: Ensemble
    results: dict
    skipped: dict
    report: dict


def run_select_pipeline(g: Graph, model: NullModel, t_runs: int, methods: Sequence[SelectionMethod], seed: int,
                        output_dir, louvain_params: Optional[LouvainParams] = None,
                        consensus_params: Optional[ConsensusParams] = None, reuse_ensemble: bool = False,
                        workers: int = 1, epsilon: float = 0.01, histogram_bins: int = 20,
                        sectors: Optional[dict] = None) -> PipelineReport:
    """
    Ensemble, selection and diagnostics on one graph. Writes the ensemble, one
    partition plus sidecar per method, report.json and q_histogram.csv under
    output_dir. Consensus on a signed graph is skipped with the reason recorded.
    """
    if t_runs < 2:
        raise ConfigError("t_runs must be >= 2, got {}".format(t_runs))
    out = Path(output_dir)
    labels = g.labels()
    ens = run_ensemble(g, model, t_runs, seed, louvain_params, workers)
    save_ensemble(ens, out / "ensemble", labels)
    if consensus_params is None:
        # consensus draws from the first member index past the ensemble
        consensus_params = ConsensusParams(seed=split_seed(seed, t_runs))
    if consensus_params.runs_per_iter is None:
        consensus_params = dataclasses.replace(consensus_params, runs_per_iter=t_runs)

    results, skipped = select_methods(methods, ens, g, consensus_params, reuse_ensemble, louvain_params, workers)
    for result in results.values():
        save_selection(result, out / "selections", labels)

    report = _diagnostics(ens, results, skipped, epsilon, labels, sectors)
    atomic_write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    histogram = q_histogram(ens.q_values, histogram_bins)
    atomic_write(out / "q_histogram.csv", histogram.to_csv(index=False, float_format="%.6f", lineterminator="\n"))
    return PipelineReport(ens, results, skipped, report)


def _diagnostics(ens: Ensemble, results: dict, skipped: dict, epsilon: float, labels: Sequence[str],
                 sectors: Optional[dict]) -> dict:
    names = list(results)
    eps_set = epsilon_optimal_set(ens, epsilon)
    report = {
        "model": ens.model.value,
        "t_runs": len(ens),
        "graph_fingerprint": ens.graph_fingerprint,
        "distinct_partitions": len({p.key for p in ens.partitions}),
        "q_range": [float(ens.q_values.min()), float(ens.q_values.max())],
        "epsilon": epsilon,
        "epsilon_set_size": len(eps_set),
        "q": {name: results[name].q.q for name in names},
        "communities": {name: results[name].partition.k for name in names},
        "community_sizes": {name: sorted(results[name].partition.sizes().tolist(), reverse=True)
                            for name in names},
        "delta_q": {},
        "pairwise_ari": {},
        "skipped": skipped,
    }
    for a, b in itertools.combinations(names, 2):
        pair = "{}-{}".format(a, b)
        report["delta_q"][pair] = results[a].q - results[b].q
        report["pairwise_ari"][pair] = ari(results[a].partition, results[b].partition)
    if sectors is not None:
        report["sectors"] = {name: sector_composition(results[name].partition, labels, sectors) for name in names}
    return _jsonable(report)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value
