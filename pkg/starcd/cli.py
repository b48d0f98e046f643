import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from starcd.benchgen import WeightMode, generate_lfr, generate_planted
from starcd.config import StarConfig, load_config
from starcd.corrfilter import FilterMode, clean_and_log_returns, load_prices_csv, pearson_correlation, rmt_filter
from starcd.errors import ConfigError, ConvergenceError, StarError
from starcd.formats import (PartitionFile, atomic_write, format_matrix_csv, load_ensemble, save_ensemble,
                            save_instance, save_selection, write_partition)
from starcd.graph import SignProfile, load_dense_matrix_csv, load_edge_list
from starcd.harness import SweepConfig, format_sweep, load_sector_labels, run_select_pipeline, run_sweep, \
    select_methods, sweep_nonconverged
from starcd.louvain import louvain_once, run_ensemble, split_seed
from starcd.modularity import parse_null_model
from starcd.partition import ari
from starcd.selection import consensus_cluster, parse_methods

logger = logging.getLogger("starcd")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NONCONVERGED = 3


class StarArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "{}: error: {}\n".format(self.prog, message))


def _add_graph_arguments(parser):
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--graph", help="Edge list file")
    source.add_argument("--matrix", help="Dense matrix CSV")
    parser.add_argument("--directed", action="store_true", help="Treat the input as directed")
    parser.add_argument("--unweighted", action="store_true", help="Edge list has no weight column")
    parser.add_argument("--model", default=None,
                        help="Null model: binary, weighted, signed or precomputed (default: weighted for edge "
                             "lists, signed when they carry negative weights, precomputed for matrices)")


def _load_graph(args):
    if args.graph:
        with open(args.graph, encoding="utf-8") as f:
            g = load_edge_list(f, args.directed, not args.unweighted)
        default = "signed" if g.sign_profile is SignProfile.SIGNED else "weighted"
        model = parse_null_model(args.model or default)
    else:
        g = load_dense_matrix_csv(args.matrix, args.directed)
        model = parse_null_model(args.model or "precomputed")
    logger.info("Loaded %r", g)
    return g, model


def _cmd_generate(args, cfg: StarConfig):
    out = Path(args.output or cfg.output_dir)
    if args.kind == "planted":
        instance = generate_planted(args.k, args.size, args.p_in, args.p_out, args.seed, args.bridges)
    else:
        params = dataclasses.replace(cfg.lfr, mu=args.mu, seed=args.seed)
        if args.n is not None:
            params = dataclasses.replace(params, n=args.n)
        if args.weight_mode is not None:
            params = dataclasses.replace(params, weight_mode=WeightMode(args.weight_mode))
        instance = generate_lfr(params)
    save_instance(instance, out)
    print(instance.name)


def _cmd_detect(args, cfg: StarConfig):
    g, model = _load_graph(args)
    params = dataclasses.replace(cfg.louvain, seed=args.seed)
    partition, score = louvain_once(g, model, params)
    print("Q={:.6f} communities={}".format(score.q, partition.k))
    if args.output:
        write_partition(args.output, partition, g.labels(), "louvain seed {} Q={:.6f}".format(args.seed, score.q))


def _cmd_ensemble(args, cfg: StarConfig):
    g, model = _load_graph(args)
    ens = run_ensemble(g, model, args.t or cfg.t_runs, args.seed, cfg.louvain, args.workers or cfg.workers)
    save_ensemble(ens, args.output, g.labels())
    print("{} members, Q in [{:.6f}, {:.6f}]".format(len(ens), ens.q_values.min(), ens.q_values.max()))


def _cmd_select(args, cfg: StarConfig):
    g, _ = _load_graph(args)
    ens = load_ensemble(args.ensemble, g)
    methods = parse_methods(args.methods.split(",")) if args.methods else list(cfg.methods)
    results, skipped = select_methods(methods, ens, g, cfg.consensus, cfg.reuse_ensemble, cfg.louvain,
                                      args.workers or cfg.workers)
    for name, result in results.items():
        save_selection(result, args.output, g.labels())
        print("{}: Q={:.6f} communities={}".format(name, result.q.q, result.partition.k))
    for name, reason in skipped.items():
        print("{}: skipped ({})".format(name, reason))
    return any(not r.diagnostics.get("converged", True) for r in results.values())


def _cmd_consensus(args, cfg: StarConfig):
    g, model = _load_graph(args)
    params = cfg.consensus
    changes = {key: value for key, value in (("tau", args.tau), ("runs_per_iter", args.runs),
                                             ("max_iters", args.max_iters), ("seed", args.seed))
               if value is not None}
    params = dataclasses.replace(params, **changes)
    ensemble = load_ensemble(args.ensemble, g) if args.ensemble else None
    if params.runs_per_iter is None and ensemble is None:
        params = dataclasses.replace(params, runs_per_iter=cfg.t_runs)
    result = consensus_cluster(g, model, params, ensemble, cfg.louvain, args.workers or cfg.workers)
    save_selection(result, args.output, g.labels())
    print("consensus: Q={:.6f} communities={} iterations={} converged={}".format(
        result.q.q, result.partition.k, result.diagnostics["iterations"], result.diagnostics["converged"]))
    return not result.diagnostics["converged"]


def _cmd_sweep(args, cfg: StarConfig):
    if args.full_scale:
        cfg = cfg.full_scale()
    changes = {}
    if args.mu_grid:
        try:
            changes["mu_grid"] = tuple(float(mu) for mu in args.mu_grid.split(","))
        except ValueError:
            raise ConfigError("--mu-grid must be comma separated numbers, got {!r}".format(args.mu_grid))
    if args.instances is not None:
        changes["instances_per_mu"] = args.instances
    if args.t is not None:
        changes["t_runs"] = args.t
    if args.methods:
        changes["methods"] = tuple(parse_methods(args.methods.split(",")))
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.output:
        changes["output_dir"] = args.output
    if args.workers:
        changes["workers"] = args.workers
    sweep = dataclasses.replace(SweepConfig.from_config(cfg), **changes)
    rows = run_sweep(sweep)
    sys.stdout.write(format_sweep(rows))
    return sweep_nonconverged(sweep) > 0


def _cmd_filter_corr(args, cfg: StarConfig):
    returns = clean_and_log_returns(load_prices_csv(args.prices), max_missing=args.max_missing)
    returns = returns.drop_zero_variance()
    filtered = rmt_filter(pearson_correlation(returns), returns.observations, FilterMode(args.mode))
    atomic_write(args.output, format_matrix_csv(filtered.matrix, returns.asset_labels))
    print("{} assets, {} modes kept, lambda+={:.4f}".format(returns.assets, int(filtered.retained.sum()),
                                                            filtered.mp_bounds.high))


def _cmd_pipeline(args, cfg: StarConfig):
    g, model = _load_graph(args)
    methods = parse_methods(args.methods.split(",")) if args.methods else list(cfg.methods)
    sectors = load_sector_labels(args.sectors) if args.sectors else None
    t_runs = args.t or cfg.t_runs
    consensus = dataclasses.replace(cfg.consensus, seed=split_seed(args.seed, t_runs))
    report = run_select_pipeline(g, model, t_runs, methods, args.seed, args.output or cfg.output_dir,
                                 cfg.louvain, consensus, cfg.reuse_ensemble, args.workers or cfg.workers,
                                 args.epsilon, sectors=sectors)
    for name, result in report.results.items():
        print("{}: Q={:.6f} communities={}".format(name, result.q.q, result.partition.k))
    for name, reason in report.skipped.items():
        print("{}: skipped ({})".format(name, reason))
    return any(not r.diagnostics.get("converged", True) for r in report.results.values())


def _cmd_ari(args, cfg: StarConfig):
    with open(args.first, encoding="utf-8") as f:
        first = PartitionFile.parse(f)
    with open(args.second, encoding="utf-8") as f:
        second = PartitionFile.parse(f)
    print("{:.6f}".format(ari(first.partition(), second.partition(first.labels))))


def build_parser() -> argparse.ArgumentParser:
    parser = StarArgumentParser(prog="starcd", description="Community detection with STAR ensemble selection.")
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--trace", action="store_true", help="Enable debug tracing")
    parser.add_argument("--strict", action="store_true", help="Treat consensus non-convergence as an error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=StarArgumentParser)

    p = sub.add_parser("generate", help="Generate a benchmark instance")
    p.add_argument("--kind", choices=["lfr", "planted"], default="lfr")
    p.add_argument("--mu", type=float, default=0.1)
    p.add_argument("--n", type=int)
    p.add_argument("--weight-mode", choices=[m.value for m in WeightMode])
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--size", type=int, default=10)
    p.add_argument("--p-in", type=float, default=0.5)
    p.add_argument("--p-out", type=float, default=0.05)
    p.add_argument("--bridges", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="Directory for the instance files")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("detect", help="Single Louvain run")
    _add_graph_arguments(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", help="Partition file to write")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("ensemble", help="Run and store a Louvain ensemble")
    _add_graph_arguments(p)
    p.add_argument("-t", type=int, help="Number of runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--output", required=True, help="Ensemble directory")
    p.set_defaults(func=_cmd_ensemble)

    p = sub.add_parser("select", help="Select representatives from a stored ensemble")
    _add_graph_arguments(p)
    p.add_argument("--ensemble", required=True, help="Ensemble directory")
    p.add_argument("--methods", help="Comma separated: star, consensus, max_mod, most_frequent")
    p.add_argument("--workers", type=int)
    p.add_argument("--output", required=True, help="Directory for the selections")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("consensus", help="Consensus clustering")
    _add_graph_arguments(p)
    p.add_argument("--tau", type=float)
    p.add_argument("--runs", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ensemble", help="Reuse this stored ensemble as the first iteration")
    p.add_argument("--workers", type=int)
    p.add_argument("--output", required=True, help="Directory for the selection")
    p.set_defaults(func=_cmd_consensus)

    p = sub.add_parser("sweep", help="LFR benchmark sweep over the mixing parameter")
    p.add_argument("--mu-grid", help="Comma separated mixing values")
    p.add_argument("--instances", type=int)
    p.add_argument("-t", type=int)
    p.add_argument("--methods")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.add_argument("--paper-scale", "--full-scale", dest="full_scale", action="store_true",
                   help="100 instances per mu, 150 runs")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("filter-corr", help="Prices to a filtered correlation matrix")
    p.add_argument("--prices", required=True, help="Prices CSV")
    p.add_argument("--mode", choices=[m.value for m in FilterMode], default=FilterMode.BULK_AND_MARKET.value)
    p.add_argument("--max-missing", type=float, default=0.1)
    p.add_argument("--output", required=True, help="Matrix CSV to write")
    p.set_defaults(func=_cmd_filter_corr)

    p = sub.add_parser("pipeline", help="Ensemble, selection and diagnostics report in one go")
    _add_graph_arguments(p)
    p.add_argument("-t", type=int)
    p.add_argument("--methods")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--sectors", help="Optional `<node> <sector>` file for the composition report")
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("ari", help="Adjusted Rand index of two partition files")
    p.add_argument("first")
    p.add_argument("second")
    p.set_defaults(func=_cmd_ari)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.trace:
        logging.basicConfig(level=logging.DEBUG)
    else:
        logging.basicConfig(level=logging.INFO)
    try:
        cfg = load_config(args.config)
        nonconverged = args.func(args, cfg)
        if nonconverged and args.strict:
            raise ConvergenceError("Consensus clustering did not converge")
    except ConvergenceError as e:
        logger.error("%s", e)
        return EXIT_NONCONVERGED
    except (StarError, OSError) as e:
        logger.error("%s", e)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
