import configparser
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Optional

from starcd.benchgen import LfrParams, WeightMode
from starcd.errors import ConfigError, StarError
from starcd.louvain import LouvainParams, NodeOrder
from starcd.selection import ConsensusParams, SelectionMethod, parse_methods

logger = logging.getLogger("starcd")

OUTPUT_DIR_ENV = "STARCD_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "starcd-output"
DEFAULT_MU_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))

DESK_SCALE = {"instances_per_mu": 10, "t_runs": 50}
FULL_SCALE = {"instances_per_mu": 100, "t_runs": 150}

_known_keys = {
    "louvain": {"min_gain", "max_levels", "node_order"},
    "ensemble": {"t_runs", "workers"},
    "consensus": {"tau", "runs_per_iter", "max_iters", "reuse_ensemble"},
    "lfr": {"n", "avg_deg", "max_deg", "gamma", "beta", "cmin", "cmax", "weight_mode"},
    "sweep": {"mu_grid", "instances_per_mu", "methods", "base_seed", "keep_ensembles"},
    "output": {"directory"},
}


@dataclass
class StarConfig:
    louvain: LouvainParams = field(default_factory=LouvainParams)
    t_runs: int = DESK_SCALE["t_runs"]
    workers: int = 1
    consensus: ConsensusParams = field(default_factory=ConsensusParams)
    reuse_ensemble: bool = False
    lfr: LfrParams = field(default_factory=LfrParams)
    mu_grid: tuple = DEFAULT_MU_GRID
    instances_per_mu: int = DESK_SCALE["instances_per_mu"]
    methods: tuple = tuple(SelectionMethod)
    base_seed: int = 0
    keep_ensembles: bool = False
    output_dir: str = DEFAULT_OUTPUT_DIR

    def full_scale(self) -> "StarConfig":
        return replace(self, **FULL_SCALE)


def _section_values(parser: configparser.ConfigParser, section: str) -> dict:
    if not parser.has_section(section):
        return {}
    values = dict(parser.items(section))
    unknown = set(values) - _known_keys[section]
    if unknown:
        raise ConfigError("Unknown keys in [{}]: {}".format(section, ", ".join(sorted(unknown))))
    return values


def _typed(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(raw)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        return kind(raw.strip())
    except ValueError:
        raise ConfigError("[{}] {} = {!r} is not a valid {}".format(section, key, raw, getattr(kind, "__name__", kind)))


def _float_list(section: str, key: str, raw: str) -> tuple:
    return tuple(_typed(section, key, item, float) for item in raw.split(",") if item.strip())


def load_config(path: Optional[str] = None, environ=None) -> StarConfig:
    """
    Built-in defaults, overlaid by the INI file at `path` and by
    STARCD_OUTPUT_DIR for the output directory. Command-line flags go on top in
    the CLI.
    """
    environ = os.environ if environ is None else environ
    parser = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                parser.read_file(f)
        except OSError as e:
            raise ConfigError("Cannot read config file {}: {}".format(path, e))
        except configparser.Error as e:
            raise ConfigError("Malformed config file {}: {}".format(path, e))
        unknown = set(parser.sections()) - set(_known_keys)
        if unknown:
            raise ConfigError("Unknown config sections: {}".format(", ".join(sorted(unknown))))
        logger.debug("Loaded config from %s", path)

    cfg = StarConfig()
    try:
        values = _section_values(parser, "louvain")
        louvain = {}
        if "min_gain" in values:
            louvain["min_gain"] = _typed("louvain", "min_gain", values["min_gain"], float)
        if "max_levels" in values:
            louvain["max_levels"] = _typed("louvain", "max_levels", values["max_levels"], int)
        if "node_order" in values:
            louvain["node_order"] = _typed("louvain", "node_order", values["node_order"], NodeOrder)
        cfg.louvain = replace(cfg.louvain, **louvain)

        values = _section_values(parser, "ensemble")
        if "t_runs" in values:
            cfg.t_runs = _typed("ensemble", "t_runs", values["t_runs"], int)
        if "workers" in values:
            cfg.workers = _typed("ensemble", "workers", values["workers"], int)

        values = _section_values(parser, "consensus")
        consensus = {}
        for key, kind in (("tau", float), ("runs_per_iter", int), ("max_iters", int)):
            if key in values:
                consensus[key] = _typed("consensus", key, values[key], kind)
        cfg.consensus = replace(cfg.consensus, **consensus)
        if "reuse_ensemble" in values:
            cfg.reuse_ensemble = _typed("consensus", "reuse_ensemble", values["reuse_ensemble"], bool)

        values = _section_values(parser, "lfr")
        lfr = {}
        for key, kind in (("n", int), ("avg_deg", float), ("max_deg", int), ("gamma", float), ("beta", float),
                          ("cmin", int), ("cmax", int), ("weight_mode", WeightMode)):
            if key in values:
                lfr[key] = _typed("lfr", key, values[key], kind)
        cfg.lfr = replace(cfg.lfr, **lfr)

        values = _section_values(parser, "sweep")
        if "mu_grid" in values:
            cfg.mu_grid = _float_list("sweep", "mu_grid", values["mu_grid"])
        if "instances_per_mu" in values:
            cfg.instances_per_mu = _typed("sweep", "instances_per_mu", values["instances_per_mu"], int)
        if "methods" in values:
            cfg.methods = tuple(parse_methods(values["methods"].split(",")))
        if "base_seed" in values:
            cfg.base_seed = _typed("sweep", "base_seed", values["base_seed"], int)
        if "keep_ensembles" in values:
            cfg.keep_ensembles = _typed("sweep", "keep_ensembles", values["keep_ensembles"], bool)

        values = _section_values(parser, "output")
        if "directory" in values:
            cfg.output_dir = values["directory"].strip()
    except ConfigError:
        raise
    except StarError as e:
        raise ConfigError(str(e))

    if environ.get(OUTPUT_DIR_ENV):
        cfg.output_dir = environ[OUTPUT_DIR_ENV]
    validate(cfg)
    return cfg


def validate(cfg: StarConfig):
    if cfg.t_runs < 2:
        raise ConfigError("t_runs must be >= 2, got {}".format(cfg.t_runs))
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1, got {}".format(cfg.workers))
    if cfg.instances_per_mu < 1:
        raise ConfigError("instances_per_mu must be >= 1, got {}".format(cfg.instances_per_mu))
    if not cfg.mu_grid:
        raise ConfigError("mu_grid is empty")
    for mu in cfg.mu_grid:
        if not 0.0 <= mu <= 1.0:
            raise ConfigError("mu_grid value {} outside [0, 1]".format(mu))
    if not cfg.methods:
        raise ConfigError("No selection methods configured")
