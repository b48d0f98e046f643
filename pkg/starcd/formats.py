import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from starcd.benchgen import BenchmarkInstance
from starcd.errors import EnsembleError, FormatError
from starcd.graph import Graph, check_label, load_edge_list, write_edge_list
from starcd.louvain import Ensemble
from starcd.modularity import ModularityScore, parse_null_model
from starcd.partition import Partition
from starcd.selection import SelectionResult

logger = logging.getLogger("starcd")

FORMAT_VERSION = 1
ENSEMBLE_MANIFEST = "manifest.json"


def atomic_write(path, text: str):
    """Write `text` to `path` through a temporary file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".{}.".format(path.name), suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug("Wrote %s", path)


class PartitionFile:
    """Text partition: one `<node_label> <community_id>` line per node, `#` comments."""

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "PartitionFile":
        labels = []
        communities = []
        seen = set()
        for line_number, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            # the label may contain spaces, the community id is the last field
            fields = line.rsplit(None, 1)
            if len(fields) != 2:
                raise FormatError("expected `<node_label> <community_id>`, got {!r}".format(line), line_number)
            label, community = fields
            try:
                community = int(community)
            except ValueError:
                raise FormatError("community id is not an integer: {!r}".format(community), line_number)
            if label in seen:
                raise FormatError("node {!r} listed twice".format(label), line_number)
            seen.add(label)
            labels.append(label)
            communities.append(community)
        if not labels:
            raise FormatError("partition file lists no nodes")
        return cls(labels, communities)

    @classmethod
    def from_partition(cls, p: Partition, labels: Optional[Sequence[str]] = None) -> "PartitionFile":
        if labels is None:
            labels = [str(i) for i in range(p.n)]
        if len(labels) != p.n:
            raise FormatError("Got {} labels for a partition of {} nodes".format(len(labels), p.n))
        labels = [check_label(str(label)) for label in labels]
        return cls(list(labels), p.tolist())

    def __init__(self, labels: Sequence[str], communities: Sequence[int]):
        self.labels = [str(label) for label in labels]
        self.communities = [int(c) for c in communities]

    def partition(self, node_labels: Optional[Sequence[str]] = None) -> Partition:
        """The partition in the node order of `node_labels`, or in file order."""
        if node_labels is None:
            return Partition(self.communities)
        by_label = dict(zip(self.labels, self.communities))
        if len(node_labels) != len(by_label):
            raise FormatError("Partition covers {} nodes, graph has {}".format(len(by_label), len(node_labels)))
        try:
            return Partition([by_label[str(label)] for label in node_labels])
        except KeyError as e:
            raise FormatError("Partition file has no entry for node {}".format(e))

    def encode(self, comment: Optional[str] = None) -> str:
        lines = ["# {}".format(comment)] if comment else []
        lines.extend("{} {}".format(label, c) for label, c in zip(self.labels, self.communities))
        return "\n".join(lines) + "\n"


def read_partition(path, node_labels: Optional[Sequence[str]] = None) -> Partition:
    with open(path, encoding="utf-8") as f:
        return PartitionFile.parse(f).partition(node_labels)


def write_partition(path, p: Partition, labels: Optional[Sequence[str]] = None, comment: Optional[str] = None):
    atomic_write(path, PartitionFile.from_partition(p, labels).encode(comment))


class EnsembleManifest:
    kind = "ensemble"

    @classmethod
    def parse(cls, data: dict) -> "EnsembleManifest":
        try:
            return cls(parse_null_model(data["model"]), data["graph_fingerprint"], data["seeds"],
                       data["q_values"], data["members"])
        except KeyError as e:
            raise FormatError("Ensemble manifest misses field {}".format(e))

    def __init__(self, model, graph_fingerprint: str, seeds: Sequence[int], q_values: Sequence[float],
                 members: Sequence[str]):
        self.model = model
        self.graph_fingerprint = graph_fingerprint
        self.seeds = [int(s) for s in seeds]
        self.q_values = [float(q) for q in q_values]
        self.members = list(members)
        if not len(self.seeds) == len(self.q_values) == len(self.members):
            raise FormatError("Ensemble manifest lists {} seeds, {} Q values and {} member files".format(
                len(self.seeds), len(self.q_values), len(self.members)))

    def encode(self) -> dict:
        return {
            "model": self.model.value,
            "graph_fingerprint": self.graph_fingerprint,
            "seeds": self.seeds,
            "q_values": self.q_values,
            "members": self.members,
        }


class SelectionManifest:
    kind = "selection"

    @classmethod
    def parse(cls, data: dict) -> "SelectionManifest":
        try:
            return cls(data["method"], parse_null_model(data["model"]), data["q"], data["graph_fingerprint"],
                       data.get("source_index"), data.get("diagnostics", {}), data["partition"])
        except KeyError as e:
            raise FormatError("Selection manifest misses field {}".format(e))

    @classmethod
    def from_result(cls, result: SelectionResult, partition_file: str) -> "SelectionManifest":
        return cls(result.method.value, result.q.model, result.q.q, result.q.graph_fingerprint,
                   result.source_index, result.diagnostics, partition_file)

    def __init__(self, method: str, model, q: float, graph_fingerprint: str, source_index: Optional[int],
                 diagnostics: dict, partition: str):
        self.method = method
        self.model = model
        self.q = float(q)
        self.graph_fingerprint = graph_fingerprint
        self.source_index = source_index
        self.diagnostics = diagnostics
        self.partition = partition

    def encode(self) -> dict:
        return {
            "method": self.method,
            "model": self.model.value,
            "q": self.q,
            "graph_fingerprint": self.graph_fingerprint,
            "source_index": self.source_index,
            "diagnostics": self.diagnostics,
            "partition": self.partition,
        }


class InstanceManifest:
    kind = "instance"

    @classmethod
    def parse(cls, data: dict) -> "InstanceManifest":
        try:
            return cls(data["name"], data["params"], data["instance_seed"], data["graph_fingerprint"],
                       data["graph"], data["truth"])
        except KeyError as e:
            raise FormatError("Instance manifest misses field {}".format(e))

    def __init__(self, name: str, params: dict, instance_seed: int, graph_fingerprint: str, graph: str,
                 truth: str):
        self.name = name
        self.params = params
        self.instance_seed = int(instance_seed)
        self.graph_fingerprint = graph_fingerprint
        self.graph = graph
        self.truth = truth

    def encode(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "instance_seed": self.instance_seed,
            "graph_fingerprint": self.graph_fingerprint,
            "graph": self.graph,
            "truth": self.truth,
        }


_manifest_kind_table = {
    EnsembleManifest.kind: EnsembleManifest,
    SelectionManifest.kind: SelectionManifest,
    InstanceManifest.kind: InstanceManifest,
}


def parse_manifest(text: str):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError("Manifest is not valid JSON: {}".format(e))
    if not isinstance(data, dict):
        raise FormatError("Manifest must be a JSON object")
    if data.get("version") != FORMAT_VERSION:
        raise FormatError("Unsupported manifest version {!r}, expected {}".format(data.get("version"),
                                                                                  FORMAT_VERSION))
    manifest_class = _manifest_kind_table.get(data.get("kind"))
    if manifest_class is None:
        raise FormatError("Unknown manifest kind: {}".format(data.get("kind")))
    return manifest_class.parse(data)


def encode_manifest(manifest) -> str:
    data = {"kind": manifest.kind, "version": FORMAT_VERSION}
    data.update(manifest.encode())
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def read_manifest(path, expected_class=None):
    with open(path, encoding="utf-8") as f:
        manifest = parse_manifest(f.read())
    if expected_class is not None and not isinstance(manifest, expected_class):
        raise FormatError("{} holds a {} manifest, expected {}".format(path, manifest.kind, expected_class.kind))
    return manifest


def format_matrix_csv(matrix: np.ndarray, labels: Optional[Sequence[str]] = None) -> str:
    """Square matrix as CSV with 6 decimals, with a header row and label column when labels are given."""
    matrix = np.asarray(matrix, dtype=float)
    rows = []
    if labels is not None:
        rows.append(",".join([""] + [str(label) for label in labels]))
    for i, row in enumerate(matrix.tolist()):
        cells = ["{:.6f}".format(value) for value in row]
        if labels is not None:
            cells.insert(0, str(labels[i]))
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def save_ensemble(ens: Ensemble, directory, labels: Optional[Sequence[str]] = None):
    """One partition file per member plus manifest.json."""
    directory = Path(directory)
    members = []
    for index, p in enumerate(ens.partitions):
        name = "member_{:04d}.txt".format(index)
        write_partition(directory / name, p, labels, "member {} seed {}".format(index, ens.seeds[index]))
        members.append(name)
    manifest = EnsembleManifest(ens.model, ens.graph_fingerprint, ens.seeds, ens.q_values.tolist(), members)
    atomic_write(directory / ENSEMBLE_MANIFEST, encode_manifest(manifest))
    logger.info("Saved %r to %s", ens, directory)


def load_ensemble(directory, g: Graph, tolerance: float = 1e-9) -> Ensemble:
    """Read an ensemble written by save_ensemble and re-check it against `g`."""
    directory = Path(directory)
    manifest = read_manifest(directory / ENSEMBLE_MANIFEST, EnsembleManifest)
    if manifest.graph_fingerprint != g.fingerprint:
        raise EnsembleError("Ensemble in {} was computed on a different graph".format(directory))
    labels = g.labels()
    members = []
    for name, q in zip(manifest.members, manifest.q_values):
        p = read_partition(directory / name, labels)
        members.append((p, ModularityScore(q, manifest.model, manifest.graph_fingerprint)))
    ens = Ensemble(manifest.graph_fingerprint, manifest.model, members, manifest.seeds)
    ens.validate(g, tolerance)
    return ens


def save_selection(result: SelectionResult, directory, labels: Optional[Sequence[str]] = None):
    """`<method>.txt` partition plus `<method>.json` diagnostics sidecar."""
    directory = Path(directory)
    partition_name = "{}.txt".format(result.method.value)
    write_partition(directory / partition_name, result.partition, labels,
                    "{} Q={:.6f}".format(result.method.value, result.q.q))
    manifest = SelectionManifest.from_result(result, partition_name)
    atomic_write(directory / "{}.json".format(result.method.value), encode_manifest(manifest))


def instance_paths(directory, name: str) -> tuple[Path, Path, Path]:
    directory = Path(directory)
    return (directory / "{}.edges".format(name), directory / "{}.truth".format(name),
            directory / "{}.json".format(name))


def save_instance(instance: BenchmarkInstance, directory):
    graph_path, truth_path, manifest_path = instance_paths(directory, instance.name)
    buffer = io.StringIO()
    write_edge_list(instance.graph, buffer)
    atomic_write(graph_path, buffer.getvalue())
    write_partition(truth_path, instance.truth, instance.graph.labels())
    manifest = InstanceManifest(instance.name, instance.params_echo, instance.instance_seed,
                                instance.graph.fingerprint, graph_path.name, truth_path.name)
    atomic_write(manifest_path, encode_manifest(manifest))


def load_instance(directory, name: str) -> BenchmarkInstance:
    _, _, manifest_path = instance_paths(directory, name)
    manifest = read_manifest(manifest_path, InstanceManifest)
    directory = Path(directory)
    with open(directory / manifest.truth, encoding="utf-8") as f:
        truth_file = PartitionFile.parse(f)
    with open(directory / manifest.graph, encoding="utf-8") as f:
        graph = load_edge_list(f, directed=False, weighted=True, node_labels=truth_file.labels)
    if graph.fingerprint != manifest.graph_fingerprint:
        raise FormatError("Instance {} does not match its manifest fingerprint".format(name))
    return BenchmarkInstance(graph, truth_file.partition(), manifest.params, manifest.instance_seed)
