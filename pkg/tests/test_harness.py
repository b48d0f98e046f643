import dataclasses
import json
import math
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

from starcd import harness
from starcd.benchgen import LfrParams, generate_planted
from starcd.config import StarConfig
from starcd.errors import ConfigError, FormatError
from starcd.formats import load_ensemble, read_partition
from starcd.graph import from_dense_matrix
from starcd.harness import SweepConfig
from starcd.louvain import run_ensemble
from starcd.modularity import NullModel
from starcd.partition import Partition
from starcd.selection import ConsensusParams, SelectionMethod
from tests.graphs import two_triangles

SMALL_LFR = LfrParams(n=120, avg_deg=8.0, max_deg=15, cmin=10, cmax=30)


def small_sweep(output_dir, **changes) -> SweepConfig:
    settings = dict(lfr=SMALL_LFR, mu_grid=(0.2, 0.5), instances_per_mu=2, t_runs=4, base_seed=17,
                    output_dir=str(output_dir), consensus=ConsensusParams(max_iters=5))
    settings.update(changes)
    return SweepConfig(**settings)


class SweepConfigTests(unittest.TestCase):
    def test_from_config(self):
        cfg = SweepConfig.from_config(StarConfig(t_runs=150, base_seed=3, output_dir="x"))
        self.assertEqual(150, cfg.t_runs)
        self.assertEqual(3, cfg.base_seed)
        self.assertEqual("x", cfg.output_dir)
        self.assertEqual(tuple(SelectionMethod), cfg.methods)

    def test_validation(self):
        for changes in (dict(mu_grid=()), dict(mu_grid=(1.2,)), dict(instances_per_mu=0), dict(t_runs=1),
                        dict(methods=())):
            with self.assertRaises(ConfigError, msg=changes):
                SweepConfig(**changes)

    def test_cell_path(self):
        cfg = SweepConfig(output_dir="out", t_runs=50)
        self.assertEqual(Path("out/cells/mu0.3/instance_0007_t50.csv"), harness.cell_path(cfg, 0.3, 7))


class AggregateTests(unittest.TestCase):
    def test_population_std_and_method_order(self):
        cells = pd.DataFrame({
            "mu": [0.1] * 4,
            "method": ["star", "max_mod", "star", "max_mod"],
            "t_runs": [50] * 4,
            "ari_truth": [1.0, 0.5, 0.8, 0.7],
            "q": [0.4, 0.5, 0.4, 0.3],
        })
        rows = harness.aggregate_cells(cells, [SelectionMethod.STAR, SelectionMethod.MAX_MOD])
        self.assertEqual(["star", "max_mod"], [r.method for r in rows])
        self.assertAlmostEqual(0.9, rows[0].mean_ari_truth)
        self.assertAlmostEqual(0.1, rows[0].std_ari_truth)
        self.assertAlmostEqual(0.0, rows[0].std_q)
        self.assertAlmostEqual(0.1, rows[1].std_q)
        self.assertEqual(2, rows[1].instances)

    def test_format(self):
        rows = [harness.SweepRow(0.1, "star", 50, 0.9, 0.1, 0.4, 0.0, 2)]
        text = harness.format_sweep(rows)
        self.assertEqual([harness.SWEEP_HEADER, ",".join(harness.SWEEP_COLUMNS),
                          "0.100000,star,50,0.900000,0.100000,0.400000,0.000000,2"], text.splitlines())


class SweepTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_sweep_outputs(self):
        cfg = small_sweep(self.tmp)
        rows = harness.run_sweep(cfg)
        self.assertEqual(2 * len(SelectionMethod), len(rows))
        self.assertEqual([0.2] * 4 + [0.5] * 4, [r.mu for r in rows])
        self.assertEqual([m.value for m in SelectionMethod] * 2, [r.method for r in rows])
        for row in rows:
            self.assertEqual(2, row.instances)
            self.assertTrue(-0.5 <= row.mean_ari_truth <= 1.0)
            self.assertTrue(-0.5 <= row.mean_q <= 1.0)
        instances = pd.read_csv(self.tmp / "sweep_t4_instances.csv", comment="#")
        self.assertEqual(2 * 2 * len(SelectionMethod), len(instances))
        self.assertEqual(4 * 3, len(os.listdir(self.tmp / "instances")))
        self.assertTrue((self.tmp / "sweep_t4.csv").read_text().startswith(harness.SWEEP_HEADER + "\n"))

    def test_deterministic_and_resumable(self):
        first = self.tmp / "first"
        second = self.tmp / "second"
        harness.run_sweep(small_sweep(first))
        harness.run_sweep(small_sweep(second))
        expected = (first / "sweep_t4.csv").read_bytes()
        self.assertEqual(expected, (second / "sweep_t4.csv").read_bytes())
        self.assertEqual((first / "sweep_t4_instances.csv").read_bytes(),
                         (second / "sweep_t4_instances.csv").read_bytes())

        os.unlink(harness.cell_path(small_sweep(second), 0.5, 1))
        harness.run_sweep(small_sweep(second))
        self.assertEqual(expected, (second / "sweep_t4.csv").read_bytes())

        with mock.patch("starcd.harness.run_cell", side_effect=AssertionError("cell recomputed")):
            harness.run_sweep(small_sweep(second))

    def test_byte_identical_across_worker_counts(self):
        outputs = []
        for workers in (1, 2, 3):
            cfg = small_sweep(self.tmp / "workers{}".format(workers), workers=workers)
            harness.run_sweep(cfg)
            files = {"sweep": (Path(cfg.output_dir) / "sweep_t4.csv").read_bytes(),
                     "instances": (Path(cfg.output_dir) / "sweep_t4_instances.csv").read_bytes()}
            for mu in cfg.mu_grid:
                for i in range(cfg.instances_per_mu):
                    files[(mu, i)] = harness.cell_path(cfg, mu, i).read_bytes()
            outputs.append(files)
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(outputs[0], outputs[2])

    def test_unreadable_cell_is_recomputed(self):
        cfg = small_sweep(self.tmp, mu_grid=(0.3,), instances_per_mu=1, methods=(SelectionMethod.STAR,))
        harness.run_sweep(cfg)
        path = harness.cell_path(cfg, 0.3, 0)
        expected = path.read_bytes()
        path.write_text("garbage\n")
        with self.assertLogs("starcd", "WARNING"):
            harness.run_sweep(cfg)
        self.assertEqual(expected, path.read_bytes())

    def test_kept_ensembles(self):
        cfg = small_sweep(self.tmp, mu_grid=(0.3,), instances_per_mu=1, methods=(SelectionMethod.MAX_MOD,),
                          keep_ensembles=True)
        harness.run_sweep(cfg)
        ensembles = [p for p in (self.tmp / "instances").iterdir() if p.is_dir()]
        self.assertEqual(1, len(ensembles))
        self.assertEqual(5, len(os.listdir(ensembles[0])))

    def test_smaller_ensembles_are_prefixes(self):
        settings = dict(mu_grid=(0.2,), instances_per_mu=1, methods=(SelectionMethod.STAR,), keep_ensembles=True)
        small = harness.run_sweep(small_sweep(self.tmp, **settings))
        large = harness.run_sweep(small_sweep(self.tmp, t_runs=8, **settings))
        self.assertEqual((4, 8), (small[0].t_runs, large[0].t_runs))
        self.assertTrue((self.tmp / "sweep_t4.csv").exists())
        self.assertTrue((self.tmp / "sweep_t8.csv").exists())
        (small_dir,) = (self.tmp / "instances").glob("*_t4")
        (large_dir,) = (self.tmp / "instances").glob("*_t8")
        for i in range(4):
            name = "member_{:04d}.txt".format(i)
            self.assertEqual((small_dir / name).read_text(), (large_dir / name).read_text())


class DiagnosticsTests(unittest.TestCase):
    def test_shannon(self):
        self.assertEqual(0.0, harness.shannon_heterogeneity([5]))
        self.assertAlmostEqual(math.log(2), harness.shannon_heterogeneity([3, 3, 0]))
        self.assertEqual(0.0, harness.shannon_heterogeneity([]))

    def test_sector_composition(self):
        table = harness.sector_composition(Partition([0, 0, 1, 1]), ["a", "b", "c", "d"],
                                           {"a": "Tech", "b": "Energy", "c": "Tech", "d": "Tech"})
        self.assertEqual({"Energy": 1, "Tech": 1}, table[0]["sectors"])
        self.assertAlmostEqual(math.log(2), table[0]["heterogeneity"])
        self.assertEqual({"Tech": 2}, table[1]["sectors"])
        self.assertEqual(0.0, table[1]["heterogeneity"])

    def test_sector_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "sectors.txt"
            path.write_text("# node sector\nBARC Banks\nSHEL,Energy\n")
            self.assertEqual({"BARC": "Banks", "SHEL": "Energy"}, harness.load_sector_labels(path))
            path.write_text("BARC\n")
            with self.assertRaises(FormatError):
                harness.load_sector_labels(path)

    def test_histogram(self):
        frame = harness.q_histogram(np.array([0.1, 0.2, 0.2, 0.4]), bins=3)
        self.assertEqual(4, frame["count"].sum())
        self.assertEqual(["q_low", "q_high", "count"], list(frame.columns))


class PipelineTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_planted_graph(self):
        g = two_triangles()
        report = harness.run_select_pipeline(g, NullModel.CONFIGURATION_BINARY, 5, list(SelectionMethod), seed=1,
                                             output_dir=self.tmp)
        self.assertEqual({m.value for m in SelectionMethod}, set(report.results))
        self.assertEqual({}, report.skipped)
        for result in report.results.values():
            self.assertEqual(Partition([0, 0, 0, 1, 1, 1]), result.partition)
        data = json.loads((self.tmp / "report.json").read_text())
        self.assertEqual(1, data["distinct_partitions"])
        self.assertEqual(5, data["epsilon_set_size"])
        self.assertEqual([3, 3], data["community_sizes"]["star"])
        self.assertEqual(1.0, data["pairwise_ari"]["star-consensus"])
        self.assertEqual(0.0, data["delta_q"]["star-consensus"])
        self.assertEqual(5, len(os.listdir(self.tmp / "ensemble")) - 1)
        for method in SelectionMethod:
            self.assertTrue((self.tmp / "selections" / "{}.json".format(method.value)).exists())
        ens = load_ensemble(self.tmp / "ensemble", g)
        self.assertEqual(report.ensemble.seeds, ens.seeds)
        histogram = pd.read_csv(self.tmp / "q_histogram.csv")
        self.assertEqual(5, histogram["count"].sum())

    def test_signed_graph_skips_consensus(self):
        m = np.array([
            [0.0, 0.6, 0.5, -0.2, -0.1],
            [0.6, 0.0, 0.4, -0.3, -0.2],
            [0.5, 0.4, 0.0, -0.1, -0.2],
            [-0.2, -0.3, -0.1, 0.0, 0.7],
            [-0.1, -0.2, -0.2, 0.7, 0.0],
        ])
        g = from_dense_matrix(m, directed=False, node_labels=["A", "B", "C", "D", "E"])
        sectors = {"A": "Tech", "B": "Tech", "C": "Banks", "D": "Energy", "E": "Energy"}
        with self.assertLogs("starcd", "WARNING"):
            report = harness.run_select_pipeline(g, NullModel.PRECOMPUTED, 4, list(SelectionMethod), seed=0,
                                                 output_dir=self.tmp, sectors=sectors)
        self.assertEqual({"consensus": "consensus requires nonnegative weights"}, report.skipped)
        self.assertEqual(Partition([0, 0, 0, 1, 1]), report.results["star"].partition)
        self.assertEqual([0, 0, 0, 1, 1], read_partition(self.tmp / "selections" / "star.txt", g.labels()).tolist())
        data = json.loads((self.tmp / "report.json").read_text())
        self.assertEqual("precomputed", data["model"])
        self.assertEqual({"Tech": 2, "Banks": 1}, data["sectors"]["star"][0]["sectors"])

    def test_select_methods_keeps_going_past_consensus(self):
        g = from_dense_matrix(np.array([[0.0, 0.5, -0.4], [0.5, 0.0, -0.3], [-0.4, -0.3, 0.0]]), directed=False)
        ens = run_ensemble(g, NullModel.PRECOMPUTED, 3, 5)
        methods = [SelectionMethod.CONSENSUS, SelectionMethod.STAR, SelectionMethod.MAX_MOD]
        with self.assertLogs("starcd", "WARNING"):
            results, skipped = harness.select_methods(methods, ens, g)
        self.assertEqual(["star", "max_mod"], list(results))
        self.assertEqual({"consensus": "consensus requires nonnegative weights"}, skipped)
        self.assertEqual(Partition([0, 0, 1]), results["star"].partition)

    def test_planted_recovery(self):
        instance = generate_planted(4, 25, 0.5, 0.02, seed=3)
        report = harness.run_select_pipeline(instance.graph, NullModel.CONFIGURATION_BINARY, 10,
                                             [SelectionMethod.STAR, SelectionMethod.MAX_MOD], seed=3,
                                             output_dir=self.tmp)
        self.assertEqual(instance.truth, report.results["star"].partition)

    def test_needs_two_runs(self):
        with self.assertRaises(ConfigError):
            harness.run_select_pipeline(two_triangles(), NullModel.CONFIGURATION_BINARY, 1, [SelectionMethod.STAR],
                                        seed=0, output_dir=self.tmp)


@unittest.skipUnless(os.environ.get("STARCD_SLOW"), "set STARCD_SLOW=1 for the desk-scale LFR sweep")
class DeskScaleSweepTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.cfg = SweepConfig(mu_grid=(0.1, 0.3, 0.5, 0.7, 0.9), instances_per_mu=10, t_runs=50,
                              output_dir=cls._tmp.name, workers=os.cpu_count() or 1)
        cls.rows = {(r.mu, r.method): r for r in harness.run_sweep(cls.cfg)}

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_low_mixing_recovered(self):
        for method in SelectionMethod:
            self.assertGreaterEqual(self.rows[(0.1, method.value)].mean_ari_truth, 0.95, method)

    def test_star_tracks_consensus(self):
        for mu in (0.1, 0.3, 0.5):
            star = self.rows[(mu, "star")].mean_ari_truth
            self.assertLessEqual(abs(star - self.rows[(mu, "consensus")].mean_ari_truth), 0.05, mu)

    def test_star_modularity_close_to_max(self):
        for mu in (0.1, 0.3, 0.5, 0.7):
            self.assertLessEqual(abs(self.rows[(mu, "star")].mean_q - self.rows[(mu, "max_mod")].mean_q), 0.01, mu)

    def test_high_mixing_unrecoverable(self):
        for method in SelectionMethod:
            self.assertLessEqual(self.rows[(0.9, method.value)].mean_ari_truth, 0.3, method)

    def test_ensemble_size_barely_matters(self):
        cfg = dataclasses.replace(self.cfg, t_runs=150, methods=(SelectionMethod.STAR,))
        larger = {r.mu: r.mean_ari_truth for r in harness.run_sweep(cfg)}
        for mu in cfg.mu_grid:
            self.assertLessEqual(abs(larger[mu] - self.rows[(mu, "star")].mean_ari_truth), 0.03, mu)
