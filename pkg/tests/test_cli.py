import contextlib
import io
import tempfile
import textwrap
import unittest
from pathlib import Path

import numpy as np

from starcd import cli
from starcd.benchgen import generate_factor_returns
from starcd.formats import read_manifest, read_partition, save_ensemble, SelectionManifest
from starcd.graph import write_edge_list
from starcd.louvain import Ensemble
from starcd.modularity import NullModel, modularity
from starcd.partition import Partition
from tests.graphs import two_triangles


class CliTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.edges = self.tmp / "two_triangles.edges"
        with open(self.edges, "w") as f:
            write_edge_list(two_triangles(), f)

    def tearDown(self):
        self._tmp.cleanup()

    def run_cli(self, *argv) -> tuple[int, str]:
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            code = cli.main([str(a) for a in argv])
        return code, out.getvalue()

    def test_usage_errors(self):
        for argv in ([], ["detect"], ["detect", "--graph", "x", "--matrix", "y"], ["frobnicate"]):
            with contextlib.redirect_stderr(io.StringIO()):
                with self.assertRaises(SystemExit) as ctx:
                    cli.main(argv)
            self.assertEqual(cli.EXIT_USAGE, ctx.exception.code, argv)

    def test_data_errors(self):
        bad = self.tmp / "bad.edges"
        bad.write_text("a b c d\n")
        self.assertEqual(cli.EXIT_DATA, self.run_cli("detect", "--graph", bad)[0])
        self.assertEqual(cli.EXIT_DATA, self.run_cli("detect", "--graph", self.tmp / "missing.edges")[0])
        self.assertEqual(cli.EXIT_DATA, self.run_cli("detect", "--graph", self.edges, "--model", "potts")[0])
        config = self.tmp / "bad.ini"
        config.write_text("[ensemble]\nt_runs = 0\n")
        self.assertEqual(cli.EXIT_DATA, self.run_cli("--config", config, "detect", "--graph", self.edges)[0])

    def test_detect(self):
        out = self.tmp / "p.txt"
        code, text = self.run_cli("detect", "--graph", self.edges, "--model", "binary", "--output", out)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertIn("communities=2", text)
        self.assertEqual([0, 0, 0, 1, 1, 1], read_partition(out).tolist())

    def test_ensemble_select_ari(self):
        ens_dir = self.tmp / "ens"
        self.assertEqual(cli.EXIT_OK, self.run_cli("ensemble", "--graph", self.edges, "-t", 4, "--seed", 2,
                                                   "--output", ens_dir)[0])
        sel_dir = self.tmp / "sel"
        code, text = self.run_cli("select", "--graph", self.edges, "--ensemble", ens_dir,
                                  "--methods", "star,most_frequent", "--output", sel_dir)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertIn("star:", text)
        manifest = read_manifest(sel_dir / "star.json", SelectionManifest)
        self.assertEqual("weighted", manifest.model.value)
        code, text = self.run_cli("ari", sel_dir / "star.txt", sel_dir / "most_frequent.txt")
        self.assertEqual("1.000000", text.strip())

    def test_consensus_non_convergence(self):
        g = two_triangles()
        members = [Partition(a) for a in ([0, 0, 1, 1, 1, 1], [0, 0, 0, 1, 1, 1])]
        ens = Ensemble(g.fingerprint, NullModel.CONFIGURATION_WEIGHTED,
                       [(p, modularity(g, p, NullModel.CONFIGURATION_WEIGHTED)) for p in members], [0, 1])
        ens_dir = self.tmp / "ens"
        save_ensemble(ens, ens_dir, g.labels())
        argv = ["consensus", "--graph", self.edges, "--ensemble", ens_dir, "--max-iters", 1,
                "--output", self.tmp / "cons"]
        code, text = self.run_cli(*argv)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertIn("converged=False", text)
        self.assertEqual(cli.EXIT_NONCONVERGED, self.run_cli("--strict", *argv)[0])

    def test_generate(self):
        code, text = self.run_cli("generate", "--kind", "planted", "--k", 2, "--size", 3, "--p-in", 1, "--p-out", 0,
                                  "--bridges", "--seed", 4, "--output", self.tmp / "inst")
        self.assertEqual(cli.EXIT_OK, code)
        self.assertEqual("planted_k2_seed4", text.strip())
        self.assertTrue((self.tmp / "inst" / "planted_k2_seed4.edges").exists())

    def test_filter_and_pipeline(self):
        returns = generate_factor_returns([8, 8, 8], 0.8, 0.5, 600, seed=5)
        prices = 100 * np.exp(np.cumsum(0.01 * returns, axis=1))
        lines = [",".join("S{}".format(i) for i in range(24))]
        lines.extend(",".join("{:.8f}".format(p) for p in day) for day in prices.T)
        prices_csv = self.tmp / "prices.csv"
        prices_csv.write_text("\n".join(lines) + "\n")
        matrix = self.tmp / "filtered.csv"
        code, text = self.run_cli("filter-corr", "--prices", prices_csv, "--output", matrix)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertIn("24 assets", text)

        out = self.tmp / "pipeline"
        code, text = self.run_cli("pipeline", "--matrix", matrix, "-t", 5, "--output", out)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertIn("consensus: skipped", text)
        self.assertTrue((out / "report.json").exists())
        self.assertTrue((out / "selections" / "star.txt").exists())

    def test_sweep(self):
        config = self.tmp / "small.ini"
        config.write_text(textwrap.dedent("""
            [lfr]
            n = 120
            avg_deg = 8
            max_deg = 15
            cmin = 10
            cmax = 30

            [consensus]
            max_iters = 3
            """))
        out = self.tmp / "sweep"
        code, text = self.run_cli("--config", config, "sweep", "--mu-grid", "0.3", "--instances", 1, "-t", 3,
                                  "--methods", "star,max_mod", "--output", out)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertEqual(["# starcd sweep v1", "mu,method,t_runs,mean_ari_truth,std_ari_truth,mean_q,std_q,instances"],
                         text.splitlines()[:2])
        self.assertEqual(4, len(text.splitlines()))
        self.assertTrue((out / "sweep_t3.csv").exists())
        self.assertEqual(cli.EXIT_DATA, self.run_cli("sweep", "--mu-grid", "0.3,abc", "--output", out)[0])

    def test_scale_flag_spellings(self):
        parser = cli.build_parser()
        for flag in ("--paper-scale", "--full-scale"):
            self.assertTrue(parser.parse_args(["sweep", flag]).full_scale, flag)
        self.assertFalse(parser.parse_args(["sweep"]).full_scale)

    def write_signed_edges(self) -> Path:
        path = self.tmp / "signed.edges"
        path.write_text("a b 1\nb c 1\na c 1\nd e 1\ne f 1\nd f 1\nc d -1\n")
        return path

    def test_signed_edge_list_defaults_to_signed_model(self):
        out = self.tmp / "p.txt"
        code, text = self.run_cli("detect", "--graph", self.write_signed_edges(), "--output", out)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertEqual([0, 0, 0, 1, 1, 1], read_partition(out).tolist())

    def test_select_skips_consensus_on_signed_graph(self):
        edges = self.write_signed_edges()
        ens_dir = self.tmp / "ens"
        self.assertEqual(cli.EXIT_OK, self.run_cli("ensemble", "--graph", edges, "-t", 3, "--output", ens_dir)[0])
        sel_dir = self.tmp / "sel"
        code, text = self.run_cli("select", "--graph", edges, "--ensemble", ens_dir,
                                  "--methods", "consensus,star,max_mod", "--output", sel_dir)
        self.assertEqual(cli.EXIT_OK, code)
        self.assertIn("consensus: skipped (consensus requires nonnegative weights)", text)
        self.assertIn("star:", text)
        self.assertTrue((sel_dir / "star.txt").exists())
        self.assertTrue((sel_dir / "max_mod.txt").exists())
        self.assertFalse((sel_dir / "consensus.txt").exists())
        manifest = read_manifest(sel_dir / "star.json", SelectionManifest)
        self.assertEqual("signed", manifest.model.value)
