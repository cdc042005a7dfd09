import csv
import json
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import pytest
from click.testing import CliRunner

from heat_estimator.main import cli


class TestCli(unittest.TestCase):
    def setUp(self):
        self.runner = CliRunner()
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        logging_patch = patch("heat_estimator.main.set_logger_level_from_config")
        logging_patch.start()
        self.addCleanup(logging_patch.stop)

    def path(self, name: str) -> Path:
        return Path(self.tmp.name) / name

    def config(self, payload) -> str:
        path = self.path("study.json")
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)

    def read_csv(self, path: Path) -> list[list[str]]:
        with path.open(encoding="utf-8", newline="") as handle:
            return list(csv.reader(handle))

    def test_catalog(self):
        result = self.runner.invoke(cli, ["catalog"])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("sin2d_decay", result.output)
        self.assertIn("zero", result.output)

    def test_appendix_ode(self):
        csv_path = self.path("ode.csv")
        json_path = self.path("ode.json")
        result = self.runner.invoke(
            cli, ["appendix-ode", "--csv", str(csv_path), "--json", str(json_path)]
        )
        self.assertEqual(result.exit_code, 0, result.output)
        rows = self.read_csv(csv_path)
        self.assertEqual(
            rows[0],
            ["lambda", "jump_E", "err_const_E", "err_affine_E", "err_mid_E", "ratio_const", "ratio_affine"],
        )
        self.assertEqual(len(rows), 8)
        self.assertEqual(float(rows[1][0]), 1e-3)
        report = json.loads(json_path.read_text(encoding="utf-8"))
        self.assertTrue(report["passed"])
        self.assertEqual(report["study"], "appendix-ode")
        self.assertEqual(report["config"]["problem"]["lambda"], 1.0)
        mode = report["configured_mode"]
        self.assertEqual(mode["steps"], 4)
        self.assertLess(mode["pythagoras_gap"], 1e-11)

    def test_convergence_single_level(self):
        csv_path = self.path("convergence.csv")
        config = self.config(
            {
                "mesh": {"family": "interval", "resolution": 4, "refinements": 0},
                "time": {"steps": 2},
                "problem": {"name": "sin1d_decay"},
            }
        )
        result = self.runner.invoke(cli, ["convergence", "-c", config, "--csv", str(csv_path)])
        self.assertEqual(result.exit_code, 0, result.output)
        header, row = self.read_csv(csv_path)
        self.assertEqual(header[-2:], ["eoc_err", "eoc_est"])
        self.assertEqual(row[-2:], ["", ""])
        values = dict(zip(header, row))
        self.assertGreater(float(values["est_total"]), 0.0)
        self.assertGreater(float(values["effectivity"]), 0.0)

    def test_upper_bound_with_threads(self):
        json_path = self.path("bound.json")
        config = self.config(
            {
                "mesh": {"family": "unit_square", "resolution": 2, "refinements": 1},
                "time": {"rule": "tau_eq_h"},
                "problem": {"name": "sin2d_decay"},
            }
        )
        result = self.runner.invoke(
            cli, ["upper-bound", "-c", config, "-t", "2", "--json", str(json_path), "--dump-flux"]
        )
        self.assertEqual(result.exit_code, 0, result.output)
        report = json.loads(json_path.read_text(encoding="utf-8"))
        self.assertEqual(len(report["levels"]), 2)
        self.assertIn("flux", report["levels"][0])
        self.assertEqual(report["config"]["solver"]["threads"], 2)

    @pytest.mark.slow
    def test_csv_identical_across_thread_counts(self):
        config = self.config(
            {
                "mesh": {"family": "unit_square", "resolution": 2, "refinements": 2},
                "time": {"rule": "tau_eq_h"},
                "problem": {"name": "sin2d_decay"},
            }
        )
        outputs = []
        for threads in ("1", "4"):
            csv_path = self.path(f"bound_{threads}.csv")
            result = self.runner.invoke(
                cli, ["upper-bound", "-c", config, "-t", threads, "--csv", str(csv_path)]
            )
            self.assertEqual(result.exit_code, 0, result.output)
            outputs.append(csv_path.read_bytes())
        self.assertEqual(outputs[0], outputs[1])

    def test_help_shows_defaults(self):
        result = self.runner.invoke(cli, ["solve", "--help"])
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("(INFO)", result.output)
        self.assertIn("(1)", result.output)

    def test_hypercircle(self):
        config = self.config({"problem": {"instances": 10, "max_steps": 4}})
        result = self.runner.invoke(cli, ["hypercircle", "-c", config])
        self.assertEqual(result.exit_code, 0, result.output)

    def test_invalid_configuration(self):
        config = self.config({"solver": {"flux_degree": 1}})
        result = self.runner.invoke(cli, ["solve", "-c", config])
        self.assertEqual(result.exit_code, 1)

    def test_dimension_mismatch(self):
        config = self.config({"mesh": {"family": "interval"}, "problem": {"name": "sin2d_decay"}})
        result = self.runner.invoke(cli, ["solve", "-c", config])
        self.assertEqual(result.exit_code, 1)

    def test_missing_config_file(self):
        result = self.runner.invoke(cli, ["solve", "-c", str(self.path("missing.json"))])
        self.assertEqual(result.exit_code, 2)


if __name__ == "__main__":
    unittest.main()
