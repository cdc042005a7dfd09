import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from pydantic import ValidationError

from heat_estimator.settings import (
    LogLevel,
    Setting,
    SettingsManager,
    SolverSettings,
    StudyKind,
    TimeRule,
)


class TestSetting(unittest.TestCase):
    def test_defaults(self):
        setting = Setting()
        self.assertEqual(setting.study, StudyKind.SOLVE)
        self.assertEqual(setting.solver.flux_degree, 2)
        self.assertEqual(setting.solver.thread_count, 1)
        self.assertEqual(setting.check.effectivity_bounds, (0.5, 10.0))
        self.assertEqual(setting.output.log_level, LogLevel.INFO)

    def test_aliases(self):
        setting = Setting(
            time={"T": 2.0, "rule": "tau_eq_h"},
            problem={"lambda": 0.5},
            output={"csv": "out.csv"},
        )
        self.assertEqual(setting.time.final_time, 2.0)
        self.assertEqual(setting.time.rule, TimeRule.TAU_EQ_H)
        self.assertEqual(setting.problem.lam, 0.5)
        self.assertEqual(setting.output.csv_path, Path("out.csv"))
        dumped = setting.model_dump(mode="json", by_alias=True)
        self.assertEqual(dumped["time"]["T"], 2.0)

    def test_invalid_values(self):
        with self.assertRaises(ValidationError):
            Setting(solver={"flux_degree": 1})
        with self.assertRaises(ValidationError):
            Setting(solver={"threads": 0})
        with self.assertRaises(ValidationError):
            Setting(time={"rule": "tau_eq_h_cubed"})
        with self.assertRaises(ValidationError):
            Setting(output={"log_level": "verbose"})

    def test_log_level_is_case_insensitive(self):
        self.assertEqual(Setting(output={"log_level": "debug"}).output.log_level, LogLevel.DEBUG)

    def test_auto_threads(self):
        with patch("heat_estimator.settings.os.cpu_count", return_value=6):
            self.assertEqual(SolverSettings(threads="auto").thread_count, 6)

    def test_environment(self):
        with patch.dict(os.environ, {"HEAT_ESTIMATOR_SOLVER__THREADS": "3"}):
            self.assertEqual(Setting().solver.thread_count, 3)


class TestSettingsManager(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, payload) -> Path:
        path = Path(self.tmp.name) / "study.json"
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    def test_initialize_from_file(self):
        path = self.write({"mesh": {"family": "interval", "resolution": 8}})
        setting = SettingsManager.initialize_from_file(path)
        self.assertEqual(setting.mesh.resolution, 8)
        self.assertIs(SettingsManager.get_setting(), setting)

    def test_command_line_overrides(self):
        path = self.write({"solver": {"threads": 2}, "output": {"csv": "a.csv"}})
        setting = SettingsManager.initialize_with_params(
            study="convergence",
            config_path=path,
            threads=4,
            csv_path=Path("b.csv"),
            dump_flux=True,
            log_level="warning",
        )
        self.assertEqual(setting.study, StudyKind.CONVERGENCE)
        self.assertEqual(setting.solver.thread_count, 4)
        self.assertEqual(setting.output.csv_path, Path("b.csv"))
        self.assertTrue(setting.output.dump_flux)
        self.assertEqual(setting.output.log_level, LogLevel.WARNING)

    def test_config_must_be_an_object(self):
        path = self.write([1, 2, 3])
        with self.assertRaises(ValueError):
            SettingsManager.initialize_with_params(study="solve", config_path=path)


if __name__ == "__main__":
    unittest.main()
