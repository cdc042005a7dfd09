from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from colorama import Fore, Style
from prettytable import PrettyTable

from heat_estimator.equilibration import EquilibratedFlux
from heat_estimator.estimators import EffectivityStudy, EstimatorReport
from heat_estimator.log import logger
from heat_estimator.semidiscrete import CounterexampleSweep

CONVERGENCE_COLUMNS = (
    "level",
    "h_max",
    "tau_max",
    "gamma_realized",
    "err_energy",
    "err_X_const",
    "err_X_affine",
    "est_jump",
    "est_flux",
    "est_total",
    "osc_upper",
    "effectivity",
    "eoc_err",
    "eoc_est",
)

MODE_COLUMNS = (
    "lambda",
    "jump_E",
    "err_const_E",
    "err_affine_E",
    "err_mid_E",
    "ratio_const",
    "ratio_affine",
)


def format_value(value: Any) -> str:
    """CSV cell text; floats keep all 17 significant digits, None is blank."""
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def convergence_rows(
    reports: Sequence[EstimatorReport], study: EffectivityStudy
) -> list[dict[str, Any]]:
    rows = []
    for report, row in zip(reports, study.rows):
        rows.append(
            {
                "level": row.level,
                "h_max": report.h_max,
                "tau_max": report.tau_max,
                "gamma_realized": report.gamma_realized,
                "err_energy": report.err_energy,
                "err_X_const": report.err_X_const,
                "err_X_affine": report.err_X_affine,
                "est_jump": report.est_jump,
                "est_flux": report.est_flux,
                "est_total": report.total_estimator,
                "osc_upper": report.osc_total,
                "effectivity": report.effectivity,
                "eoc_err": row.eoc_err,
                "eoc_est": row.eoc_est,
            }
        )
    return rows


def mode_rows(sweep: CounterexampleSweep) -> list[dict[str, Any]]:
    return [
        {
            "lambda": row.lam,
            "jump_E": row.jump_E,
            "err_const_E": row.err_const_E,
            "err_affine_E": row.err_affine_E,
            "err_mid_E": row.err_mid_E,
            "ratio_const": row.ratio_const,
            "ratio_affine": row.ratio_affine,
        }
        for row in sweep.rows
    ]


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(column)) for column in columns])
    logger.info(f"Wrote CSV to {path}")


def report_to_dict(
    report: EstimatorReport, flux: EquilibratedFlux | None = None
) -> dict[str, Any]:
    """JSON-ready view of a report with per-interval detail.

    With `flux` given, the RTN coefficients per interval and cell are added.
    """
    data: dict[str, Any] = {
        "h_max": report.h_max,
        "tau_max": report.tau_max,
        "gamma_realized": report.gamma_realized,
        "data_scale": report.data_scale,
        "est_jump": report.est_jump,
        "est_flux": report.est_flux,
        "est_total": report.total_estimator,
        "osc_upper": report.osc_total,
        "err_energy": report.err_energy,
        "err_X_const": report.err_X_const,
        "err_X_affine": report.err_X_affine,
        "effectivity": report.effectivity,
        "quantifier_E": report.quantifier_E,
        "per_interval": [
            {
                "index": item.index,
                "t_start": item.t_start,
                "t_end": item.t_end,
                "jump_sq": item.jump_sq,
                "flux_sq": item.flux_sq,
                "osc_sq": item.osc_sq,
            }
            for item in report.per_interval
        ],
    }
    if report.flux_sq_per_cell is not None:
        data["flux_sq_per_cell"] = report.flux_sq_per_cell.tolist()
    if flux is not None:
        data["flux"] = {
            "degree": flux.basis.degree,
            "coefficients": flux.per_interval.tolist(),
            "mean_multipliers": flux.mean_multipliers.tolist(),
        }
    return data


def write_json(path: Path, payload: dict[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as writer:
        json.dump(payload, writer, indent=2)
    logger.info(f"Wrote JSON report to {path}")


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.4e}"
    return str(value)


def print_table(columns: Sequence[str], rows: Iterable[dict[str, Any]]) -> None:
    table = PrettyTable(list(columns))
    for row in rows:
        table.add_row([_cell(row.get(column)) for column in columns])
    print(table)


def print_status(passed: bool, message: str) -> None:
    color = Fore.GREEN if passed else Fore.RED
    label = "PASS" if passed else "FAIL"
    print(f"{color}[{label}]{Style.RESET_ALL} {message}")
