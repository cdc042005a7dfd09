import sys
from importlib import metadata

import click
from pydantic import ValidationError

from heat_estimator.catalog import catalog as catalog_entries
from heat_estimator.errors import HeatEstimatorError, NumericFailure
from heat_estimator.log import logger, set_logger_level_from_config
from heat_estimator.report import print_table
from heat_estimator.runner import Runner
from heat_estimator.settings import LogLevel, SettingsManager, StudyKind

try:
    version_number = metadata.version("heat-estimator")
except metadata.PackageNotFoundError:
    version_number = "0.0.0"


@click.group()
@click.version_option(version_number)
def cli():
    """Guaranteed a posteriori error estimation for the implicit-Euler heat equation."""
    pass


def handle_setting_error(e: ValidationError):
    """Print each configuration error and stop with a usage message."""
    for error in e.errors():
        field = ".".join(str(part) for part in error["loc"])
        message = click.style(f"`{field}`: {error['msg']}", fg="yellow")
        click.echo(message, err=True, color=True)
    raise click.ClickException(
        click.style("Program terminated due to configuration errors.", fg="red", bold=True)
    )


def study_options(func):
    """Options shared by every study command."""
    options = [
        click.option(
            "--config",
            "-c",
            "config_path",
            default=None,
            help="JSON configuration file; missing keys take the defaults of `Setting`.",
            show_default="built-in settings",
            type=click.Path(exists=True, dir_okay=False),
        ),
        click.option(
            "--threads",
            "-t",
            default=None,
            help="Worker threads for patch solves (overrides solver.threads).",
            show_default="1",
            type=click.IntRange(min=1),
        ),
        click.option(
            "--csv",
            "csv_path",
            default=None,
            help="Write the result table to this CSV file.",
            show_default=True,
            type=click.Path(dir_okay=False),
        ),
        click.option(
            "--json",
            "json_path",
            default=None,
            help="Write the full report, with the configuration echoed, to this JSON file.",
            show_default=True,
            type=click.Path(dir_okay=False),
        ),
        click.option(
            "--dump-flux",
            is_flag=True,
            default=False,
            show_default=True,
            help="Include the equilibrated flux coefficients in the JSON report.",
        ),
        click.option(
            "--log-level",
            "-ll",
            default=None,
            help="Logging level (overrides output.log_level).",
            show_default="INFO",
            type=click.Choice([level.value for level in LogLevel], case_sensitive=False),
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def run_study(study: StudyKind, config_path, threads, csv_path, json_path, dump_flux, log_level):
    try:
        setting = SettingsManager.initialize_with_params(
            study=study,
            config_path=config_path,
            threads=threads,
            csv_path=csv_path,
            json_path=json_path,
            dump_flux=dump_flux,
            log_level=log_level,
        )
        set_logger_level_from_config(log_level=setting.output.log_level)
    except ValidationError as e:
        handle_setting_error(e)
        return
    except ValueError as e:
        raise click.ClickException(f"Invalid configuration: {e}")

    try:
        result = Runner(setting).run()
    except NumericFailure as e:
        step = f" at time step {e.step}" if e.step is not None else ""
        logger.error(
            "Solver failed{}: residual {:.3e} after {} iterations", step, e.residual, e.iterations
        )
        raise click.ClickException(str(e))
    except HeatEstimatorError as e:
        logger.error("{}: {}", type(e).__name__, e)
        raise click.ClickException(str(e))
    except (KeyError, ValueError) as e:
        raise click.ClickException(f"Invalid study setup: {e}")

    if not result.passed:
        sys.exit(1)
    logger.success(f"Study {study} completed.")


def _register(study: StudyKind, summary: str):
    def command(config_path, threads, csv_path, json_path, dump_flux, log_level):
        run_study(study, config_path, threads, csv_path, json_path, dump_flux, log_level)

    command.__doc__ = summary
    cli.command(name=str(study))(study_options(command))


_register(StudyKind.SOLVE, "Solve one problem and report the estimator per time interval.")
_register(StudyKind.CONVERGENCE, "Refinement sweep with errors, estimators and EOCs.")
_register(StudyKind.UPPER_BOUND, "Check error <= estimator + oscillation on every level.")
_register(StudyKind.EFFECTIVITY, "Check bounded effectivity indices over a sweep.")
_register(StudyKind.APPENDIX_ODE, "Single-mode counterexample: estimator/error ratios over lambda.")
_register(StudyKind.HYPERCIRCLE, "Pythagoras and hypercircle identities on random single modes.")
_register(StudyKind.RESIDUAL_IDENTITY, "Check the discrete residual identity for random test fields.")


@cli.command()
def catalog():
    """List the manufactured solutions."""
    rows = [
        {
            "name": entry.name,
            "dimension": entry.dimension if entry.dimension is not None else "any",
            "description": entry.description,
        }
        for entry in catalog_entries()
    ]
    print_table(("name", "dimension", "description"), rows)


if __name__ == "__main__":
    cli()
