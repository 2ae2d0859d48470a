import functools
import logging

import click
import pandas as pd

from app.core.config_manager import ConfigManager
from app.core.exceptions import DSEError, NumericalError
from app.core.experiment_runner import ExperimentRunner
from app.core.metrics import format_table
from app.db import crud
from app.db.database import SessionLocal, init_db
from app.utils.utils import parse_overrides

logger = logging.getLogger("dse")

CONFIG_DIR = "configs"
OVERRIDE_CONTEXT = {"ignore_unknown_options": True, "allow_extra_args": True}


def guarded(command):
    """Maps toolkit errors to their exit codes with a one-line message."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except DSEError as e:
            logger.error(f"[{e.category}] {e}")
            ctx.exit(e.exit_code)
        except ValueError as e:
            logger.error(f"[config] {e}")
            ctx.exit(2)
        except Exception as e:
            logger.exception(f"[internal] {e}")
            ctx.exit(1)
    return wrapper


def _overrides(ctx: click.Context, seed=None, out=None, timing=None, workers=None):
    pairs = parse_overrides(ctx.args)
    if seed is not None:
        pairs.append(("seeds", [seed]))
    if out is not None:
        pairs.append(("out", out))
    if timing:
        pairs.append(("timing", True))
    if workers is not None:
        pairs.append(("workers", workers))
    return pairs


def _runner(ctx: click.Context) -> ExperimentRunner:
    return ExperimentRunner(ctx.obj["config_manager"], ctx.obj.get("db"))


@click.group()
@click.option("--config-dir", default=CONFIG_DIR, show_default=True, help="Directory holding the config kinds.")
@click.option("--registry", default=None, help="Run registry URL ('none' disables; default $DSE_REGISTRY_URL or sqlite:///runs.db).")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx, config_dir, registry, verbose):
    """Generator dynamic state estimation with cubature and robust cubature Kalman filters."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    ctx.ensure_object(dict)
    ctx.obj["config_manager"] = ConfigManager(config_dir=config_dir)
    if init_db(registry) is not None:
        db = SessionLocal()
        ctx.obj["db"] = db
        ctx.call_on_close(db.close)


@cli.command(context_settings=OVERRIDE_CONTEXT)
@click.argument("experiment")
@click.option("--seed", type=int, default=None, help="Run a single seed instead of the configured list.")
@click.option("--out", default=None, help="Output root directory.")
@click.pass_context
@guarded
def generate(ctx, experiment, seed, out):
    """Write the noisy dataset for every seed of EXPERIMENT (name or path)."""
    document = ctx.obj["config_manager"].experiment(experiment, _overrides(ctx, seed, out))
    for path in _runner(ctx).generate(document):
        click.echo(path)


@cli.command(context_settings=OVERRIDE_CONTEXT)
@click.argument("experiment")
@click.option("--seed", type=int, default=None, help="Run a single seed instead of the configured list.")
@click.option("--out", default=None, help="Output root directory.")
@click.option("--timing", is_flag=True, help="Record mean per-step wall time per filter.")
@click.option("--workers", type=int, default=None, help="Worker processes for the seeds.")
@click.pass_context
@guarded
def run(ctx, experiment, seed, out, timing, workers):
    """Run the configured filters over every seed of EXPERIMENT and report the indices."""
    document = ctx.obj["config_manager"].experiment(experiment, _overrides(ctx, seed, out, timing, workers))
    summary = _runner(ctx).run(document)
    if not summary.summary.empty:
        click.echo(format_table(summary.summary))
    for seed_value, filter_name, message in summary.failures:
        logger.error(f"[numerical] {filter_name}: {message}")
    if summary.failures:
        ctx.exit(NumericalError.exit_code)


@cli.command()
@click.argument("run_dirs", nargs=-1, required=True)
@click.option("--baseline", default="ckf", show_default=True, help="Baseline filter.")
@click.option("--candidate", default="rckf", show_default=True, help="Candidate filter.")
@click.option("--against", multiple=True, help="Take the candidate trace from these run directories instead.")
@click.option("--out", default=None, help="Directory for comparison.csv and plot data.")
@click.pass_context
@guarded
def compare(ctx, run_dirs, baseline, candidate, against, out):
    """Side-by-side indices and improvement percentages for runs in RUN_DIRS."""
    table = _runner(ctx).compare(run_dirs, baseline, candidate, against, out_dir=out)
    click.echo(format_table(table))


@cli.command(context_settings=OVERRIDE_CONTEXT)
@click.argument("experiment")
@click.option("--out", default=None, help="Output root directory.")
@click.option("--timing", is_flag=True, help="Record mean per-step wall time per filter.")
@click.option("--workers", type=int, default=None, help="Worker processes for the seeds.")
@click.pass_context
@guarded
def sweep(ctx, experiment, out, timing, workers):
    """Run EXPERIMENT once per noise family and print the comparison table."""
    document = ctx.obj["config_manager"].experiment(experiment, _overrides(ctx, None, out, timing, workers))
    summaries, table = _runner(ctx).sweep(document)
    if not table.empty:
        click.echo(format_table(table))
    failures = [f for s in summaries for f in s.failures]
    for seed_value, filter_name, message in failures:
        logger.error(f"[numerical] {filter_name}: {message}")
    if failures:
        ctx.exit(NumericalError.exit_code)


@cli.command()
@click.option("--experiment", default=None, help="Only runs of this experiment.")
@click.option("--clear", is_flag=True, help="Delete every recorded run.")
@click.pass_context
@guarded
def history(ctx, experiment, clear):
    """List runs recorded in the registry."""
    db = ctx.obj.get("db")
    if db is None:
        click.echo("Run registry is disabled.")
        return
    if clear:
        crud.clear_all_data(db)
        click.echo("Registry cleared.")
        return
    rows = [{"id": r.id, "experiment": r.experiment, "profile": r.profile, "seed": r.seed,
             "filter": r.filter_name, "status": r.status, "mean_step_ms": r.mean_step_ms,
             **{f"{m.variable}_{m.metric}": m.value for m in r.metrics if m.metric != "rmse"}}
            for r in crud.get_all_runs(db, experiment)]
    if not rows:
        click.echo("No runs recorded.")
        return
    click.echo(format_table(pd.DataFrame(rows)))


if __name__ == "__main__":
    cli()
