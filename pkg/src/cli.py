# src/cli.py
"""CLI module for Fair GLM.

This module provides:
- cli: Main Click command group (the `fairglm` console script)
- sweep: Replicated lambda sweep writing trajectory files
- fit: Single fit on one split
- consistency-sim: Monte-Carlo consistency check
- config: Command group for configuration

Exit codes: 0 on success, 1 on solver or storage failures, 2 on
configuration errors, 3 on data errors.
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import numpy as np
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from src import __version__
from src.config import (
    DEFAULT_GRADIENT_TOLERANCE,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_THREADS,
    LOG_LEVEL,
    configure_logging,
)
from src.errors import ConfigurationError, DataError, FairGLMError
from src.models import KappaPolicy, LambdaRule, SegmentationStrategy, SweepConfig

# Create Rich console for output
console = Console()


# =============================================================================
# CLI Configuration
# =============================================================================

EXIT_FAILURE = 1
EXIT_CONFIGURATION = 2
EXIT_DATA = 3

STRATEGIES = [s.value for s in SegmentationStrategy]
KAPPA_POLICIES = [k.value for k in KappaPolicy]
SIM_FAMILIES = ['gaussian', 'bernoulli', 'poisson']


def _parse_floats(text: str, option: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigurationError(f"{option} must be a comma-separated list of numbers, got '{text}'")


def _parse_ints(text: str, option: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigurationError(f"{option} must be a comma-separated list of integers, got '{text}'")


def _load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path) as f:
            loaded = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigurationError(f"cannot load config file {path}: {e}")
    if not isinstance(loaded, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    return loaded


def _fail(ctx: click.Context, error: Exception) -> None:
    """Report an error and exit with its code."""
    if isinstance(error, (ConfigurationError, ValidationError)):
        console.print(f"[red]Configuration error: {error}[/red]")
        ctx.exit(EXIT_CONFIGURATION)
    if isinstance(error, DataError):
        console.print(f"[red]Data error: {error}[/red]")
        ctx.exit(EXIT_DATA)
    console.print(f"[red]Error: {error}[/red]")
    ctx.exit(EXIT_FAILURE)


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None or (isinstance(value, float) and np.isnan(value)) else f"{value:.6g}"


# =============================================================================
# Main CLI Group
# =============================================================================

@click.group()
@click.version_option(version=__version__, prog_name='fairglm')
@click.option('--verbose', '-v', is_flag=True, help='Log at DEBUG level')
def cli(verbose: bool):
    """Fair generalized linear models.

    Fits GLMs with a convex fairness penalty and traces the trade-off
    between prediction performance and group disparities.
    """
    configure_logging('DEBUG' if verbose else None)


# =============================================================================
# Sweep Command
# =============================================================================

@cli.command()
@click.option('--schema', 'schema_path', type=click.Path(), help='Dataset schema (JSON)')
@click.option('--data', 'data_path', type=click.Path(), help='Dataset CSV')
@click.option('--test-data', 'test_data_path', type=click.Path(), help='Predefined test split CSV')
@click.option('--out', 'out_dir', type=click.Path(), default=DEFAULT_OUTPUT_DIR, show_default=True,
              help='Output directory')
@click.option('--config', '-c', 'config_file', type=click.Path(exists=True),
              help='YAML file with sweep settings; flags override it')
@click.option('--lambda-grid', help='Comma-separated ascending lambda values')
@click.option('--replicates', type=int, help='Number of random splits')
@click.option('--seed', type=int, help='Master seed')
@click.option('--test-fraction', type=float, help='Share of rows held out')
@click.option('--max-segments', type=int, help='Upper bound on continuous outcome segments')
@click.option('--strategy', type=click.Choice(STRATEGIES), help='Continuous discretization strategy')
@click.option('--kappa', 'kappa_policy', type=click.Choice(KAPPA_POLICIES), help='Penalty normalizer policy')
@click.option('--exact-pairs', is_flag=True, help='Build D from explicit pairwise differences')
@click.option('--pair-cap', type=int, help='Per-cell cap on pairs via row subsampling')
@click.option('--plain-split', is_flag=True, help='Unstratified random splits')
@click.option('--penalty-cache', type=click.Path(), help='Directory caching penalty matrices')
@click.option('--threads', type=int, help='Worker threads')
@click.pass_context
def sweep(ctx: click.Context, out_dir: str, config_file: Optional[str], lambda_grid: Optional[str],
          exact_pairs: bool, plain_split: bool, **flags):
    """Run a replicated lambda sweep.

    Writes trajectory.csv, summary.csv and manifest.json to the output
    directory.

    Examples:
        fairglm sweep --schema schemas/compas.json --data compas.csv --out runs/compas
        fairglm sweep --config sweep.yaml --threads 4
    """
    from src import experiment

    try:
        settings = _load_config_file(config_file)
        settings.setdefault('threads', DEFAULT_THREADS)
        settings.setdefault('max_iterations', DEFAULT_MAX_ITERATIONS)
        settings.setdefault('gradient_tolerance', DEFAULT_GRADIENT_TOLERANCE)
        settings.update({k: v for k, v in flags.items() if v is not None})
        if exact_pairs:
            settings['exact_pairs'] = True
        if lambda_grid is not None:
            settings['lambda_grid'] = _parse_floats(lambda_grid, '--lambda-grid')
        if plain_split:
            settings['stratified'] = False

        config = SweepConfig(**settings)
        console.print(f"[blue]Sweeping {len(config.lambda_grid)} lambda value(s) "
                      f"over {config.replicates} replicate(s)...[/blue]")
        result = experiment.run_sweep(config)
        if not result.points:
            raise DataError("every replicate was skipped: "
                            + "; ".join(result.skipped_replicates.values()))
        paths = experiment.write_outputs(result, out_dir)
    except (FairGLMError, ValidationError) as e:
        _fail(ctx, e)
        return

    summary = experiment.summarize(result.to_frame())
    table = Table(title="Trade-off Summary (test split, mean over replicates)")
    table.add_column("lambda", style="cyan", justify="right")
    table.add_column("NLL", justify="right")
    table.add_column("D_ELL", justify="right")
    table.add_column("D_EO", justify="right")
    table.add_column("train penalty", justify="right", style="dim")
    for _, row in summary.iterrows():
        table.add_row(
            _fmt(row['lam']), _fmt(row['test_nll_mean']), _fmt(row['test_d_ell_mean']),
            _fmt(row['test_d_eo_mean']), _fmt(row['train_penalty_mean']),
        )
    console.print(table)

    notes = [f"Trajectory: {paths['trajectory']}", f"Summary: {paths['summary']}",
             f"Manifest: {paths['manifest']}"]
    if result.skipped_replicates:
        notes.append(f"[yellow]Skipped replicates: {len(result.skipped_replicates)}[/yellow]")
    if result.manifest['monotonicity_violations']:
        notes.append(f"[yellow]Monotonicity violations: "
                     f"{len(result.manifest['monotonicity_violations'])}[/yellow]")
    console.print(Panel("\n".join(notes), title="Sweep Complete", border_style="green"))


# =============================================================================
# Fit Command
# =============================================================================

@cli.command()
@click.option('--schema', 'schema_path', type=click.Path(), required=True, help='Dataset schema (JSON)')
@click.option('--data', 'data_path', type=click.Path(), required=True, help='Dataset CSV')
@click.option('--test-data', 'test_data_path', type=click.Path(), help='Predefined test split CSV')
@click.option('--lambda', 'lam', type=float, default=0.0, show_default=True, help='Penalty weight')
@click.option('--seed', type=int, default=0, show_default=True, help='Split seed')
@click.option('--test-fraction', type=float, default=0.3, show_default=True)
@click.option('--max-segments', type=int, default=100, show_default=True)
@click.option('--strategy', type=click.Choice(STRATEGIES), default='equal_counts', show_default=True)
@click.option('--kappa', 'kappa_policy', type=click.Choice(KAPPA_POLICIES), default='nominal', show_default=True)
@click.option('--exact-pairs', is_flag=True, help='Build D from explicit pairwise differences')
@click.option('--plain-split', is_flag=True, help='Unstratified random split')
@click.option('--save-penalty', type=click.Path(), help='Write the binary penalty matrix dump here')
@click.pass_context
def fit(ctx: click.Context, lam: float, plain_split: bool, save_penalty: Optional[str], **options):
    """Fit one lambda on one split and report coefficients and metrics.

    Examples:
        fairglm fit --schema schemas/compas.json --data compas.csv --lambda 1.0
    """
    from src import experiment
    from src.dataset import load_csv, load_schema
    from src.storage import RunStore

    try:
        config = SweepConfig(
            lambda_grid=[lam],
            replicates=1,
            stratified=not plain_split,
            max_iterations=DEFAULT_MAX_ITERATIONS,
            gradient_tolerance=DEFAULT_GRADIENT_TOLERANCE,
            **options,
        )
        schema = load_schema(config.schema_path)
        data = load_csv(config.data_path, schema)
        test_data = load_csv(config.test_data_path, schema) if config.test_data_path else None
        context = experiment.prepare_replicate(data, config, 0, test_data)
        model, point = experiment.fit_single(context, config.fit_config(lam))
        if save_penalty:
            target = Path(save_penalty)
            with RunStore(target.parent) as store:
                store.save_penalty(target.name, context.penalty)
    except (FairGLMError, ValidationError) as e:
        _fail(ctx, e)
        return

    coefficients = Table(title=f"Coefficients (lambda={lam:g})")
    coefficients.add_column("Column", style="cyan")
    beta = np.asarray(model.beta).reshape(context.train.p, -1)
    class_labels = context.train.encoder_state.class_labels
    headers = [f"class {c}" for c in class_labels[1:]] if class_labels and beta.shape[1] > 1 else ["beta"]
    for header in headers:
        coefficients.add_column(header, justify="right")
    for name, row in zip(context.train.column_names, beta):
        coefficients.add_row(name, *[f"{v:.6g}" for v in row])
    console.print(coefficients)

    metrics = Table(title="Evaluation")
    metrics.add_column("Metric", style="cyan")
    metrics.add_column("Value", style="green", justify="right")
    for label, value in [
        ("train NLL", point.train_nll), ("test NLL", point.test_nll),
        ("test D_ELL", point.test_d_ell), ("test D_EO", point.test_d_eo),
        ("test MSE", point.test_mse), ("test MAE", point.test_mae),
        ("test AUROC", point.test_auroc), ("test misclassification", point.test_misclassification),
        ("train penalty", point.train_penalty), ("segments", float(point.n_segments)),
        ("iterations", float(point.iterations)),
    ]:
        if value is not None:
            metrics.add_row(label, _fmt(value))
    metrics.add_row("converged", "yes" if point.converged else "[yellow]no[/yellow]")
    console.print(metrics)


# =============================================================================
# Consistency Simulation Command
# =============================================================================

@cli.command('consistency-sim')
@click.option('--family', type=click.Choice(SIM_FAMILIES), default='gaussian', show_default=True)
@click.option('--group-gap', type=float, default=1.0, show_default=True,
              help='Per-coordinate gap between group feature means')
@click.option('--n-grid', default='1000,10000', show_default=True, help='Comma-separated sample sizes')
@click.option('--lambda0', type=float, default=1.0, show_default=True)
@click.option('--lambda-rule', type=click.Choice([r.value for r in LambdaRule]),
              default='inverse_sqrt', show_default=True)
@click.option('--trials', type=int, default=50, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--features', 'n_features', type=int, default=3, show_default=True)
@click.option('--threads', type=int, default=DEFAULT_THREADS, show_default=True)
@click.option('--out', 'out_dir', type=click.Path(), help='Write consistency.csv to this directory')
@click.pass_context
def consistency_sim(ctx: click.Context, n_grid: str, out_dir: Optional[str], **options):
    """Check that estimates and D converge as n grows."""
    from src import experiment
    from src.storage import RunStore

    try:
        report = experiment.run_consistency_sim(n_grid=_parse_ints(n_grid, '--n-grid'), **options)
        if out_dir:
            with RunStore(out_dir) as store:
                store.save_table("consistency.csv", report.to_frame())
    except FairGLMError as e:
        _fail(ctx, e)
        return

    table = Table(title=f"Consistency ({report.family.value}, gap={report.group_gap:g})")
    table.add_column("n", style="cyan", justify="right")
    table.add_column("lambda", justify="right")
    table.add_column("|beta - beta*|", justify="right")
    table.add_column("|D - Delta|_F", justify="right")
    table.add_column("|beta - beta_glm|", justify="right")
    table.add_column("converged", justify="right", style="dim")
    for point in report.points:
        table.add_row(
            str(point.n), _fmt(point.lam), _fmt(point.beta_error), _fmt(point.penalty_error),
            _fmt(point.glm_gap), f"{point.converged_fraction:.0%}",
        )
    console.print(table)
    if len(report.points) > 1:
        console.print(f"[dim]Error ratio (largest n / smallest n): {report.error_ratio():.3f}[/dim]")


# =============================================================================
# Config Command Group
# =============================================================================

@cli.group()
def config():
    """Inspect configuration settings."""
    pass


@config.command('show')
def config_show():
    """Show the effective environment-driven configuration."""
    table = Table(title="Configuration")
    table.add_column("Setting", style="cyan")
    table.add_column("Value", style="green")
    table.add_column("Source", style="dim")

    settings = [
        ('FAIRGLM_LOG_LEVEL', LOG_LEVEL),
        ('FAIRGLM_THREADS', DEFAULT_THREADS),
        ('FAIRGLM_OUTPUT_DIR', DEFAULT_OUTPUT_DIR),
        ('FAIRGLM_MAX_ITERATIONS', DEFAULT_MAX_ITERATIONS),
        ('FAIRGLM_GRADIENT_TOLERANCE', DEFAULT_GRADIENT_TOLERANCE),
    ]
    for name, value in settings:
        source = 'environment' if os.environ.get(name) else 'default'
        table.add_row(name, str(value), source)

    console.print(table)


# =============================================================================
# Entry Point
# =============================================================================

if __name__ == '__main__':
    cli()
