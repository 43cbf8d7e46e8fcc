import json
import math

import click
from flask import Blueprint

from config import Config
from core.compander_service import CompanderService
from core.experiment_service import ExperimentService
from core.plevel_service import PLevelService
from core.sensing_service import SensingService
from core.solver_service import SolverService
from models.experiment import ExperimentKind, ExperimentSpec
from models.quantizer import GaussianSource, exponent_to_str, parse_exponent

cli_bp = Blueprint('cli', __name__, cli_group=None)


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")


def _exponent_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [parse_exponent(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated exponents, got {value!r}")


def experiment_options(func):
    """Flags shared by every harness command; they mirror ExperimentSpec fields"""
    options = [
        click.option('--N', 'N', type=int, default=None, help='Ambient dimension'),
        click.option('--K', 'K', type=int, default=None, help='Sparsity'),
        click.option('--B', 'B', type=int, default=None, help='Bits per measurement'),
        click.option('--ratios', 'oversampling_list', callback=_int_list, default=None,
                     help='Comma-separated M/K ratios'),
        click.option('--p-list', 'p_list', callback=_exponent_list, default=None,
                     help='Comma-separated fidelity exponents (inf allowed)'),
        click.option('--trials', type=int, default=None),
        click.option('--seed', 'master_seed', type=int, default=None, help='Master seed'),
        click.option('--radius-mode', type=click.Choice(['LEMMA3', 'ORACLE']), default=None),
        click.option('--workers', type=int, default=None, help='Worker processes'),
        click.option('--output', 'output_path', type=click.Path(), default=None,
                     help='Output directory'),
        click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
                     default=None, help='JSON experiment spec, merged over the flags'),
        click.option('--paper-scale', is_flag=True, help='Full-size grids and trial counts'),
        click.option('--quiet', is_flag=True, help='No progress bars'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _run_experiment(kind: ExperimentKind, config_path=None, paper_scale=False, quiet=False, **flags):
    overrides = {k: v for k, v in flags.items() if v is not None}
    if config_path:
        with open(config_path, encoding='utf-8') as f:
            overrides.update(json.load(f))
        overrides.pop('kind', None)
    spec = ExperimentSpec.defaults(kind, paper_scale=paper_scale, **overrides)
    result = ExperimentService(progress=not quiet).execute(spec)

    for row in result.summary[:60]:
        click.echo('  '.join(f"{k}={_short(v)}" for k, v in row.items()))
    if len(result.summary) > 60:
        click.echo(f"  ... {len(result.summary) - 60} more rows in summary.csv")
    for name, path in result.paths.items():
        click.echo(f"✓ {name}: {path}")
    if result.failures:
        click.echo(f"⚠️  {result.failures} failed trial(s) excluded from aggregates")
    return result


def _short(value):
    if isinstance(value, float):
        return f"{value:.4g}"
    return value


@cli_bp.cli.command('design')
@click.option('--B', 'B', type=int, default=4, show_default=True)
@click.option('--sigma0', type=float, default=1.0, show_default=True)
@click.option('--json', 'as_json', is_flag=True, help='Print the quantizer as JSON')
def design(B, sigma0, as_json):
    """Design the B-bit companded quantizer for N(0, sigma0^2)"""
    q = CompanderService.design_quantizer(B, GaussianSource(sigma0))
    if as_json:
        click.echo(json.dumps(q.to_dict(), indent=2))
        return
    click.echo(f"B={q.B} sigma0={q.sigma0} alpha={q.alpha}")
    click.echo(f"{'k':>5} {'t_k':>14} {'w_k':>14}")
    for k in range(1, q.n_bins + 1):
        click.echo(f"{k:>5} {q.thresholds[k - 1]:>14.8g} {q.levels[k - 1]:>14.8g}")
    click.echo(f"Panter-Dite MSE: {CompanderService.panter_dite_mse(q):.6g}")


@cli_bp.cli.command('plevels')
@click.option('--B', 'B', type=int, default=4, show_default=True)
@click.option('--p', 'p', default='4', show_default=True, help='Exponent (integer >= 2 or inf)')
@click.option('--sigma0', type=float, default=1.0, show_default=True)
@click.option('--n-quad', type=int, default=None, help='Odd number of Simpson points')
@click.option('--json', 'as_json', is_flag=True)
def plevels(B, p, sigma0, n_quad, as_json):
    """p-optimal levels of every bin"""
    q = CompanderService.design_quantizer(B, GaussianSource(sigma0))
    table = PLevelService(n_quad=n_quad).plevel_table(parse_exponent(p), q)
    if as_json:
        click.echo(json.dumps(table.to_dict(), indent=2))
        return
    click.echo(f"B={q.B} p={exponent_to_str(table.p)} sigma0={q.sigma0}")
    click.echo(f"{'k':>5} {'w_k':>14} {'w_k,p':>14} {'newton':>7}")
    for k in range(1, q.n_bins + 1):
        click.echo(f"{k:>5} {q.levels[k - 1]:>14.8g} {table.plevels[k - 1]:>14.8g} "
                   f"{table.newton_iters[k - 1]:>7}")


@cli_bp.cli.command('eps-validate')
@experiment_options
@click.option('--M', 'M', type=int, default=None, help='Measurements per trial')
@click.option('--B-list', 'B_list', callback=_int_list, default=None)
def eps_validate(**kwargs):
    """Monte-Carlo check of the D_pC radius eps_p

    Desk and --paper-scale grids are the same here (M=1024, B in 3,4,5,
    p = 2..15, 1000 trials). Nothing is solved, so the full grid stays cheap.
    Pass --trials to shorten it.
    """
    _run_experiment(ExperimentKind.EPS_VALIDATE, **kwargs)


@cli_bp.cli.command('qcs-sweep')
@experiment_options
@click.option('--uniform-baseline', is_flag=True, default=None,
              help='Also solve the uniform-quantizer baseline')
def qcs_sweep(**kwargs):
    """Reconstruction SNR over (M/K, p) for quantized compressed sensing"""
    _run_experiment(ExperimentKind.QCS_SWEEP, **kwargs)


@cli_bp.cli.command('ggd-stab')
@experiment_options
@click.option('--sigma0', type=float, default=None, help='Mean noise standard deviation')
@click.option('--delta0', type=float, default=None, help='Half-width of the noise std range')
def ggd_stab(**kwargs):
    """Heteroscedastic noise: stabilized (w = 1/sigma) against unweighted decoding"""
    _run_experiment(ExperimentKind.GGD_STAB, **kwargs)


@cli_bp.cli.command('qc-hist')
@experiment_options
def qc_hist(**kwargs):
    """Histogram of compressed-domain residuals of the reconstructions"""
    _run_experiment(ExperimentKind.QC_HIST, **kwargs)


@cli_bp.cli.command('uniform-compare')
@experiment_options
def uniform_compare(**kwargs):
    """SNR gain of the non-uniform quantizer over the uniform one at equal p"""
    _run_experiment(ExperimentKind.UNIFORM_COMPARE, **kwargs)


@cli_bp.cli.command('project-test')
@click.option('--instances', type=int, default=200, show_default=True)
@click.option('--sizes', callback=_int_list, default='2,5,20', show_default=True)
@click.option('--p-list', 'p_list', callback=_exponent_list, default='3,4,7', show_default=True)
@click.option('--seed', type=int, default=None)
def project_test(instances, sizes, p_list, seed):
    """Check lp-ball projections against the bisection result, KKT and idempotence"""
    seed = Config.MASTER_SEED if seed is None else seed
    worst = {'oracle_distance': 0.0, 'kkt_residual': 0.0, 'idempotence_error': 0.0, 'sphere_error': 0.0}
    with click.progressbar(range(instances), label='projections') as bar:
        for i in bar:
            rng = SensingService.stream(seed, i)
            M = sizes[i % len(sizes)]
            p = p_list[(i // len(sizes)) % len(p_list)]
            v = rng.standard_normal(M) * rng.uniform(0.5, 5.0)
            radius = float(rng.uniform(0.1, 1.0))
            check = SolverService.projection_self_check(v, p, radius)
            for key in worst:
                worst[key] = max(worst[key], check[key])
    limits = {'oracle_distance': 1e-6, 'kkt_residual': 1e-8, 'idempotence_error': 1e-12,
              'sphere_error': Config.PROJECTION_TOL * 10}
    failed = False
    for key, value in worst.items():
        ok = value <= limits[key]
        failed |= not ok
        click.echo(f"{'✓' if ok else '✗'} max {key}: {value:.3g} (limit {limits[key]:.0e})")
    if failed or any(math.isnan(v) for v in worst.values()):
        raise SystemExit(1)
