"""
Refinement study subcommands: converge, run
"""

import os
import logging
from dataclasses import replace

from pimspec.cli import arg, cli, parse_n_list
from pimspec.cli.geometry import MANIFOLD_ARGS, PERTURB_ARGS, sample
from pimspec.cli.spectra import BANDWIDTH_ARGS, COMPARE_ARGS, SOLVER_ARGS, assemble, bandwidth_rule, compare, eigs
from pimspec.services.convergence import run_ladder, solve_count, write_report
from pimspec.utils.error_handlers import PimError, ValidationError, stage_error

logger = logging.getLogger(__name__)

DEFAULT_LADDER_MODES = 5

STUDY_ARGS = MANIFOLD_ARGS + PERTURB_ARGS + BANDWIDTH_ARGS + SOLVER_ARGS + COMPARE_ARGS + [
    arg('--n', type=parse_n_list, help='comma-separated ladder of sample counts, e.g. 125,250,500,1000'),
    arg('-m', '--modes', type=int, help=f'nonzero modes to compare (default {DEFAULT_LADDER_MODES})'),
    arg('-o', '--output', help='output directory'),
]


def _perturbation(config):
    if not (config.perturb or config.warp):
        return None
    return {'jitter': config.perturb or 0.0, 'seed': config.seed or 0, 'warp': config.warp or 0.0}


@cli.command('converge', help='eigenvalue and eigenfunction errors over a refinement ladder',
             arguments=STUDY_ARGS)
def converge(config):
    config.require('manifold', 'n', 'output')
    report = run_ladder(
        config.manifold, config.n, bandwidth_rule(config), kernel=config.kernel,
        modes=config.modes or DEFAULT_LADDER_MODES, params=config.params,
        graph_mode=bool(config.graph_mode), perturbation=_perturbation(config),
        lanczos=config.lanczos, tol=config.tol, rel_window=config.rel_window or 0.05,
        seminorm=bool(config.seminorm), threads=config.threads,
        deflate_constant=bool(config.deflate_constant), backend=config.backend,
        max_iter=config.max_iter, seed=config.lanczos_seed or 0,
    )
    write_report(report, config.output)
    failed = [level.n for level in report.levels if not level.ok]
    if failed:
        logger.warning(f"Ladder levels failed: {failed}")


def pipeline_run(config) -> str:
    """sample -> assemble -> eigs -> compare through files; returns the summary path

    Intermediate files land in <output>/levels/n<n>/ and the report in
    <output>/report/, identical to chaining the subcommands by hand.
    """
    config.require('manifold', 'n', 'output')
    modes = config.modes or DEFAULT_LADDER_MODES
    count = solve_count(config.manifold, config.params, modes)
    bandwidth_rule(config)

    spectra = []
    for n in config.n:
        level_dir = os.path.join(config.output, 'levels', f'n{n}')
        cloud_path = os.path.join(level_dir, 'cloud.csv')
        pencil_dir = os.path.join(level_dir, 'pencil')
        spectrum_path = os.path.join(level_dir, 'spectrum.json')

        stages = [
            ('sample', sample, replace(config, n=[n], output=cloud_path)),
            ('assemble', assemble, replace(config, input=[cloud_path], output=pencil_dir, jitter=None)),
            ('eigs', eigs, replace(config, input=[pencil_dir], output=spectrum_path, modes=count)),
        ]
        for stage, handler, stage_config in stages:
            try:
                handler(stage_config)
            except PimError as exc:
                raise stage_error(f'{stage} n={n}', exc)
        spectra.append(spectrum_path)

    report_dir = os.path.join(config.output, 'report')
    try:
        compare(replace(config, input=spectra, output=report_dir, modes=modes))
    except PimError as exc:
        raise stage_error('compare', exc)
    return os.path.join(report_dir, 'summary.json')


@cli.command('run', help='one-shot sample, assemble, eigs and compare for every ladder level',
             arguments=STUDY_ARGS)
def run(config):
    if config.n is not None and not config.n:
        raise ValidationError("run needs at least one --n")
    summary = pipeline_run(config)
    logger.info(f"Pipeline report written to {summary}")
