"""
Pencil and spectrum subcommands: assemble, eigs, compare
"""

import logging

from pimspec.cli import arg, cli
from pimspec.config import Config
from pimspec.services.assembly import assemble_pencil, spectral_shift_check
from pimspec.services.convergence import BandwidthRule, ConvergenceReport, compare_spectrum, report_config, write_report
from pimspec.services.eigensolve import solve_spectrum
from pimspec.services.kernels import KERNEL_FAMILIES
from pimspec.services.storage import read_cloud_csv, read_pencil, read_spectrum, write_pencil, write_spectrum
from pimspec.utils.error_handlers import ValidationError
from pimspec.utils.performance import timed_stage

logger = logging.getLogger(__name__)

DEFAULT_MODES = 10

JITTER_ARG = arg('--jitter', type=float, nargs='?', const=Config.JITTER_FALLBACK, metavar='EPS',
                 help=f'add EPS*trace(B)/n to the mass diagonal (bare flag: {Config.JITTER_FALLBACK:g})')

BANDWIDTH_ARGS = [
    arg('--t', type=float, help='fixed bandwidth t'),
    arg('--t-rule', dest='t_rule', help="bandwidth rule such as 'c*h^0.5' (h = fill distance)"),
    arg('--c', type=float, help="coefficient c of the bandwidth rule"),
    arg('--kernel', choices=sorted(KERNEL_FAMILIES), help=f'kernel family (default {Config.DEFAULT_KERNEL})'),
    arg('--graph-mode', dest='graph_mode', action='store_true', default=None,
        help='replace every volume weight V_j by 1/n (weighted graph Laplacian)'),
]

SOLVER_ARGS = [
    arg('--lanczos', action='store_true', default=None, help='use shift-invert Lanczos instead of the dense solver'),
    arg('--tol', type=float, help=f'relative residual tolerance (default {Config.DEFAULT_TOL:g})'),
    arg('--deflate-constant', dest='deflate_constant', action='store_true', default=None,
        help='B-orthogonalize against the constant mode before solving'),
    arg('--backend', choices=Config.VALID_BACKENDS, help='dense backend (default lapack)'),
    arg('--max-iter', dest='max_iter', type=int, help='Lanczos step cap'),
    arg('--lanczos-seed', dest='lanczos_seed', type=int, help='Lanczos start vector seed (default 0)'),
]

COMPARE_ARGS = [
    arg('--rel-window', dest='rel_window', type=float,
        help='relative half-width of the cluster matching window (default 0.05)'),
    arg('--seminorm', action='store_true', default=None,
        help='measure subspace residuals in the stiffness seminorm instead of the B norm'),
]


def bandwidth_rule(config) -> BandwidthRule:
    if config.t is not None:
        return BandwidthRule(t=config.t)
    if config.t_rule is not None:
        return BandwidthRule.parse(config.t_rule, c=config.c)
    raise ValidationError(f"{config.command} needs --t or --t-rule")


@cli.command('assemble', help='assemble the stiffness/mass pencil of a cloud',
             arguments=BANDWIDTH_ARGS + [
                 JITTER_ARG,
                 arg('-i', '--input', help='cloud CSV'),
                 arg('-o', '--output', help='pencil directory to write'),
             ])
def assemble(config):
    config.require('input', 'output')
    cloud = read_cloud_csv(config.single_input)
    t = bandwidth_rule(config)(cloud.h_estimate)

    with timed_stage('assemble'):
        pencil = assemble_pencil(cloud, config.kernel, t, graph_mode=bool(config.graph_mode),
                                 threads=config.threads, jitter=config.jitter or 0.0)
    diagnostics = spectral_shift_check(pencil)
    logger.info(f"w range [{diagnostics.w_min:.4g}, {diagnostics.w_max:.4g}], ratio {diagnostics.ratio:.3f}")
    write_pencil(pencil, config.output)


@cli.command('eigs', help='smallest eigenpairs of a pencil',
             arguments=SOLVER_ARGS + [
                 JITTER_ARG,
                 arg('-i', '--input', help='pencil directory'),
                 arg('-m', '--modes', type=int, help=f'number of modes (default {DEFAULT_MODES})'),
                 arg('--no-vectors', dest='no_vectors', action='store_true',
                     help='skip the eigenvector sidecar CSV'),
                 arg('-o', '--output', help='spectrum JSON to write'),
             ])
def eigs(config):
    config.require('input', 'output')
    pencil = read_pencil(config.single_input)
    if config.jitter:
        pencil = pencil.with_jitter(config.jitter)

    with timed_stage('eigs'):
        spectrum = solve_spectrum(pencil, config.modes or DEFAULT_MODES, lanczos=config.lanczos,
                                  backend=config.backend, tol=config.tol,
                                  deflate_constant=bool(config.deflate_constant),
                                  max_iter=config.max_iter, seed=config.lanczos_seed or 0)
    write_spectrum(spectrum, config.output, pencil_dir=config.single_input, with_vectors=not config.no_vectors)


@cli.command('compare', help='compare spectra with the analytic spectrum of their manifold',
             arguments=COMPARE_ARGS + [
                 arg('-i', '--input', nargs='+', help='one spectrum JSON per ladder level'),
                 arg('-m', '--modes', type=int, help='nonzero modes to compare (default: all solved)'),
                 arg('-o', '--output', help='report directory to write'),
             ])
def compare(config):
    config.require('input', 'output')
    levels, first = [], None

    for path in config.input:
        spectrum, pencil_dir = read_spectrum(path)
        if pencil_dir is None:
            raise ValidationError(f"{path} does not reference a pencil directory")
        if spectrum.vectors.shape[1] != spectrum.m:
            raise ValidationError(f"{path} was written without eigenvectors; rerun eigs without --no-vectors")
        pencil = read_pencil(pencil_dir)
        if pencil.cloud.manifold is None:
            raise ValidationError(f"{path}: the cloud carries no manifold tag to compare against")
        if first is None:
            first = (pencil, config.modes if config.modes is not None else spectrum.m - 1)
        with timed_stage('compare') as timing:
            level = compare_spectrum(pencil, spectrum, first[1], config.rel_window or 0.05, bool(config.seminorm))
        level.seconds, level.memory_delta = timing.seconds, timing.memory_delta
        levels.append(level)

    levels.sort(key=lambda level: level.n)
    pencil, modes = first
    report = ConvergenceReport(levels, report_config(
        pencil.cloud.manifold, pencil.cloud.params, pencil.kernel_id, modes, pencil.graph_mode,
        config.rel_window or 0.05, bool(config.seminorm),
    )).fit()
    write_report(report, config.output)
