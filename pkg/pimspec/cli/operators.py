"""
Operator subcommands: poisson, extend
"""

import logging

from pimspec.cli import arg, cli
from pimspec.services.operators import POISSON_METHODS, KernelField, apply_solution_operator, extend_mode, poisson_solve
from pimspec.services.storage import (
    read_pencil, read_points_csv, read_spectrum, read_vector_csv, write_columns_csv,
)
from pimspec.utils.error_handlers import ValidationError
from pimspec.utils.performance import timed_stage

logger = logging.getLogger(__name__)


def _point_columns(points):
    return {f'x{k + 1}': points[:, k] for k in range(points.shape[1])}


@cli.command('poisson', help='solve the discrete Neumann Poisson problem for sampled f',
             arguments=[
                 arg('-i', '--input', help='pencil directory'),
                 arg('--f', help='CSV with the samples of f (first column, or column "f")'),
                 arg('--method', choices=POISSON_METHODS, help='direct (bordered LU, default) or cg'),
                 arg('--tol', type=float, help='relative residual tolerance'),
                 arg('--at', help='CSV of query points x1..xd for off-sample evaluation'),
                 arg('--values', help='CSV to write the off-sample values T(f)(x) to'),
                 arg('-o', '--output', help='CSV to write u to'),
             ])
def poisson(config):
    config.require('input', 'f', 'output')
    pencil = read_pencil(config.single_input)
    try:
        f = read_vector_csv(config.f, 'f')
    except ValidationError:
        f = read_vector_csv(config.f)

    with timed_stage('poisson'):
        solution = poisson_solve(pencil, f, tol=config.tol, method=config.method or 'direct')
    write_columns_csv(config.output, {'u': solution.u})

    if config.at:
        if not config.values:
            raise ValidationError("--at needs --values for the off-sample output")
        points = read_points_csv(config.at)
        values = apply_solution_operator(pencil, f, points, solution=solution)
        write_columns_csv(config.values, {**_point_columns(points), 'value': values})


@cli.command('extend', help='evaluate a computed eigenvector off the samples',
             arguments=[
                 arg('-i', '--input', help='spectrum JSON'),
                 arg('--mode', type=int, help='mode index (0 is the constant mode)'),
                 arg('--at', help='CSV of query points x1..xd'),
                 arg('--smooth', action='store_true', help='kernel-smoothed interpolant instead of the eigen extension'),
                 arg('-o', '--output', help='CSV to write x1..xd,value to'),
             ])
def extend(config):
    config.require('input', 'at', 'output')
    if config.mode is None:
        raise ValidationError("extend: missing required option(s) --mode")
    spectrum, pencil_dir = read_spectrum(config.single_input)
    if pencil_dir is None:
        raise ValidationError(f"{config.single_input} does not reference a pencil directory")
    if spectrum.vectors.shape[1] != spectrum.m:
        raise ValidationError(f"{config.single_input} was written without eigenvectors")
    pencil = read_pencil(pencil_dir)
    points = read_points_csv(config.at)

    with timed_stage('extend'):
        if config.smooth:
            if not 0 <= config.mode < spectrum.m:
                raise ValidationError(f"mode {config.mode} outside 0..{spectrum.m - 1}")
            values = KernelField.from_pencil(pencil).smooth(spectrum.vectors[:, config.mode], points)
        else:
            values = extend_mode(pencil, spectrum, config.mode, points)
    write_columns_csv(config.output, {**_point_columns(points), 'value': values})
    logger.info(f"Extended mode {config.mode} to {points.shape[0]} points")
