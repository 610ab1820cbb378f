"""
Point cloud subcommands: sample, quadcheck
"""

import sys
import logging

import pandas as pd

from pimspec.cli import arg, cli, parse_n_list, parse_param
from pimspec.services.pointcloud import MANIFOLDS, perturb_cloud, quadrature_check, sample_manifold
from pimspec.services.storage import read_cloud_csv, write_atomic, write_cloud_csv
from pimspec.utils.error_handlers import ValidationError
from pimspec.utils.performance import timed_stage

logger = logging.getLogger(__name__)

MANIFOLD_ARGS = [
    arg('--manifold', choices=MANIFOLDS, help='built-in manifold'),
    arg('--param', dest='params', action='append', type=parse_param, metavar='KEY=VALUE',
        help='manifold parameter, e.g. L=3.14159 or radius=1 (repeatable)'),
]

PERTURB_ARGS = [
    arg('--perturb', type=float, metavar='FRACTION',
        help='jitter interval/circle samples by this fraction of the grid spacing'),
    arg('--warp', type=float, help='smooth density warp in (-1, 1) applied before jitter'),
    arg('--seed', type=int, help='random seed for the perturbation (default 0)'),
]


def build_cloud(config, n):
    """Sample the configured manifold at n points, perturbed when asked"""
    config.require('manifold')
    cloud = sample_manifold(config.manifold, n, **config.params)
    if config.perturb or config.warp:
        cloud = perturb_cloud(cloud, config.perturb or 0.0, config.seed or 0, config.warp or 0.0)
    return cloud


@cli.command('sample', help='sample a built-in manifold into a cloud CSV',
             arguments=MANIFOLD_ARGS + PERTURB_ARGS + [
                 arg('--n', type=parse_n_list, help='number of samples (points per side for rectangle)'),
                 arg('-o', '--output', help='cloud CSV to write'),
             ])
def sample(config):
    config.require('output')
    with timed_stage('sample'):
        cloud = build_cloud(config, config.single_n)
    write_cloud_csv(cloud, config.output)
    logger.info(f"Sampled {config.manifold} with n={cloud.n}, h={cloud.h_estimate:.4g}, volume={cloud.volume:.6g}")


@cli.command('quadcheck', help='compare sum f(p_i) V_i with exact integrals of built-in probe functions',
             arguments=MANIFOLD_ARGS + PERTURB_ARGS + [
                 arg('-i', '--input', help='cloud CSV (instead of --manifold/--n)'),
                 arg('--n', type=parse_n_list, help='comma-separated refinement ladder, e.g. 100,200,400,800'),
                 arg('-o', '--output', help='CSV of n, probe, exact, approx, error (default stdout)'),
             ])
def quadcheck(config):
    if config.input:
        clouds = [read_cloud_csv(config.single_input)]
    elif config.manifold and config.n:
        clouds = [build_cloud(config, n) for n in config.n]
    else:
        raise ValidationError("quadcheck needs --input or --manifold with --n")

    rows = []
    with timed_stage('quadcheck'):
        for cloud in clouds:
            for result in quadrature_check(cloud):
                rows.append({'n': cloud.n, 'probe': result.name, 'exact': result.exact,
                             'approx': result.approx, 'error': result.error})
                logger.info(f"n={cloud.n} {result.name}: error {result.error:.3e}")

    frame = pd.DataFrame(rows, columns=['n', 'probe', 'exact', 'approx', 'error'])
    text = frame.to_csv(index=False, float_format='%.17g', lineterminator='\n')
    if config.output:
        write_atomic(config.output, text)
    else:
        sys.stdout.write(text)
