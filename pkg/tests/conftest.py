"""
Test configuration and fixtures for pimspec
"""

import math
import os

import numpy as np
import pytest

os.environ.setdefault('PIM_ENV', 'testing')

from pimspec.cli import parse_and_dispatch
from pimspec.config import Config
from pimspec.services.assembly import assemble_pencil
from pimspec.services.kernels import get_kernel
from pimspec.services.pointcloud import PointCloud, sample_circle, sample_interval


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running convergence acceptance runs')


@pytest.fixture
def kernel():
    """Default kernel family"""
    return get_kernel(Config.DEFAULT_KERNEL)


@pytest.fixture
def interval_cloud():
    """Uniform midpoint grid on [0, pi]"""
    return sample_interval(200, L=math.pi)


@pytest.fixture
def circle_cloud():
    """Unit circle with 200 equispaced samples"""
    return sample_circle(200)


@pytest.fixture
def interval_pencil(interval_cloud, kernel):
    """Pencil on [0, pi] with n = 200"""
    return assemble_pencil(interval_cloud, kernel, 0.005)


@pytest.fixture
def random_cloud():
    """Factory for small random 2-D clouds with positive weights"""
    def make(n, seed=0, scale=1.0):
        rng = np.random.default_rng(seed)
        return PointCloud(rng.random((n, 2)) * scale, 0.5 + rng.random(n), 2)
    return make


@pytest.fixture
def run_cli(capsys):
    """Run the CLI in-process; returns (exit code, stdout, stderr)"""
    def run(*argv):
        code = parse_and_dispatch([str(a) for a in argv])
        captured = capsys.readouterr()
        return code, captured.out, captured.err
    return run
