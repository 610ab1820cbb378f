"""
Configuration management for pimspec
"""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.environ.get(name, default))
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    try:
        return float(os.environ.get(name, default))
    except ValueError:
        return default


class Config:
    """Base configuration class"""

    PIM_ENV = os.environ.get('PIM_ENV', 'development')

    # Logging
    LOG_LEVEL = os.environ.get('PIM_LOG_LEVEL', 'INFO')
    LOG_FILE = os.environ.get('PIM_LOG_FILE')

    # Eigensolvers
    DENSE_CAP = _env_int('PIM_DENSE_CAP', 4000)
    DENSE_BACKEND = os.environ.get('PIM_DENSE_BACKEND', 'lapack')
    DEFAULT_TOL = _env_float('PIM_TOL', 1e-10)
    LANCZOS_SHIFT = _env_float('PIM_LANCZOS_SHIFT', 1e-2)
    DENSE_SHIFT = _env_float('PIM_DENSE_SHIFT', 1.0)
    QL_ITERATIONS_PER_ROW = 50

    # Mass matrix regularization used when --jitter is given without a value
    JITTER_FALLBACK = 1e-12

    # Workers
    THREADS = _env_int('PIM_THREADS', 1)

    # Performance monitoring
    SLOW_STAGE_SECONDS = _env_float('PIM_SLOW_STAGE_SECONDS', 30.0)

    # Kernels
    DEFAULT_KERNEL = 'wendland_radial'
    GAUSSIAN_BLEND_WIDTH = 0.1
    KERNEL_TABLE_PANELS = 2048

    VALID_BACKENDS = ('lapack', 'native')

    @classmethod
    def validate_config(cls) -> list:
        """Validate configuration values"""
        errors = []

        if cls.DENSE_BACKEND not in cls.VALID_BACKENDS:
            errors.append(f"PIM_DENSE_BACKEND must be one of {cls.VALID_BACKENDS}, got {cls.DENSE_BACKEND!r}")

        if cls.DENSE_CAP < 2:
            errors.append("PIM_DENSE_CAP must be at least 2")

        if not 0 < cls.DEFAULT_TOL < 1:
            errors.append("PIM_TOL must lie in (0, 1)")

        if cls.LANCZOS_SHIFT <= 0:
            errors.append("PIM_LANCZOS_SHIFT must be positive")

        if cls.DENSE_SHIFT <= 0:
            errors.append("PIM_DENSE_SHIFT must be positive")

        if cls.THREADS < 1:
            errors.append("PIM_THREADS must be at least 1")

        return errors


class DevelopmentConfig(Config):
    """Development configuration"""


class ProductionConfig(Config):
    """Production configuration"""
    LOG_FILE = os.environ.get('PIM_LOG_FILE', 'logs/pimspec.log')


class TestingConfig(Config):
    """Testing configuration"""
    LOG_LEVEL = 'DEBUG'
    LOG_FILE = None


# Configuration mapping
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig
}


def get_config(name=None):
    """Return the configuration class for ``name`` (defaults to PIM_ENV)"""
    name = name or os.environ.get('PIM_ENV', 'development')
    return config.get(name, DevelopmentConfig)
