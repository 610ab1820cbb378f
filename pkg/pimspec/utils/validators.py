"""
Validation utilities for pimspec
"""

from typing import Any, Dict, List

from pimspec.config import Config


class InputValidator:
    """Input validation utilities"""

    @staticmethod
    def validate_positive_int(value, name: str, minimum: int = 1) -> List[str]:
        if value is None:
            return []
        if isinstance(value, bool) or int(value) != value or value < minimum:
            return [f"{name} must be an integer >= {minimum}, got {value}"]
        return []

    @staticmethod
    def validate_positive(value, name: str) -> List[str]:
        if value is None:
            return []
        if not value > 0:
            return [f"{name} must be positive, got {value}"]
        return []

    @staticmethod
    def validate_n_list(n_list) -> Dict[str, Any]:
        """Validate a refinement ladder of sample counts"""
        errors = []

        if not n_list:
            errors.append("at least one sample count n is required")
        else:
            for n in n_list:
                errors.extend(InputValidator.validate_positive_int(n, 'n', 2))
            if any(b <= a for a, b in zip(n_list, n_list[1:])):
                errors.append(f"sample counts must be strictly increasing, got {list(n_list)}")

        return {
            'valid': len(errors) == 0,
            'errors': errors
        }

    @staticmethod
    def validate_manifold(tag: str) -> bool:
        from pimspec.services.pointcloud import MANIFOLDS
        return tag in MANIFOLDS

    @staticmethod
    def validate_kernel(name: str) -> bool:
        from pimspec.services.kernels import KERNEL_FAMILIES
        return name in KERNEL_FAMILIES


class ConfigValidator:
    """Configuration validation utilities"""

    @staticmethod
    def validate_environment() -> List[str]:
        """Validate environment configuration"""
        return Config.validate_config()

    @staticmethod
    def validate_run_config(config) -> Dict[str, Any]:
        """Validate every field of a RunConfig before any computation starts"""
        errors = []

        if config.manifold is not None and not InputValidator.validate_manifold(config.manifold):
            errors.append(f"unknown manifold {config.manifold!r}")

        if config.kernel is not None and not InputValidator.validate_kernel(config.kernel):
            errors.append(f"unknown kernel {config.kernel!r}")

        if config.n is not None:
            ladder = InputValidator.validate_n_list(config.n)
            errors.extend(ladder['errors'])

        errors.extend(InputValidator.validate_positive(config.t, 't'))
        errors.extend(InputValidator.validate_positive(config.c, 'c'))
        errors.extend(InputValidator.validate_positive_int(config.modes, 'modes'))
        errors.extend(InputValidator.validate_positive_int(config.threads, 'threads'))
        errors.extend(InputValidator.validate_positive_int(config.max_iter, 'max_iter'))

        if config.tol is not None and not 0 < config.tol < 1:
            errors.append(f"tol must lie in (0, 1), got {config.tol}")

        if config.jitter is not None and config.jitter < 0:
            errors.append(f"jitter must be nonnegative, got {config.jitter}")

        if config.perturb is not None and config.perturb < 0:
            errors.append(f"perturb must be nonnegative, got {config.perturb}")

        if config.warp is not None and not -1 < config.warp < 1:
            errors.append(f"warp must lie in (-1, 1), got {config.warp}")

        if config.rel_window is not None and not 0 < config.rel_window <= 1:
            errors.append(f"rel_window must lie in (0, 1], got {config.rel_window}")

        if config.backend is not None and config.backend not in Config.VALID_BACKENDS:
            errors.append(f"backend must be one of {Config.VALID_BACKENDS}, got {config.backend!r}")

        if config.t is not None and config.t_rule is not None:
            errors.append("give either a fixed t or a t_rule, not both")

        return {
            'valid': len(errors) == 0,
            'errors': errors
        }
