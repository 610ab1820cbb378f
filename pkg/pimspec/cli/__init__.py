"""
Command-line interface: subcommand registry, argument parsing and dispatch
"""

import sys
import json
import argparse
import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional

from dotenv import dotenv_values

from pimspec import __version__, configure_logging
from pimspec.config import Config
from pimspec.utils.error_handlers import EXIT_OK, ValidationError, handle_error
from pimspec.utils.performance import get_performance_stats
from pimspec.utils.validators import ConfigValidator

logger = logging.getLogger(__name__)


class PimArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises ValidationError instead of exiting"""

    def error(self, message):
        raise ValidationError(message, payload={'usage': self.format_usage().rstrip()})


def arg(*flags, **kwargs):
    return flags, kwargs


@dataclass
class Command:
    name: str
    help: str
    handler: Callable
    arguments: list


class CommandRegistry:
    """Subcommands registered by decorator from the command modules"""

    def __init__(self):
        self.commands: Dict[str, Command] = {}

    def command(self, name: str, help: str, arguments=()):
        def decorator(f):
            self.commands[name] = Command(name, help, f, list(arguments))
            return f
        return decorator


cli = CommandRegistry()


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off', ''):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_n_list(value) -> List[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(part) for part in str(value).split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def parse_param(text: str):
    key, sep, value = text.partition('=')
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter {key.strip()} needs a numeric value, got {value!r}")


# Keys accepted in a --config file and their converters
CONFIG_KEYS = {
    'manifold': str,
    'n': parse_n_list,
    'kernel': str,
    't': float,
    't_rule': str,
    'c': float,
    'modes': int,
    'graph_mode': _bool,
    'jitter': float,
    'perturb': float,
    'warp': float,
    'seed': int,
    'lanczos_seed': int,
    'lanczos': _bool,
    'deflate_constant': _bool,
    'tol': float,
    'threads': int,
    'rel_window': float,
    'seminorm': _bool,
    'backend': str,
    'max_iter': int,
    'method': str,
}


def load_config_file(path: str) -> dict:
    """Read a plain-text key=value file; unknown keys are rejected"""
    try:
        with open(path):
            pass
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}")

    values, params, unknown = {}, {}, []
    for key, raw in dotenv_values(path).items():
        key = key.strip()
        try:
            if key.startswith('param.'):
                params[key[len('param.'):]] = float(raw)
            elif key in CONFIG_KEYS:
                values[key] = CONFIG_KEYS[key](raw)
            else:
                unknown.append(key)
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            raise ValidationError(f"config file {path}: bad value for {key}: {exc}")

    if unknown:
        raise ValidationError(f"config file {path}: unknown keys {sorted(unknown)}")
    if params:
        values['params'] = params
    return values


@dataclass
class RunConfig:
    """Validated settings of one CLI invocation"""

    command: str
    manifold: Optional[str] = None
    params: dict = field(default_factory=dict)
    n: Optional[List[int]] = None
    kernel: Optional[str] = None
    t: Optional[float] = None
    t_rule: Optional[str] = None
    c: Optional[float] = None
    modes: Optional[int] = None
    input: Optional[List[str]] = None
    output: Optional[str] = None
    graph_mode: bool = False
    jitter: Optional[float] = None
    perturb: Optional[float] = None
    warp: Optional[float] = None
    seed: Optional[int] = None
    lanczos_seed: Optional[int] = None
    lanczos: Optional[bool] = None
    deflate_constant: bool = False
    tol: Optional[float] = None
    threads: Optional[int] = None
    rel_window: Optional[float] = None
    seminorm: bool = False
    backend: Optional[str] = None
    max_iter: Optional[int] = None
    method: Optional[str] = None
    f: Optional[str] = None
    at: Optional[str] = None
    mode: Optional[int] = None
    smooth: bool = False
    values: Optional[str] = None
    no_vectors: bool = False

    @classmethod
    def from_args(cls, args: argparse.Namespace, file_values: Optional[dict] = None) -> 'RunConfig':
        """Command-line values first, then the config file, then built-in defaults"""
        file_values = dict(file_values or {})
        options = {}
        for f in fields(cls):
            value = getattr(args, f.name, None)
            if f.name == 'params':
                merged = dict(file_values.get('params', {}))
                merged.update(dict(value or []))
                value = merged
            elif value is None and f.name in file_values:
                value = file_values[f.name]
            if value is not None:
                options[f.name] = value

        if isinstance(options.get('input'), str):
            options['input'] = [options['input']]
        config = cls(**options)

        if config.kernel is None:
            config.kernel = Config.DEFAULT_KERNEL
        if config.threads is None:
            config.threads = Config.THREADS

        result = ConfigValidator.validate_run_config(config)
        if not result['valid']:
            raise ValidationError('; '.join(result['errors']))
        return config

    def require(self, *names):
        missing = [name for name in names if getattr(self, name) in (None, [], '')]
        if missing:
            flags = ', '.join('--' + name.replace('_', '-') for name in missing)
            raise ValidationError(f"{self.command}: missing required option(s) {flags}")

    @property
    def single_input(self) -> str:
        self.require('input')
        if len(self.input) != 1:
            raise ValidationError(f"{self.command} takes exactly one input")
        return self.input[0]

    @property
    def single_n(self) -> int:
        self.require('n')
        if len(self.n) != 1:
            raise ValidationError(f"{self.command} takes a single --n value")
        return self.n[0]


def _common_parser() -> argparse.ArgumentParser:
    common = PimArgumentParser(add_help=False)
    group = common.add_argument_group('global options')
    group.add_argument('--config', help='plain-text key=value file with default option values')
    group.add_argument('--threads', type=int, help='worker cap for row-parallel stages')
    group.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='logging level')
    group.add_argument('--log-file', help='also log to this file')
    group.add_argument('--profile', action='store_true', help='print stage timings and memory to stderr')
    return common


def build_parser() -> PimArgumentParser:
    parser = PimArgumentParser(
        prog='pimspec',
        description='Laplace-Beltrami spectra of point clouds with the point integral method',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', metavar='<command>', required=True)
    common = _common_parser()

    for command in cli.commands.values():
        sub = subparsers.add_parser(command.name, help=command.help, description=command.help, parents=[common])
        for flags, kwargs in command.arguments:
            sub.add_argument(*flags, **kwargs)
    return parser


def parse_and_dispatch(argv=None) -> int:
    """Run one subcommand; returns 0 on success, 1 on validation errors, 2 on numerical failures"""
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        environment_errors = ConfigValidator.validate_environment()
        if environment_errors:
            raise ValidationError('; '.join(environment_errors))
    except SystemExit as exc:
        return exc.code or EXIT_OK
    except Exception as exc:
        return handle_error(exc)

    configure_logging(args.log_level, args.log_file)
    try:
        file_values = load_config_file(args.config) if args.config else {}
        config = RunConfig.from_args(args, file_values)
        logger.debug(f"Running {config.command} with {config}")
        cli.commands[config.command].handler(config)
    except Exception as exc:
        return handle_error(exc)
    finally:
        if args.profile:
            print(json.dumps(get_performance_stats(), indent=2, default=str), file=sys.stderr)
    return EXIT_OK


def main():
    sys.exit(parse_and_dispatch())


from pimspec.cli import geometry, spectra, operators, studies  # noqa: E402,F401
