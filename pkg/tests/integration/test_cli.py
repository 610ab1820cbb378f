"""
Integration tests for the command-line interface
"""

import io
import json
import math
import argparse

import numpy as np
import pandas as pd
import pytest

from pimspec.cli import build_parser, cli, spectra
from pimspec.config import Config
from pimspec.services.storage import read_cloud_csv, read_pencil, read_spectrum, write_columns_csv
from pimspec.utils.error_handlers import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION


def write_indefinite_pencil(directory):
    """Two-point pencil whose mass matrix is not positive definite"""
    directory.mkdir()
    (directory / 'cloud.csv').write_text('# intrinsic_dim=1\nx1,V\n0.0,1.0\n0.1,1.0\n')
    (directory / 'A.txt').write_text('0 0 1\n0 1 -1\n1 0 -1\n1 1 1\n')
    (directory / 'B.txt').write_text('0 0 1\n0 1 2\n1 0 2\n1 1 1\n')
    (directory / 'header.json').write_text(json.dumps({'n': 2, 't': 0.01, 'kernel': 'wendland'}))


class TestSampleCommand:
    """Test cases for sample and quadcheck"""

    def test_sample_interval(self, run_cli, tmp_path):
        """Test sampling writes a cloud CSV with n rows"""
        out = tmp_path / 'cloud.csv'
        code, _, err = run_cli('sample', '--manifold', 'interval', '--n', 100, '-o', out)
        assert code == EXIT_OK, err
        cloud = read_cloud_csv(str(out))
        assert cloud.n == 100
        assert cloud.manifold == 'interval'

    def test_sample_with_params_and_perturbation(self, run_cli, tmp_path):
        """Test manifold parameters and the perturbation flags reach the sampler"""
        out = tmp_path / 'circle.csv'
        code, _, err = run_cli('sample', '--manifold', 'circle', '--param', 'radius=2', '--n', 80,
                               '--perturb', 0.3, '--seed', 4, '-o', out)
        assert code == EXIT_OK, err
        cloud = read_cloud_csv(str(out))
        assert np.allclose(np.linalg.norm(cloud.points, axis=1), 2.0)
        assert cloud.weights.sum() == pytest.approx(4.0 * math.pi)
        assert not np.allclose(cloud.weights, cloud.weights[0])

    def test_unknown_flag(self, run_cli, tmp_path):
        """Test an unknown flag exits 1 and prints the usage"""
        code, _, err = run_cli('sample', '--manifold', 'interval', '--bogus', '-o', tmp_path / 'c.csv')
        assert code == EXIT_VALIDATION
        assert 'usage:' in err

    def test_bad_param(self, run_cli, tmp_path):
        """Test a malformed --param is a usage error"""
        code, _, err = run_cli('sample', '--manifold', 'interval', '--param', 'L', '--n', 10, '-o', tmp_path / 'c.csv')
        assert code == EXIT_VALIDATION
        assert 'KEY=VALUE' in err

    def test_missing_output(self, run_cli):
        """Test a missing required option is named"""
        code, _, err = run_cli('sample', '--manifold', 'interval', '--n', 10)
        assert code == EXIT_VALIDATION
        assert '--output' in err

    def test_quadcheck_stdout(self, run_cli):
        """Test the quadrature check prints one named row per level and probe"""
        code, out, err = run_cli('quadcheck', '--manifold', 'interval', '--n', '50,100')
        assert code == EXIT_OK, err
        assert out.splitlines()[0] == 'n,probe,exact,approx,error'
        frame = pd.read_csv(io.StringIO(out))
        assert sorted(set(frame['n'])) == [50, 100]
        assert frame['probe'].tolist()[:2] == ['1', 'x']
        assert 'cos(x)' in set(frame['probe'])
        assert (frame['error'] >= 0).all()


class TestPipelineCommands:
    """Test cases for chained and one-shot pipelines"""

    def test_chain_matches_run(self, run_cli, tmp_path):
        """Test chaining the subcommands gives the same report as run"""
        chain = tmp_path / 'chain'
        steps = [
            ('sample', '--manifold', 'interval', '--n', 100, '-o', chain / 'cloud.csv'),
            ('assemble', '-i', chain / 'cloud.csv', '--t', 0.002, '-o', chain / 'pencil'),
            ('eigs', '-i', chain / 'pencil', '-m', 4, '-o', chain / 'spectrum.json'),
            ('compare', '-i', chain / 'spectrum.json', '-m', 3, '-o', chain / 'report'),
        ]
        for step in steps:
            code, _, err = run_cli(*step)
            assert code == EXIT_OK, err

        oneshot = tmp_path / 'run'
        code, _, err = run_cli('run', '--manifold', 'interval', '--n', 100, '--t', 0.002, '-m', 3, '-o', oneshot)
        assert code == EXIT_OK, err

        for name in ('report.csv', 'summary.json'):
            assert (chain / 'report' / name).read_bytes() == (oneshot / 'report' / name).read_bytes()

    def test_run_writes_levels_and_relative_summary(self, run_cli, tmp_path):
        """Test intermediate files per level and relative paths in the summary"""
        out = tmp_path / 'study'
        code, _, err = run_cli('run', '--manifold', 'circle', '--n', '60,120', '--t', 0.01, '-m', 2, '-o', out)
        assert code == EXIT_OK, err
        for n in (60, 120):
            assert (out / 'levels' / f'n{n}' / 'cloud.csv').exists()
            assert (out / 'levels' / f'n{n}' / 'pencil' / 'header.json').exists()

        summary = json.loads((out / 'report' / 'summary.json').read_text())
        assert summary['report'] == 'report.csv'
        assert summary['timings'] == 'timings.csv'
        assert [level['n'] for level in summary['levels']] == [60, 120]

        spectrum = json.loads((out / 'levels' / 'n60' / 'spectrum.json').read_text())
        assert spectrum['pencil'] == 'pencil'
        assert spectrum['vectors'] == 'spectrum.vectors.csv'

    def test_empty_ladder(self, run_cli, tmp_path):
        """Test run with an empty --n exits 1"""
        code, _, _ = run_cli('run', '--manifold', 'interval', '--n', '', '--t', 0.01, '-o', tmp_path / 'out')
        assert code == EXIT_VALIDATION

    def test_missing_bandwidth(self, run_cli, tmp_path):
        """Test assemble without --t or --t-rule exits 1"""
        run_cli('sample', '--manifold', 'interval', '--n', 20, '-o', tmp_path / 'cloud.csv')
        code, _, err = run_cli('assemble', '-i', tmp_path / 'cloud.csv', '-o', tmp_path / 'pencil')
        assert code == EXIT_VALIDATION
        assert '--t' in err

    def test_bandwidth_rule(self, run_cli, tmp_path):
        """Test --t-rule with --c sets t from the fill distance"""
        run_cli('sample', '--manifold', 'interval', '--param', 'L=1', '--n', 100, '-o', tmp_path / 'cloud.csv')
        code, _, err = run_cli('assemble', '-i', tmp_path / 'cloud.csv', '--t-rule', 'c*h^0.5', '--c', 0.02,
                               '-o', tmp_path / 'pencil')
        assert code == EXIT_OK, err
        assert read_pencil(str(tmp_path / 'pencil')).t == pytest.approx(0.02 * math.sqrt(0.01))


class TestNumericalFailures:
    """Test cases for exit code 2"""

    def test_indefinite_mass_matrix(self, run_cli, tmp_path):
        """Test a non positive definite B exits 2 and suggests --jitter"""
        pencil_dir = tmp_path / 'pencil'
        write_indefinite_pencil(pencil_dir)
        code, _, err = run_cli('eigs', '-i', pencil_dir, '-m', 1, '-o', tmp_path / 'spectrum.json')
        assert code == EXIT_NUMERICAL
        assert '--jitter' in err
        assert not (tmp_path / 'spectrum.json').exists()

    def test_lanczos_iteration_cap(self, run_cli, tmp_path):
        """Test a Lanczos step cap that is too small exits 2"""
        run_cli('sample', '--manifold', 'interval', '--n', 200, '-o', tmp_path / 'cloud.csv')
        run_cli('assemble', '-i', tmp_path / 'cloud.csv', '--t', 0.005, '-o', tmp_path / 'pencil')
        code, _, err = run_cli('eigs', '-i', tmp_path / 'pencil', '-m', 6, '--lanczos', '--max-iter', 2,
                               '-o', tmp_path / 'spectrum.json')
        assert code == EXIT_NUMERICAL
        assert 'error:' in err


class TestOperatorCommands:
    """Test cases for poisson and extend"""

    @pytest.fixture
    def pencil_dir(self, run_cli, tmp_path):
        run_cli('sample', '--manifold', 'interval', '--param', f'L={math.pi}', '--n', 200, '-o', tmp_path / 'cloud.csv')
        code, _, err = run_cli('assemble', '-i', tmp_path / 'cloud.csv', '--t', 0.005, '-o', tmp_path / 'pencil')
        assert code == EXIT_OK, err
        return tmp_path / 'pencil'

    def test_poisson(self, run_cli, tmp_path, pencil_dir):
        """Test the Poisson command writes u and off-sample values"""
        pencil = read_pencil(str(pencil_dir))
        x = pencil.cloud.points[:, 0]
        write_columns_csv(str(tmp_path / 'f.csv'), {'f': np.cos(x)})
        write_columns_csv(str(tmp_path / 'at.csv'), {'x1': [0.5, 1.0, 2.0]})

        code, _, err = run_cli('poisson', '-i', pencil_dir, '--f', tmp_path / 'f.csv', '--at', tmp_path / 'at.csv',
                               '--values', tmp_path / 'values.csv', '-o', tmp_path / 'u.csv')
        assert code == EXIT_OK, err
        u = pd.read_csv(tmp_path / 'u.csv')['u'].to_numpy()
        assert np.allclose(u, -np.cos(x), atol=0.1)
        values = pd.read_csv(tmp_path / 'values.csv')
        assert list(values.columns) == ['x1', 'value']
        assert np.allclose(values['value'], -np.cos(values['x1']), atol=0.1)

    def test_poisson_at_needs_values(self, run_cli, tmp_path, pencil_dir):
        """Test --at without --values is rejected"""
        write_columns_csv(str(tmp_path / 'f.csv'), {'f': np.ones(200)})
        write_columns_csv(str(tmp_path / 'at.csv'), {'x1': [1.0]})
        code, _, _ = run_cli('poisson', '-i', pencil_dir, '--f', tmp_path / 'f.csv', '--at', tmp_path / 'at.csv',
                             '-o', tmp_path / 'u.csv')
        assert code == EXIT_VALIDATION

    def test_extend(self, run_cli, tmp_path, pencil_dir):
        """Test extending a mode reproduces it at the samples"""
        code, _, err = run_cli('eigs', '-i', pencil_dir, '-m', 3, '-o', tmp_path / 'spectrum.json')
        assert code == EXIT_OK, err
        spectrum, _ = read_spectrum(str(tmp_path / 'spectrum.json'))
        pencil = read_pencil(str(pencil_dir))
        write_columns_csv(str(tmp_path / 'at.csv'), {'x1': pencil.cloud.points[:10, 0]})

        code, _, err = run_cli('extend', '-i', tmp_path / 'spectrum.json', '--mode', 2,
                               '--at', tmp_path / 'at.csv', '-o', tmp_path / 'ext.csv')
        assert code == EXIT_OK, err
        values = pd.read_csv(tmp_path / 'ext.csv')['value'].to_numpy()
        expected = spectrum.vectors[:10, 2]
        assert np.allclose(values, expected, atol=1e-6 * np.abs(spectrum.vectors[:, 2]).max())

    def test_extend_without_vectors(self, run_cli, tmp_path, pencil_dir):
        """Test a spectrum saved with --no-vectors cannot be extended"""
        run_cli('eigs', '-i', pencil_dir, '-m', 2, '--no-vectors', '-o', tmp_path / 'spectrum.json')
        write_columns_csv(str(tmp_path / 'at.csv'), {'x1': [1.0]})
        code, _, err = run_cli('extend', '-i', tmp_path / 'spectrum.json', '--mode', 1,
                               '--at', tmp_path / 'at.csv', '-o', tmp_path / 'ext.csv')
        assert code == EXIT_VALIDATION
        assert 'without eigenvectors' in err


class TestConvergeCommand:
    """Test cases for the refinement ladder command"""

    def test_converge(self, run_cli, tmp_path):
        """Test a three-level ladder writes fitted rates"""
        out = tmp_path / 'report'
        code, _, err = run_cli('converge', '--manifold', 'interval', '--param', f'L={math.pi}',
                               '--n', '100,200,400', '--t-rule', 'c*h^0.5', '--c', 0.025, '-m', 2, '-o', out)
        assert code == EXIT_OK, err
        summary = json.loads((out / 'summary.json').read_text())
        assert set(summary['fitted_rates']) == {'1', '2'}
        report = pd.read_csv(out / 'report.csv')
        assert sorted(set(report['n'])) == [100, 200, 400]
        assert (report['status'] == 'ok').all()

    def test_config_file(self, run_cli, tmp_path):
        """Test options are read from a key=value file"""
        config = tmp_path / 'study.env'
        config.write_text('manifold=interval\nn=50,100\nt=0.01\nmodes=1\n')
        code, _, err = run_cli('converge', '--config', config, '-o', tmp_path / 'out')
        assert code == EXIT_OK, err
        summary = json.loads((tmp_path / 'out' / 'summary.json').read_text())
        assert [level['n'] for level in summary['levels']] == [50, 100]
        assert summary['fitted_rates'] == {}

    def test_config_file_unknown_key(self, run_cli, tmp_path):
        """Test an unknown key in the config file exits 1"""
        config = tmp_path / 'bad.env'
        config.write_text('manifold=interval\ncolour=blue\n')
        code, _, err = run_cli('converge', '--config', config, '-o', tmp_path / 'out')
        assert code == EXIT_VALIDATION
        assert 'colour' in err

    def test_command_line_overrides_config_file(self, run_cli, tmp_path):
        """Test a flag wins over the same key in the file"""
        config = tmp_path / 'study.env'
        config.write_text('manifold=interval\nn=50\nt=0.01\nmodes=1\n')
        code, _, err = run_cli('converge', '--config', config, '--n', 60, '-o', tmp_path / 'out')
        assert code == EXIT_OK, err
        summary = json.loads((tmp_path / 'out' / 'summary.json').read_text())
        assert [level['n'] for level in summary['levels']] == [60]


class TestHelp:
    """Test cases for help output"""

    @pytest.mark.parametrize('command', sorted(cli.commands))
    def test_subcommand_help(self, run_cli, command):
        """Test every subcommand prints help and exits 0"""
        code, out, _ = run_cli(command, '--help')
        assert code == EXIT_OK
        assert 'usage:' in out

    def test_top_level_help(self, run_cli):
        """Test the top-level help lists the subcommands"""
        code, out, _ = run_cli('--help')
        assert code == EXIT_OK
        for command in ('sample', 'assemble', 'eigs', 'compare', 'converge', 'run'):
            assert command in out


class TestParser:
    """Test cases for parser construction and environment checks"""

    def test_every_command_registers(self):
        """Test the parser builds with every registered subcommand"""
        parser = build_parser()
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        assert set(subparsers.choices) == set(cli.commands)

    @pytest.mark.parametrize('command', ['converge', 'run'])
    def test_perturbation_and_lanczos_seeds_are_separate(self, command):
        """Test study commands take both seeds without a flag conflict"""
        args = build_parser().parse_args([command, '--seed', '3', '--lanczos-seed', '5'])
        assert args.seed == 3
        assert args.lanczos_seed == 5

    def test_lanczos_seed_reaches_solver(self, run_cli, tmp_path, mocker):
        """Test --lanczos-seed is passed to the eigensolver"""
        solve = mocker.patch.object(spectra, 'solve_spectrum', wraps=spectra.solve_spectrum)
        run_cli('sample', '--manifold', 'interval', '--n', 100, '-o', tmp_path / 'cloud.csv')
        run_cli('assemble', '-i', tmp_path / 'cloud.csv', '--t', 0.005, '-o', tmp_path / 'pencil')
        code, _, err = run_cli('eigs', '-i', tmp_path / 'pencil', '-m', 3, '--lanczos', '--lanczos-seed', 9,
                               '-o', tmp_path / 'spectrum.json')
        assert code == EXIT_OK, err
        assert solve.call_args.kwargs['seed'] == 9

    def test_parser_construction_error_is_reported(self, run_cli, mocker):
        """Test a failure while building the parser returns an exit code instead of raising"""
        mocker.patch('pimspec.cli.build_parser',
                     side_effect=argparse.ArgumentError(None, 'conflicting option string: --seed'))
        code, _, err = run_cli('sample', '--help')
        assert code == EXIT_NUMERICAL
        assert 'conflicting option string' in err

    @pytest.mark.parametrize('attribute, value, variable', [
        ('DEFAULT_TOL', 5.0, 'PIM_TOL'),
        ('DENSE_CAP', 0, 'PIM_DENSE_CAP'),
        ('DENSE_BACKEND', 'cuda', 'PIM_DENSE_BACKEND'),
    ])
    def test_invalid_environment_exits_1(self, run_cli, tmp_path, mocker, attribute, value, variable):
        """Test bad environment settings stop the command before it runs"""
        mocker.patch.object(Config, attribute, value)
        code, _, err = run_cli('sample', '--manifold', 'interval', '--n', 10, '-o', tmp_path / 'cloud.csv')
        assert code == EXIT_VALIDATION
        assert variable in err
        assert not (tmp_path / 'cloud.csv').exists()
