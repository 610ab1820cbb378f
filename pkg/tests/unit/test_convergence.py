"""
Unit tests for refinement studies
"""

import json
import math
import os

import numpy as np
import pandas as pd
import pytest

from pimspec.services.convergence import (
    BandwidthRule, ConvergenceReport, LevelResult, compare_spectrum, fit_rate, run_ladder,
    solve_count, subspace_residual, write_report,
)
from pimspec.services.eigensolve import Spectrum, solve_spectrum
from pimspec.services.pointcloud import ground_truth, sample_manifold
from pimspec.utils.error_handlers import ClusterNotResolvedError, EigenConvergenceError, ValidationError


class TestFitRate:
    """Test cases for log-log slope fitting"""

    @pytest.mark.parametrize('power', [1.0, 2.0])
    def test_exact_power_law(self, power):
        """Test slope of e = 5 h^p"""
        h = np.array([0.1, 0.05, 0.025, 0.0125])
        slope, intercept = fit_rate(h, 5.0 * h ** power)
        assert slope == pytest.approx(power)
        assert intercept == pytest.approx(math.log(5.0))

    def test_noisy_power_law(self):
        """Test a 1.5 rate with 2% multiplicative noise"""
        rng = np.random.default_rng(11)
        h = 0.2 / 2.0 ** np.arange(6)
        e = 3.0 * h ** 1.5 * (1.0 + 0.02 * rng.standard_normal(6))
        slope, _ = fit_rate(h, e)
        assert abs(slope - 1.5) < 0.1

    def test_needs_three_points(self):
        """Test two points are not enough"""
        with pytest.raises(ValidationError):
            fit_rate([0.1, 0.05], [0.01, 0.0025])

    def test_rejects_nonpositive_errors(self):
        """Test zero errors cannot be fitted"""
        with pytest.raises(ValidationError):
            fit_rate([0.1, 0.05, 0.025], [0.01, 0.0, 0.001])


class TestBandwidthRule:
    """Test cases for t selection"""

    def test_fixed(self):
        """Test a plain number is a fixed bandwidth"""
        rule = BandwidthRule.parse('0.004')
        assert rule.fixed
        assert rule(0.5) == 0.004
        assert rule.describe() == 't=0.004'

    @pytest.mark.parametrize('text', ['c*h^0.5', 'c * h ^ 0.5', 'c*h^(1/2)'])
    def test_power_rule_with_separate_c(self, text):
        """Test c given on its own"""
        rule = BandwidthRule.parse(text, c=0.03)
        assert not rule.fixed
        assert rule.gamma == pytest.approx(0.5)
        assert rule(0.04) == pytest.approx(0.006)

    def test_power_rule_with_inline_c(self):
        """Test a numeric coefficient inside the rule"""
        rule = BandwidthRule.parse('0.025*h^1')
        assert rule.c == 0.025
        assert rule(0.1) == pytest.approx(0.0025)
        assert rule.describe() == 't=0.025*h^1'

    def test_missing_c(self):
        """Test c*h^gamma without a value for c"""
        with pytest.raises(ValidationError, match='needs a value for c'):
            BandwidthRule.parse('c*h^0.5')

    def test_unparseable(self):
        """Test garbage rules are rejected"""
        with pytest.raises(ValidationError):
            BandwidthRule.parse('h squared')

    def test_nonpositive(self):
        """Test nonpositive t and c are rejected"""
        with pytest.raises(ValidationError):
            BandwidthRule(t=0.0)
        with pytest.raises(ValidationError):
            BandwidthRule(c=-1.0)


class TestSubspaceResidual:
    """Test cases for eigenfunction subspace residuals"""

    def test_constant_mode_is_exact(self, interval_pencil):
        """Test the constant cluster has zero residual"""
        spectrum = solve_spectrum(interval_pencil, 3)
        truth = ground_truth('interval', {'L': math.pi}, count=3)
        assert subspace_residual(spectrum, truth, interval_pencil, 0) < 1e-8

    def test_first_mode_is_close(self, interval_pencil):
        """Test cos(x) lies close to the computed first eigenvector"""
        spectrum = solve_spectrum(interval_pencil, 3)
        truth = ground_truth('interval', {'L': math.pi}, count=3)
        assert subspace_residual(spectrum, truth, interval_pencil, 1) < 0.05
        assert subspace_residual(spectrum, truth, interval_pencil, 1, seminorm=True) < 0.2

    def test_orthogonal_span_gives_one(self, interval_pencil):
        """Test a span B-orthogonal to the analytic mode has residual 1"""
        truth = ground_truth('interval', {'L': math.pi}, count=3)
        B = interval_pencil.B
        phi = truth.eigenfunction_eval(1, interval_pencil.cloud.points)
        g = np.random.default_rng(0).standard_normal(interval_pencil.n)
        v = g - (float(phi @ (B @ g)) / float(phi @ (B @ phi))) * phi
        spectrum = Spectrum(np.array([0.0, 1.0]), np.column_stack([np.ones(interval_pencil.n), v]), np.zeros(2))
        assert subspace_residual(spectrum, truth, interval_pencil, 1) == pytest.approx(1.0, abs=1e-10)

    def test_unresolved_cluster(self, interval_pencil):
        """Test a cluster with no computed eigenvalue in its window raises"""
        truth = ground_truth('interval', {'L': math.pi}, count=3)
        spectrum = Spectrum(np.array([0.0, 1.5]), np.ones((interval_pencil.n, 2)), np.zeros(2))
        with pytest.raises(ClusterNotResolvedError):
            subspace_residual(spectrum, truth, interval_pencil, 1)

    def test_cluster_index_out_of_range(self, interval_pencil):
        """Test an index beyond the analytic clusters"""
        truth = ground_truth('interval', {'L': math.pi}, count=3)
        spectrum = solve_spectrum(interval_pencil, 3)
        with pytest.raises(ValidationError):
            subspace_residual(spectrum, truth, interval_pencil, 10)


class TestCompareSpectrum:
    """Test cases for single-level comparisons"""

    def test_interval_level(self, interval_pencil):
        """Test modes 0..3 are compared with small errors"""
        spectrum = solve_spectrum(interval_pencil, 4)
        result = compare_spectrum(interval_pencil, spectrum, modes=3)
        assert [row.index for row in result.modes] == [0, 1, 2, 3]
        assert result.n == interval_pencil.n
        assert result.t == interval_pencil.t
        assert all(row.rel_error < 0.05 for row in result.modes[1:3])
        assert set(result.cluster_residuals) == {0, 1, 2, 3}

    def test_too_few_modes(self, interval_pencil):
        """Test comparing more modes than were solved"""
        spectrum = solve_spectrum(interval_pencil, 3)
        with pytest.raises(ValidationError):
            compare_spectrum(interval_pencil, spectrum, modes=3)

    def test_solve_count_completes_clusters(self):
        """Test the solve count reaches the end of the last compared cluster"""
        assert solve_count('interval', {'L': 1.0}, 3) == 4
        assert solve_count('circle', None, 2) == 3
        assert solve_count('circle', None, 3) == 5
        assert solve_count('hemisphere', None, 2) == 3


class TestRunLadder:
    """Test cases for full refinement ladders"""

    def test_three_levels_fit_rates(self):
        """Test rates are fitted for each nonzero mode"""
        rule = BandwidthRule.parse('c*h^0.5', c=0.025)
        report = run_ladder('interval', [100, 200, 400], rule, modes=2, params={'L': math.pi})
        assert [level.n for level in report.levels] == [100, 200, 400]
        assert all(level.ok for level in report.levels)
        assert set(report.fitted_rates) == {1, 2}
        assert all(slope > 0.25 for slope, _ in report.fitted_rates.values())
        errors = [level.mode_errors()[1] for level in report.levels]
        assert errors[-1] < errors[0]

    def test_single_level_has_no_rates(self):
        """Test one level gives errors but no fitted rate"""
        report = run_ladder('interval', [100], BandwidthRule(t=0.004), modes=2, params={'L': math.pi})
        assert len(report.levels) == 1
        assert report.fitted_rates == {}
        assert report.residual_rates == {}

    def test_failure_is_recorded(self, mocker):
        """Test a failing level is reported instead of aborting the ladder"""
        mocker.patch('pimspec.services.convergence.solve_spectrum',
                     side_effect=EigenConvergenceError('no convergence'))
        report = run_ladder('circle', [50, 100], BandwidthRule(t=0.01), modes=1)
        assert [level.stage for level in report.levels] == ['eigs', 'eigs']
        assert not any(level.ok for level in report.levels)
        frame = report.to_frame()
        assert frame['status'].tolist() == ['failed[eigs]: no convergence'] * 2
        assert [entry['status'] for entry in report.summary()['levels']] == ['failed', 'failed']

    @pytest.mark.parametrize('n_list', [[], [200, 100], [100, 100]])
    def test_invalid_ladder(self, n_list):
        """Test empty or non-increasing ladders are rejected"""
        with pytest.raises(ValidationError):
            run_ladder('interval', n_list, BandwidthRule(t=0.004))

    def test_sampler_error_fails_level(self):
        """Test sampler errors are recorded at the sample stage"""
        report = run_ladder('sphere', [50], BandwidthRule(t=0.1), modes=1, params={'L': 1.0})
        assert report.levels[0].stage == 'sample'

    @pytest.mark.parametrize('error', [
        np.linalg.LinAlgError('eigh did not converge'),
        ValueError('array must not contain infs or NaNs'),
    ])
    def test_library_error_fails_level(self, mocker, error):
        """Test errors raised outside the package are recorded instead of aborting the ladder"""
        mocker.patch('pimspec.services.convergence.solve_spectrum', side_effect=error)
        report = run_ladder('interval', [60, 120], BandwidthRule(t=0.01), modes=1, params={'L': math.pi})
        assert [level.stage for level in report.levels] == ['eigs', 'eigs']
        assert not any(level.ok for level in report.levels)
        assert all(type(error).__name__ in level.error for level in report.levels)
        assert report.fitted_rates == {}

    def test_level_records_realized_size(self, mocker):
        """Test each level reports the size of the cloud actually sampled"""
        mocker.patch('pimspec.services.convergence.sample_manifold',
                     side_effect=lambda tag, n, **params: sample_manifold(tag, n + 7, **params))
        report = run_ladder('interval', [100, 200], BandwidthRule(t=0.004), modes=1, params={'L': math.pi})
        assert [level.n for level in report.levels] == [107, 207]
        assert report.to_frame()['n'].unique().tolist() == [107, 207]

    def test_hemisphere_level_size(self):
        """Test a sampler that rounds n to whole latitude bands reports its own count"""
        cloud = sample_manifold('hemisphere', 50)
        report = run_ladder('hemisphere', [50], BandwidthRule(t=0.2), modes=1)
        assert report.levels[0].n == cloud.n


class TestReport:
    """Test cases for report output"""

    def make_report(self):
        level = LevelResult(100, 0.01, 0.004)
        failed = LevelResult(200, 0.005, 0.002, error='boom', stage='assemble')
        return ConvergenceReport([level, failed], {'manifold': 'interval'})

    def test_frame_columns(self):
        """Test report columns and failed-level rows"""
        frame = self.make_report().to_frame()
        assert list(frame.columns) == [
            'n', 'h', 't', 'mode', 'cluster', 'mu_computed', 'mu_exact',
            'abs_error', 'rel_error', 'subspace_residual', 'status',
        ]
        assert frame['status'].tolist() == ['failed[assemble]: boom']

    def test_write_report(self, tmp_path):
        """Test report files are written with relative references"""
        summary_path = write_report(self.make_report(), str(tmp_path / 'out'))
        with open(summary_path) as handle:
            summary = json.load(handle)
        assert summary['report'] == 'report.csv'
        assert summary['timings'] == 'timings.csv'
        assert summary['levels'][1]['status'] == 'failed'
        assert os.path.exists(tmp_path / 'out' / 'report.csv')
        timings = pd.read_csv(tmp_path / 'out' / 'timings.csv')
        assert timings['n'].tolist() == [100, 200]
