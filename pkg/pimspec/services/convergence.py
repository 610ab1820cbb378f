"""
Refinement studies: eigenvalue errors, eigenfunction subspace residuals and fitted rates
"""

import os
import re
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from pimspec.config import Config
from pimspec.services.assembly import PimPencil, assemble_pencil
from pimspec.services.eigensolve import Spectrum, eigenvalue_table, solve_spectrum
from pimspec.services.pointcloud import GroundTruth, ground_truth, perturb_cloud, sample_manifold
from pimspec.services.storage import write_atomic, write_json
from pimspec.utils.error_handlers import ClusterNotResolvedError, PimError, ValidationError, stage_error
from pimspec.utils.performance import timed_stage

logger = logging.getLogger(__name__)

REPORT_CSV = 'report.csv'
SUMMARY_JSON = 'summary.json'
TIMINGS_CSV = 'timings.csv'

DEFAULT_REL_WINDOW = 0.05

_POWER_RULE = re.compile(r'^\s*(c|[0-9.eE+-]+)\s*\*\s*h\s*\^\s*\(?\s*([0-9.eE+-]+(?:\s*/\s*[0-9.]+)?)\s*\)?\s*$')


@dataclass(frozen=True)
class BandwidthRule:
    """Either a fixed t or t = c h^gamma with h the fill distance"""

    t: Optional[float] = None
    c: Optional[float] = None
    gamma: float = 0.5

    def __post_init__(self):
        if self.t is None and self.c is None:
            raise ValidationError("bandwidth rule needs a fixed t or a coefficient c")
        if self.t is not None and not self.t > 0:
            raise ValidationError(f"fixed t must be positive, got {self.t}")
        if self.t is None and not (self.c > 0 and self.gamma > 0):
            raise ValidationError("t = c*h^gamma needs c > 0 and gamma > 0")

    @classmethod
    def parse(cls, text: str, c: Optional[float] = None) -> 'BandwidthRule':
        """Parse "c*h^0.5" (with ``c`` given separately), "0.03*h^0.5" or a plain number"""
        try:
            return cls(t=float(text))
        except ValueError:
            pass
        match = _POWER_RULE.match(text or '')
        if not match:
            raise ValidationError(f"cannot parse bandwidth rule {text!r}; expected 'c*h^gamma' or a number")
        coefficient, exponent = match.groups()
        if coefficient != 'c':
            c = float(coefficient)
        if c is None:
            raise ValidationError("bandwidth rule 'c*h^gamma' needs a value for c")
        numerator, _, denominator = exponent.partition('/')
        gamma = float(numerator) / float(denominator) if denominator else float(numerator)
        return cls(c=float(c), gamma=gamma)

    @property
    def fixed(self) -> bool:
        return self.t is not None

    def __call__(self, h: float) -> float:
        if self.fixed:
            return self.t
        return self.c * h ** self.gamma

    def describe(self) -> str:
        return f't={self.t:g}' if self.fixed else f't={self.c:g}*h^{self.gamma:g}'


def cluster_window(mu: float, spectrum: Spectrum, rel_window: float = DEFAULT_REL_WINDOW) -> float:
    median = float(np.median(spectrum.residual_norms)) if spectrum.m else 0.0
    return max(rel_window * abs(mu), 3.0 * median, 1e-8)


def subspace_residual(spectrum: Spectrum, truth: GroundTruth, pencil: PimPencil, cluster_index: int,
                      rel_window: float = DEFAULT_REL_WINDOW, seminorm: bool = False) -> float:
    """Largest relative distance from a sampled analytic eigenfunction to the matched computed span

    The span holds the computed eigenvectors whose mu lies in the cluster's
    matching window. Distances use the B norm, or the stiffness seminorm when
    ``seminorm`` is set.
    """
    clusters = truth.clusters()
    if not 0 <= cluster_index < len(clusters):
        raise ValidationError(f"cluster index {cluster_index} outside 0..{len(clusters) - 1}")
    cluster = clusters[cluster_index]

    window = cluster_window(cluster.value, spectrum, rel_window)
    matched = np.flatnonzero(np.abs(spectrum.mu - cluster.value) <= window)
    if matched.size == 0:
        raise ClusterNotResolvedError(payload={'cluster': cluster_index, 'mu_exact': cluster.value, 'window': window})

    M = pencil.A if seminorm else pencil.B
    span = spectrum.vectors[:, matched]
    M_span = M @ span
    gram = span.T @ M_span

    worst = 0.0
    for k in range(cluster.start, cluster.stop):
        phi = truth.eigenfunction_eval(k, pencil.cloud.points)
        phi_norm_sq = float(phi @ (M @ phi))
        if phi_norm_sq <= 1e-300:
            continue
        coefficients = np.linalg.lstsq(gram, M_span.T @ phi, rcond=None)[0]
        r = phi - span @ coefficients
        worst = max(worst, math.sqrt(max(float(r @ (M @ r)), 0.0) / phi_norm_sq))
    return worst


def fit_rate(h_values: Sequence[float], errors: Sequence[float]):
    """Least-squares slope and intercept of log(error) against log(h)"""
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.shape != e.shape or h.size < 3:
        raise ValidationError("rate fit needs at least 3 (h, error) pairs")
    if np.any(h <= 0) or np.any(e <= 0):
        raise ValidationError("rate fit needs positive h and error values")
    slope, intercept = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope), float(intercept)


@dataclass
class LevelResult:
    """One ladder level: errors per mode and subspace residual per cluster"""
    n: int
    h: float
    t: float
    modes: list = field(default_factory=list)
    cluster_residuals: Dict[int, float] = field(default_factory=dict)
    error: Optional[str] = None
    stage: Optional[str] = None
    seconds: float = 0.0
    memory_delta: int = 0

    @property
    def ok(self) -> bool:
        return self.error is None

    def mode_errors(self) -> Dict[int, float]:
        return {row.index: row.rel_error for row in self.modes}


def compare_spectrum(pencil: PimPencil, spectrum: Spectrum, modes: Optional[int] = None,
                     rel_window: float = DEFAULT_REL_WINDOW, seminorm: bool = False) -> LevelResult:
    """Compare one solved level with its manifold's analytic spectrum

    ``modes`` counts nonzero modes; modes 0..modes are compared.
    """
    cloud = pencil.cloud
    modes = spectrum.m - 1 if modes is None else modes
    if modes + 1 > spectrum.m:
        raise ValidationError(f"spectrum holds {spectrum.m} modes; cannot compare modes 0..{modes}")

    truth = ground_truth(cloud.manifold, cloud.params, count=spectrum.m)
    table = eigenvalue_table(spectrum, truth, modes + 1)

    residuals = {}
    for cluster_id in sorted({row.cluster for row in table}):
        try:
            residuals[cluster_id] = subspace_residual(spectrum, truth, pencil, cluster_id, rel_window, seminorm)
        except ClusterNotResolvedError:
            logger.warning(f"cluster {cluster_id} not resolved at n={cloud.n}")
            residuals[cluster_id] = float('nan')

    return LevelResult(cloud.n, cloud.h_estimate, pencil.t, table, residuals)


def solve_count(manifold: str, params: Optional[dict], modes: int) -> int:
    """Number of modes to solve so that the cluster holding mode ``modes`` is complete"""
    truth = ground_truth(manifold, params, count=modes + 1)
    return max(c.stop for c in truth.clusters() if c.start <= modes)


@dataclass
class ConvergenceReport:
    levels: List[LevelResult]
    config: dict
    fitted_rates: Dict[int, tuple] = field(default_factory=dict)
    residual_rates: Dict[int, tuple] = field(default_factory=dict)

    def fit(self):
        """Fit per-mode and per-cluster rates over levels with at least 3 positive values"""
        ok = [level for level in self.levels if level.ok]
        self.fitted_rates, self.residual_rates = {}, {}

        # the constant mode is exact in A; only nonzero modes carry a rate
        nonzero = [row for level in ok for row in level.modes if row.mu_exact > 0]
        mode_ids = sorted({row.index for row in nonzero})
        for mode in mode_ids:
            pairs = [(level.h, level.mode_errors().get(mode)) for level in ok]
            pairs = [(h, e) for h, e in pairs if e is not None and e > 0]
            if len(pairs) >= 3:
                self.fitted_rates[mode] = fit_rate(*zip(*pairs))

        cluster_ids = sorted({row.cluster for row in nonzero})
        for cluster in cluster_ids:
            pairs = [(level.h, level.cluster_residuals.get(cluster)) for level in ok]
            pairs = [(h, r) for h, r in pairs if r is not None and np.isfinite(r) and r > 0]
            if len(pairs) >= 3:
                self.residual_rates[cluster] = fit_rate(*zip(*pairs))
        return self

    def to_frame(self) -> pd.DataFrame:
        """One row per (level, mode); a failed level contributes one row naming its error"""
        records = []
        for level in self.levels:
            if not level.ok:
                records.append({
                    'n': level.n, 'h': level.h, 't': level.t, 'mode': None, 'cluster': None,
                    'mu_computed': None, 'mu_exact': None, 'abs_error': None, 'rel_error': None,
                    'subspace_residual': None, 'status': f'failed[{level.stage}]: {level.error}',
                })
                continue
            for row in level.modes:
                records.append({
                    'n': level.n, 'h': level.h, 't': level.t, 'mode': row.index, 'cluster': row.cluster,
                    'mu_computed': row.mu_computed, 'mu_exact': row.mu_exact,
                    'abs_error': row.abs_error, 'rel_error': row.rel_error,
                    'subspace_residual': level.cluster_residuals.get(row.cluster),
                    'status': 'ok',
                })
        frame = pd.DataFrame.from_records(records, columns=[
            'n', 'h', 't', 'mode', 'cluster', 'mu_computed', 'mu_exact',
            'abs_error', 'rel_error', 'subspace_residual', 'status',
        ])
        return frame.astype({'mode': 'Int64', 'cluster': 'Int64', 'n': 'int64'})

    def timings_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(
            [{'n': level.n, 'seconds': level.seconds, 'memory_delta': level.memory_delta} for level in self.levels],
            columns=['n', 'seconds', 'memory_delta'],
        )

    def summary(self) -> dict:
        def rates(table):
            return {str(k): {'slope': v[0], 'intercept': v[1]} for k, v in sorted(table.items())}

        return {
            'config': self.config,
            'levels': [
                {'n': level.n, 'h': level.h, 't': level.t, 'status': 'ok' if level.ok else 'failed',
                 'error': level.error}
                for level in self.levels
            ],
            'fitted_rates': rates(self.fitted_rates),
            'residual_rates': rates(self.residual_rates),
            'report': REPORT_CSV,
            'timings': TIMINGS_CSV,
        }


def write_report(report: ConvergenceReport, directory: str) -> str:
    """report.csv, timings.csv and summary.json (paths relative to the directory)"""
    os.makedirs(directory, exist_ok=True)
    write_atomic(os.path.join(directory, REPORT_CSV),
                 report.to_frame().to_csv(index=False, float_format='%.17g', lineterminator='\n'))
    write_atomic(os.path.join(directory, TIMINGS_CSV),
                 report.timings_frame().to_csv(index=False, lineterminator='\n'))
    summary_path = os.path.join(directory, SUMMARY_JSON)
    write_json(summary_path, report.summary())
    logger.info(f"Wrote convergence report ({len(report.levels)} levels) to {directory}")
    return summary_path


def report_config(manifold: str, params: Optional[dict], kernel: str, modes: int, graph_mode: bool,
                  rel_window: float, seminorm: bool, **extra) -> dict:
    config = {
        'manifold': manifold,
        'params': dict(sorted((params or {}).items())),
        'kernel': kernel,
        'modes': modes,
        'graph_mode': bool(graph_mode),
        'rel_window': rel_window,
        'norm': 'A-seminorm' if seminorm else 'B',
    }
    config.update(extra)
    return config


def run_ladder(manifold: str, n_list: Sequence[int], t_rule: BandwidthRule, kernel: Optional[str] = None,
               modes: int = 5, params: Optional[dict] = None, graph_mode: bool = False,
               perturbation: Optional[dict] = None, lanczos: Optional[bool] = None,
               tol: Optional[float] = None, rel_window: float = DEFAULT_REL_WINDOW,
               seminorm: bool = False, threads: Optional[int] = None,
               deflate_constant: bool = False, backend: Optional[str] = None,
               max_iter: Optional[int] = None, seed: int = 0) -> ConvergenceReport:
    """Sample, assemble, solve and compare at every n; failures are recorded per level"""
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ValidationError("ladder needs at least one n")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValidationError(f"ladder sizes must be strictly increasing, got {n_list}")
    if modes < 1:
        raise ValidationError("ladder needs at least one nonzero mode")

    kernel = kernel or Config.DEFAULT_KERNEL
    params = dict(params or {})
    count = solve_count(manifold, params, modes)
    levels = []

    for n in n_list:
        level = LevelResult(n, float('nan'), float('nan'))
        stage = 'sample'
        with timed_stage(f'ladder n={n}') as timing:
            try:
                cloud = sample_manifold(manifold, n, **params)
                if perturbation:
                    cloud = perturb_cloud(cloud, **perturbation)
                level.n, level.h = cloud.n, cloud.h_estimate
                level.t = t_rule(level.h)
                stage = 'assemble'
                pencil = assemble_pencil(cloud, kernel, level.t, graph_mode=graph_mode, threads=threads)
                stage = 'eigs'
                spectrum = solve_spectrum(pencil, min(count, pencil.n), lanczos=lanczos, backend=backend, tol=tol,
                                          deflate_constant=deflate_constant, max_iter=max_iter, seed=seed)
                stage = 'compare'
                result = compare_spectrum(pencil, spectrum, modes, rel_window, seminorm)
                level.modes, level.cluster_residuals = result.modes, result.cluster_residuals
            except Exception as exc:
                wrapped = stage_error(stage, exc)
                logger.error(f"Ladder level n={n} failed: {wrapped.message}")
                level.stage = stage
                level.error = exc.message if isinstance(exc, PimError) else f"{type(exc).__name__}: {exc}"
        level.seconds, level.memory_delta = timing.seconds, timing.memory_delta
        levels.append(level)
        if level.ok:
            worst = max(row.rel_error for row in level.modes[1:]) if len(level.modes) > 1 else 0.0
            logger.info(f"Ladder n={n} h={level.h:.4g} t={level.t:.4g}: worst relative error {worst:.3e}")

    config = report_config(manifold, params, kernel, modes, graph_mode, rel_window, seminorm,
                           t_rule=t_rule.describe(), n_list=n_list, perturbation=perturbation or None)
    return ConvergenceReport(levels, config).fit()
