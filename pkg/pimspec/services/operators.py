"""
Discrete solution operator, the normalization field w_{t,h} and off-sample extensions
"""

import math
import inspect
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg, splu

from pimspec.config import Config
from pimspec.services.assembly import PimPencil, build_neighbor_index
from pimspec.services.kernels import get_kernel, normalization_constant
from pimspec.utils.error_handlers import (
    DimensionMismatchError, PoissonConvergenceError, SingularSystemError,
    UnsupportedQueryPointError, ValidationError,
)
from pimspec.utils.performance import monitor_performance

logger = logging.getLogger(__name__)

POISSON_METHODS = ('direct', 'cg')


class KernelField:
    """Kernel sums sum_j K_t(x, p_j) g_j V_j at arbitrary ambient points

    The neighbor index is built once and reused for every query batch.
    """

    def __init__(self, cloud, kernel, t: float, weights=None):
        if isinstance(kernel, str):
            kernel = get_kernel(kernel)
        if not t > 0:
            raise ValidationError(f"bandwidth t must be positive, got {t}")
        self.cloud = cloud
        self.kernel = kernel
        self.t = float(t)
        self.weights = cloud.weights if weights is None else np.asarray(weights, dtype=float)
        self.c_t = normalization_constant(t, cloud.intrinsic_dim)
        self.index = build_neighbor_index(cloud, 2.0 * math.sqrt(t))

    @classmethod
    def from_pencil(cls, pencil: PimPencil) -> 'KernelField':
        return cls(pencil.cloud, pencil.kernel, pencil.t, pencil.weights)

    def _queries(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1 and not (x.ndim == 1 and self.cloud.ambient_dim == 1 and x.shape[0] > 1)
        queries = x.reshape(1, -1) if single else x.reshape(x.shape[0], -1)
        if queries.shape[1] != self.cloud.ambient_dim:
            raise DimensionMismatchError(
                f"query points have dimension {queries.shape[1]}, cloud has {self.cloud.ambient_dim}"
            )
        return queries, single

    def _check_values(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.cloud.n,):
            raise DimensionMismatchError(f"sample vector has shape {values.shape}, cloud has n={self.cloud.n}")
        return values

    def sums(self, queries, values, which='R'):
        rows, cols, sq = self.index.pairs_for(queries)
        kernel_values = self.c_t * self.kernel.evaluate(sq / (4.0 * self.t), which)
        return np.bincount(rows, weights=kernel_values * values[cols] * self.weights[cols],
                           minlength=queries.shape[0])

    def _w(self, queries):
        w = self.sums(queries, np.ones(self.cloud.n))
        unsupported = np.flatnonzero(w <= 0)
        if unsupported.size:
            raise UnsupportedQueryPointError(payload={
                'unsupported_points': unsupported[:10].tolist(),
                'support_radius': 2.0 * math.sqrt(self.t),
            })
        return w

    @staticmethod
    def _out(values, single):
        return float(values[0]) if single else values

    def w(self, x):
        """w_{t,h}(x) = sum_j R_t(x, p_j) V_j"""
        queries, single = self._queries(x)
        return self._out(self._w(queries), single)

    def smooth(self, u, x):
        """Kernel-weighted average sum_j R_t(x, p_j) u_j V_j / w_{t,h}(x)"""
        u = self._check_values(u)
        queries, single = self._queries(x)
        return self._out(self.sums(queries, u) / self._w(queries), single)

    def extend(self, u, lam: float, x):
        """I_lambda(u)(x) = [sum R_t u_j V_j - lambda t sum Rbar_t u_j V_j] / w_{t,h}(x)"""
        u = self._check_values(u)
        queries, single = self._queries(x)
        numerator = self.sums(queries, u)
        if lam != 0:
            numerator = numerator - lam * self.t * self.sums(queries, u, 'Rbar')
        return self._out(numerator / self._w(queries), single)

    def solution_operator(self, u, f, x):
        """[sum R_t u_j V_j - t sum Rbar_t f_j V_j] / w_{t,h}(x) for a solved pair (u, f)"""
        u = self._check_values(u)
        f = self._check_values(f)
        queries, single = self._queries(x)
        numerator = self.sums(queries, u) - self.t * self.sums(queries, f, 'Rbar')
        return self._out(numerator / self._w(queries), single)


def w_field(cloud, kernel, t: float, x):
    return KernelField(cloud, kernel, t).w(x)


def smooth_field(cloud, kernel, t: float, u, x):
    return KernelField(cloud, kernel, t).smooth(u, x)


def extend_eigenvector(cloud, kernel, t: float, u, lam: float, x):
    """Off-sample extension of an eigenvector with eigenvalue lambda = -mu

    At the samples this reproduces u exactly when (u, lambda) is an eigenpair
    of the pencil assembled with the same weights.
    """
    return KernelField(cloud, kernel, t).extend(u, lam, x)


def extend_mode(pencil: PimPencil, spectrum, mode: int, x):
    """Extend computed mode ``mode`` of a spectrum off the samples"""
    if not 0 <= mode < spectrum.m:
        raise ValidationError(f"mode {mode} outside 0..{spectrum.m - 1}")
    field = KernelField.from_pencil(pencil)
    return field.extend(spectrum.vectors[:, mode], -float(spectrum.mu[mode]), x)


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    """Weighted-mean-zero solution u of A u = -B f"""
    u: np.ndarray
    rhs_f: np.ndarray
    t: float
    method: str
    iterations: Optional[int]
    residual: float


def project_compatible(pencil: PimPencil, f) -> np.ndarray:
    """Remove the constant component so that 1^T B f = 0"""
    ones = np.ones(pencil.n)
    mass = float(ones @ (pencil.B @ ones))
    return f - (float(ones @ (pencil.B @ f)) / mass) * ones


def _cg_tolerance_kwargs(tol):
    if 'rtol' in inspect.signature(cg).parameters:
        return {'rtol': tol, 'atol': 0.0}
    return {'tol': tol, 'atol': 0.0}


@monitor_performance('poisson')
def poisson_solve(pencil: PimPencil, f_samples, tol: Optional[float] = None, method: str = 'direct',
                  max_iter: Optional[int] = None) -> PoissonSolution:
    """Solve the discrete Neumann problem A u = -B f with sum_i u_i V_i = 0

    The direct method factorizes the system bordered by the constraint row;
    the cg method iterates on the singular system and removes the weighted
    mean afterwards.
    """
    tol = Config.DEFAULT_TOL if tol is None else tol
    if method not in POISSON_METHODS:
        raise ValidationError(f"unknown Poisson method {method!r}; expected one of {POISSON_METHODS}")
    f = np.asarray(f_samples, dtype=float)
    if f.shape != (pencil.n,):
        raise DimensionMismatchError(f"right side has shape {f.shape}, pencil has n={pencil.n}")

    n = pencil.n
    V = pencil.weights
    f = project_compatible(pencil, f)
    b = -(pencil.B @ f)
    # range of A is orthogonal to the constants
    b = b - b.mean()
    b_norm = float(np.linalg.norm(b))

    if b_norm == 0.0:
        return PoissonSolution(np.zeros(n), f, pencil.t, method, 0, 0.0)

    iterations = None
    if method == 'direct':
        bordered = sparse.bmat([
            [pencil.A, sparse.csr_matrix(V[:, None])],
            [sparse.csr_matrix(V[None, :]), None],
        ], format='csc')
        try:
            lu = splu(bordered)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"Poisson system singular beyond the constant nullspace: {exc}",
                payload={'isolated_points': pencil.isolated[:10].tolist()},
            )
        solution = lu.solve(np.concatenate([b, [0.0]]))
        u = solution[:n]
        if not np.all(np.isfinite(u)):
            raise SingularSystemError("Poisson system singular beyond the constant nullspace")
    else:
        counter = {'iterations': 0}

        def callback(_):
            counter['iterations'] += 1

        u, info = cg(pencil.A, b, maxiter=max_iter or 10 * n, callback=callback, **_cg_tolerance_kwargs(tol))
        iterations = counter['iterations']
        if info < 0:
            raise SingularSystemError(f"conjugate gradients broke down (info={info})")
        if info > 0:
            raise PoissonConvergenceError(
                f"conjugate gradients stopped after {iterations} iterations without reaching tolerance {tol:g}",
                payload={'relative_residual': float(np.linalg.norm(pencil.A @ u - b)) / b_norm,
                         'iterations': iterations},
            )

    u = u - float(u @ V) / float(V.sum())
    residual = float(np.linalg.norm(pencil.A @ u - b)) / b_norm
    # 10x slack over tol for rounding in the mean shift
    if residual > 10.0 * max(tol, 1e3 * np.finfo(float).eps):
        raise PoissonConvergenceError(
            f"Poisson solve did not reach tolerance {tol:g}",
            payload={'relative_residual': residual, 'method': method, 'iterations': iterations},
        )

    logger.info(f"Poisson solve ({method}) n={n}: relative residual {residual:.2e}")
    return PoissonSolution(u, f, pencil.t, method, iterations, residual)


def apply_solution_operator(pencil: PimPencil, f_samples, x, solution: Optional[PoissonSolution] = None,
                            tol: Optional[float] = None):
    """Evaluate the discrete solution operator T_{t,h}(f) at ambient points

    At a sample p_i the value equals the Poisson solution u_i.
    """
    solution = solution or poisson_solve(pencil, f_samples, tol=tol)
    return KernelField.from_pencil(pencil).solution_operator(solution.u, solution.rhs_f, x)
