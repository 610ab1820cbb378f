"""
Generalized symmetric eigenproblem A u = mu B u for the smallest Neumann modes

The pencil's eigenvalues are reported as mu = -lambda >= 0, ascending from the
constant mode.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.linalg import eigh_tridiagonal, solve_triangular
from scipy.sparse.linalg import splu

from pimspec.config import Config
from pimspec.services.tridiagonal import symmetric_eigh
from pimspec.utils.error_handlers import (
    EigenConvergenceError, MassMatrixError, SingularSystemError, ValidationError,
)
from pimspec.utils.performance import monitor_performance

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Smallest eigenpairs with B-orthonormal, sign-fixed vectors"""

    mu: np.ndarray
    vectors: np.ndarray
    residual_norms: np.ndarray
    solver: str = 'dense'
    t: Optional[float] = None
    kernel_id: Optional[str] = None
    graph_mode: bool = False

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def to_dict(self):
        return {
            'mu': [float(v) for v in self.mu],
            'residuals': [float(v) for v in self.residual_norms],
            'n': self.n,
            't': self.t,
            'kernel': self.kernel_id,
            'graph_mode': self.graph_mode,
            'solver': self.solver,
        }


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first component of largest magnitude positive in every column"""
    vectors = np.array(vectors, dtype=float)
    if vectors.size == 0:
        return vectors
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pencil_residuals(A, B, mu, vectors) -> np.ndarray:
    """||A v - mu B v||_2 for every column"""
    return np.linalg.norm(A @ vectors - (B @ vectors) * mu, axis=0)


def _frobenius(M) -> float:
    if sparse.issparse(M):
        return float(sparse.linalg.norm(M))
    return float(np.linalg.norm(M))


def residual_bound(A, B, mu, tol) -> np.ndarray:
    """tol * (||A||_F + |mu| ||B||_F)"""
    return tol * (_frobenius(A) + np.abs(mu) * _frobenius(B))


def _check_count(m, n):
    if int(m) != m or m < 1:
        raise ValidationError(f"mode count must be a positive integer, got {m}")
    if m > n:
        raise ValidationError(f"requested {m} modes from a pencil of size {n}")


def constant_mode(B) -> np.ndarray:
    """B-normalized constant vector 1 / sqrt(1^T B 1)"""
    ones = np.ones(B.shape[0])
    mass = float(ones @ (B @ ones))
    if not mass > 0:
        raise MassMatrixError(payload={'total_mass': mass})
    return ones / math.sqrt(mass)


def _complement_basis(b):
    """Columns 2..n of the Householder reflector mapping b onto e_1 (orthogonal to b)"""
    n = b.shape[0]
    v = b.copy()
    v[0] += math.copysign(np.linalg.norm(b), b[0])
    H = np.identity(n) - 2.0 * np.outer(v, v) / float(v @ v)
    return H[:, 1:]


def _dense_eigh(A, B, backend, m, sigma):
    """Smallest m eigenpairs of A u = mu B u through the shifted pencil

    B u = nu (A + sigma B) u with nu = 1 / (mu + sigma) is reduced by the
    Cholesky factor of A + sigma B, which stays well conditioned when B is
    not, and the m largest nu are taken.
    """
    try:
        scipy.linalg.cholesky(B, lower=True)
    except np.linalg.LinAlgError:
        raise MassMatrixError(payload={'min_diagonal': float(np.min(np.diag(B)))})
    try:
        L = scipy.linalg.cholesky(A + sigma * B, lower=True)
    except np.linalg.LinAlgError:
        raise SingularSystemError(f"shifted matrix A + {sigma:g} B is not positive definite; "
                                  "the stiffness matrix must be positive semidefinite")

    C = solve_triangular(L, B, lower=True)
    C = solve_triangular(L, C.T, lower=True).T
    C = 0.5 * (C + C.T)

    try:
        if backend == 'native':
            nu, Y = symmetric_eigh(C)
        else:
            nu, Y = scipy.linalg.eigh(C, driver='ev')
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(f"dense {backend} eigensolver did not converge: {exc}",
                                    payload={'n': C.shape[0], 'backend': backend})

    top = np.argsort(-nu, kind='stable')[:m]
    U = solve_triangular(L, Y[:, top], lower=True, trans='T')
    U = U / np.sqrt(np.einsum('ij,ij->j', U, B @ U))
    return 1.0 / nu[top] - sigma, U


@monitor_performance('dense_eigs')
def dense_generalized_eigs(A, B, m: int, backend: Optional[str] = None, deflate_constant: bool = False,
                           tol: Optional[float] = None, dense_cap: Optional[int] = None,
                           sigma: Optional[float] = None) -> Spectrum:
    """Smallest ``m`` eigenpairs through a Cholesky reduction

    B must have a Cholesky factor. The shifted matrix A + sigma B = L L^T
    reduces the pencil to L^-1 B L^-T, which is tridiagonalized by Householder
    reflectors and diagonalized by implicit QL (LAPACK by default, or the
    native NumPy backend); vectors are back-transformed with L^-T.
    """
    backend = backend or Config.DENSE_BACKEND
    if backend not in Config.VALID_BACKENDS:
        raise ValidationError(f"unknown dense backend {backend!r}; expected one of {Config.VALID_BACKENDS}")
    tol = Config.DEFAULT_TOL if tol is None else tol
    dense_cap = dense_cap or Config.DENSE_CAP
    sigma = Config.DENSE_SHIFT if sigma is None else sigma
    if not sigma > 0:
        raise ValidationError(f"dense shift must be positive, got {sigma}")

    A_dense = A.toarray() if sparse.issparse(A) else np.asarray(A, dtype=float)
    B_dense = B.toarray() if sparse.issparse(B) else np.asarray(B, dtype=float)
    n = A_dense.shape[0]
    _check_count(m, n)
    if n > dense_cap:
        raise ValidationError(f"n={n} exceeds the dense solver cap {dense_cap}; use the Lanczos solver")
    if A_dense.shape != B_dense.shape:
        raise ValidationError(f"A has shape {A_dense.shape}, B has shape {B_dense.shape}")

    if deflate_constant:
        u0 = constant_mode(B_dense)
        Z = _complement_basis(B_dense @ u0)
        if m > 1:
            w, Y = _dense_eigh(Z.T @ A_dense @ Z, Z.T @ B_dense @ Z, backend, m - 1, sigma)
            mu = np.concatenate([[0.0], w])
            vectors = np.column_stack([u0, Z @ Y])
        else:
            mu, vectors = np.zeros(1), u0[:, None]
    else:
        mu, vectors = _dense_eigh(A_dense, B_dense, backend, m, sigma)

    vectors = fix_signs(vectors)
    residuals = pencil_residuals(A_dense, B_dense, mu, vectors)
    loose = residuals > residual_bound(A_dense, B_dense, mu, tol)
    if np.any(loose):
        logger.warning(f"{int(loose.sum())} dense eigenpairs exceed the residual tolerance {tol:g}")

    logger.debug(f"Dense eigensolve ({backend}) n={n} m={m}: mu[:3]={mu[:3]}")
    return Spectrum(mu, vectors, residuals, solver=f'dense-{backend}')


@dataclass
class _RitzPair:
    mu: float
    vector: np.ndarray = field(repr=False)
    residual: float
    converged: bool


class _ShiftInvertLanczos:
    """Lanczos on S = (A + sigma B)^-1 B, self-adjoint in the B inner product

    Runs are restarted in the B-orthogonal complement of the locked vectors.
    """

    def __init__(self, A, B, sigma, tol, rng):
        self.A = A
        self.B = B
        self.sigma = sigma
        self.tol = tol
        self.rng = rng
        self.n = A.shape[0]
        self.norm_A = _frobenius(A)
        self.norm_B = _frobenius(B)
        try:
            self.lu = splu((A + sigma * B).tocsc())
        except RuntimeError as exc:
            raise SingularSystemError(f"shifted system A + {sigma:g} B is singular: {exc}")
        self.steps = 0

    def apply(self, x):
        return self.lu.solve(self.B @ x)

    def b_norm_sq(self, x) -> float:
        value = float(x @ (self.B @ x))
        if value < -1e-12 * float(x @ x) * max(1.0, self.norm_B):
            raise MassMatrixError(payload={'b_norm_squared': value})
        return max(value, 0.0)

    def orthogonalize(self, w, basis, locked):
        """Two passes of B-orthogonal Gram-Schmidt against basis and locked vectors"""
        for _ in range(2):
            for block in (basis, locked):
                if block is not None and block.shape[1]:
                    w = w - block @ (block.T @ (self.B @ w))
        return w

    def fresh_vector(self, basis, locked, start=None):
        """A B-unit vector orthogonal to basis and locked, or None when the complement is exhausted"""
        for attempt in range(3):
            w = start if (start is not None and attempt == 0) else self.rng.standard_normal(self.n)
            scale = math.sqrt(max(self.b_norm_sq(w), 0.0))
            w = self.orthogonalize(w, basis, locked)
            norm = math.sqrt(self.b_norm_sq(w))
            if norm > 1e-10 * max(scale, 1e-300):
                return w / norm
        return None

    def true_pair(self, theta, v) -> _RitzPair:
        mu = 1.0 / theta - self.sigma
        residual = float(np.linalg.norm(self.A @ v - mu * (self.B @ v)))
        bound = self.tol * (self.norm_A + abs(mu) * self.norm_B)
        return _RitzPair(mu, v, residual, residual <= bound)

    def run(self, need, k_max, locked, budget, start=None) -> Optional[List[_RitzPair]]:
        """Build a Krylov basis until the ``need`` smallest Ritz pairs converge"""
        Q = np.zeros((self.n, k_max + 1))
        q = self.fresh_vector(Q[:, :0], locked, start)
        if q is None:
            return None
        Q[:, 0] = q
        alpha, beta = [], []

        for j in range(k_max):
            w = self.apply(Q[:, j])
            self.steps += 1
            budget -= 1

            a = float(Q[:, j] @ (self.B @ w))
            w = w - a * Q[:, j]
            if j > 0:
                w = w - beta[j - 1] * Q[:, j - 1]
            w = self.orthogonalize(w, Q[:, :j + 1], locked)
            b = math.sqrt(self.b_norm_sq(w))
            alpha.append(a)

            theta, Y = eigh_tridiagonal(np.array(alpha), np.array(beta)) if beta else (np.array(alpha), np.ones((1, 1)))
            top = np.argsort(-theta)[:need]
            estimates = np.abs(b * Y[-1, top])
            last = j + 1 == k_max

            breakdown = b <= 1e-12 * max(abs(a), 1e-300)
            if breakdown:
                q = self.fresh_vector(Q[:, :j + 1], locked)
                if q is None:
                    last = True
                else:
                    b = 0.0
                    logger.debug(f"Lanczos breakdown at step {j}; restarting with a random B-orthogonal vector")

            if last or budget <= 0 or np.all(estimates <= self.tol * np.abs(theta[top])):
                basis = Q[:, :j + 1]
                pairs = [self.true_pair(theta[i], basis @ Y[:, i]) for i in top if theta[i] > 0]
                if last or budget <= 0 or all(p.converged for p in pairs):
                    return pairs

            beta.append(b)
            Q[:, j + 1] = q if breakdown else w / b

        return []


def _partial_payload(mu, residuals):
    order = np.argsort(mu)
    return {
        'converged_modes': len(mu),
        'spectrum': {'mu': [float(mu[i]) for i in order], 'residuals': [float(residuals[i]) for i in order]},
    }


@monitor_performance('lanczos_eigs')
def lanczos_generalized_eigs(A, B, m: int, max_iter: Optional[int] = None, tol: Optional[float] = None,
                             sigma: Optional[float] = None, seed: int = 0,
                             deflate_constant: bool = False) -> Spectrum:
    """Smallest ``m`` eigenpairs by shift-invert Lanczos with full reorthogonalization

    Converged pairs are locked and the iteration restarts in their
    B-orthogonal complement; a final verification run confirms that no
    eigenvalue below the m-th was missed, which recovers repeated eigenvalues
    with their full multiplicity. ``max_iter`` caps the total number of
    Lanczos steps over all runs.
    """
    A = sparse.csr_matrix(A, dtype=float)
    B = sparse.csr_matrix(B, dtype=float)
    n = A.shape[0]
    _check_count(m, n)
    tol = Config.DEFAULT_TOL if tol is None else tol
    sigma = Config.LANCZOS_SHIFT if sigma is None else sigma
    max_iter = max_iter or max(50 * m, 500)

    if np.any(B.diagonal() <= 0):
        raise MassMatrixError(payload={'min_diagonal': float(B.diagonal().min())})

    solver = _ShiftInvertLanczos(A, B, sigma, tol, np.random.default_rng(seed))
    locked_mu, locked_vecs, locked_res = [], [], []

    if deflate_constant:
        u0 = constant_mode(B)
        locked_mu.append(0.0)
        locked_vecs.append(u0)
        locked_res.append(float(np.linalg.norm(A @ u0)))

    restart = None
    while len(locked_mu) < n:
        need = m - len(locked_mu)
        verifying = need <= 0
        k_max = min(n - len(locked_mu), max(4 * max(need, 1) + 40, 80))
        locked = np.column_stack(locked_vecs) if locked_vecs else None
        budget = max_iter - solver.steps
        if budget <= 0 and verifying:
            logger.warning(f"Lanczos step cap {max_iter} reached before verification; "
                           f"returning the {len(locked_mu)} locked modes unverified")
            break
        if budget <= 0:
            raise EigenConvergenceError(
                f"Lanczos exceeded {max_iter} iterations with {len(locked_mu)} of {m} modes converged",
                payload=_partial_payload(np.array(locked_mu), np.array(locked_res)),
            )

        pairs = solver.run(max(need, 1), k_max, locked, budget, start=restart)
        if not pairs:
            break

        converged = [p for p in pairs if p.converged]
        if verifying:
            cutoff = sorted(locked_mu)[m - 1]
            below = [p for p in converged if p.mu < cutoff + 1e-8 * max(1.0, cutoff)]
            if not below:
                if not converged:
                    logger.warning(f"Lanczos verification run did not converge; returning the "
                                   f"{len(locked_mu)} locked modes unverified")
                break
            converged = below

        for pair in converged:
            locked_mu.append(pair.mu)
            locked_vecs.append(pair.vector)
            locked_res.append(pair.residual)

        pending = [p for p in pairs if not p.converged]
        restart = pending[0].vector if pending else None

    if len(locked_mu) < m:
        raise EigenConvergenceError(
            f"Lanczos found only {len(locked_mu)} of {m} modes",
            payload=_partial_payload(np.array(locked_mu), np.array(locked_res)),
        )

    order = np.argsort(np.array(locked_mu), kind='stable')[:m]
    mu = np.array(locked_mu)[order]
    vectors = fix_signs(np.column_stack(locked_vecs)[:, order])
    residuals = pencil_residuals(A, B, mu, vectors)

    logger.debug(f"Lanczos n={n} m={m} converged in {solver.steps} steps")
    return Spectrum(mu, vectors, residuals, solver='lanczos')


def solve_spectrum(pencil, m: int, lanczos: Optional[bool] = None, backend: Optional[str] = None,
                   tol: Optional[float] = None, deflate_constant: bool = False,
                   max_iter: Optional[int] = None, seed: int = 0) -> Spectrum:
    """Dense solve up to the dense cap, Lanczos beyond it (or when asked)"""
    if lanczos is None:
        lanczos = pencil.n > Config.DENSE_CAP

    if lanczos:
        spectrum = lanczos_generalized_eigs(pencil.A, pencil.B, m, max_iter=max_iter, tol=tol,
                                            seed=seed, deflate_constant=deflate_constant)
    else:
        spectrum = dense_generalized_eigs(pencil.A, pencil.B, m, backend=backend,
                                          deflate_constant=deflate_constant, tol=tol)

    logger.info(f"Solved {spectrum.m} modes with {spectrum.solver} (n={pencil.n}, t={pencil.t:.4g})")
    return Spectrum(spectrum.mu, spectrum.vectors, spectrum.residual_norms, spectrum.solver,
                    pencil.t, pencil.kernel_id, pencil.graph_mode)


@dataclass(frozen=True)
class ModeComparison:
    index: int
    cluster: int
    mu_computed: float
    mu_exact: float
    abs_error: float
    rel_error: float


def eigenvalue_table(spectrum: Spectrum, truth, modes: Optional[int] = None) -> List[ModeComparison]:
    """Pair computed and analytic eigenvalues cluster by cluster

    Within a degenerate analytic cluster the computed values are matched as a
    sorted block. The relative error of a zero eigenvalue is its absolute error.
    """
    modes = spectrum.m if modes is None else modes
    if modes > spectrum.m:
        raise ValidationError(f"fewer computed modes ({spectrum.m}) than requested comparisons ({modes})")
    if modes > len(truth.eigenvalues):
        raise ValidationError(f"ground truth lists only {len(truth.eigenvalues)} modes")

    rows = []
    for cluster_id, cluster in enumerate(truth.clusters()):
        if cluster.start >= modes:
            break
        stop = min(cluster.stop, modes)
        block = np.sort(spectrum.mu[cluster.start:stop])
        for offset, computed in enumerate(block):
            exact = float(truth.eigenvalues[cluster.start + offset])
            error = abs(float(computed) - exact)
            rows.append(ModeComparison(
                cluster.start + offset, cluster_id, float(computed), exact, error,
                error / exact if exact > 0 else error,
            ))
    return rows


def solution_operator_eigenvalues(spectrum: Spectrum, zero_tol: float = 1e-8) -> np.ndarray:
    """Eigenvalues 1/lambda = -1/mu of the discrete solution operator; NaN for the constant modes"""
    mu = np.asarray(spectrum.mu, dtype=float)
    scale = max(1.0, float(np.abs(mu).max()))
    out = np.full(mu.shape, np.nan)
    nonzero = np.abs(mu) > zero_tol * scale
    out[nonzero] = -1.0 / mu[nonzero]
    return out
