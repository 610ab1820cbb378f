"""
Sparse stiffness/mass pencil (A, B) of the point integral discretization
"""

import math
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from typing import Optional

import numpy as np
from scipy import sparse

from pimspec.config import Config
from pimspec.services.kernels import KernelSpec, get_kernel, normalization_constant
from pimspec.services.pointcloud import PointCloud
from pimspec.utils.error_handlers import BandwidthWarning, DimensionMismatchError, ValidationError
from pimspec.utils.performance import monitor_performance

logger = logging.getLogger(__name__)

# Largest number of grid cells the flattened cell ids may address
MAX_CELLS = 2 ** 62


class NeighborIndex:
    """Uniform grid over the bounding box with cell size equal to the query radius

    Points are sorted by flattened cell id; a cell's members are the slice
    found by binary search in the sorted ids.
    """

    def __init__(self, points, radius: float):
        if not radius > 0:
            raise ValidationError(f"neighbor radius must be positive, got {radius}")

        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.radius = float(radius)
        self.cell = self.radius
        self.origin = self.points.min(axis=0)
        extent = self.points.max(axis=0) - self.origin
        self.dims = np.floor(extent / self.cell).astype(np.int64) + 1

        if float(np.prod(self.dims.astype(float))) > MAX_CELLS:
            raise ValidationError("neighbor radius too small for the extent of the cloud")

        self.coords = self._to_grid(self.points)
        cell_ids = np.ravel_multi_index(self.coords.T, self.dims)
        self.order = np.argsort(cell_ids, kind='stable')
        self.sorted_ids = cell_ids[self.order]

        reach = int(math.ceil(self.radius / self.cell))
        self.offsets = np.array(list(product(range(-reach, reach + 1), repeat=self.points.shape[1])), dtype=np.int64)

    def _to_grid(self, x):
        return np.floor((x - self.origin) / self.cell).astype(np.int64)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def pairs_for(self, queries, query_ids=None):
        """All (query, point) pairs within the radius, sorted by query then point index

        Returns (rows, cols, squared distances); rows index ``query_ids`` when
        given, otherwise positions in ``queries``.
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if queries.shape[1] != self.points.shape[1]:
            raise DimensionMismatchError(
                f"query points have dimension {queries.shape[1]}, cloud has {self.points.shape[1]}"
            )
        query_ids = np.arange(queries.shape[0]) if query_ids is None else np.asarray(query_ids)
        base = self._to_grid(queries)

        rows, cols = [], []
        for offset in self.offsets:
            cells = base + offset
            valid = np.all((cells >= 0) & (cells < self.dims), axis=1)
            if not np.any(valid):
                continue
            cid = np.ravel_multi_index(cells[valid].T, self.dims)
            start = np.searchsorted(self.sorted_ids, cid, side='left')
            stop = np.searchsorted(self.sorted_ids, cid, side='right')
            counts = stop - start
            total = int(counts.sum())
            if total == 0:
                continue
            first = np.repeat(np.cumsum(counts) - counts, counts)
            members = np.repeat(start, counts) + (np.arange(total) - first)
            rows.append(np.repeat(np.flatnonzero(valid), counts))
            cols.append(self.order[members])

        if not rows:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        sq = np.sum((queries[rows] - self.points[cols]) ** 2, axis=1)
        keep = sq <= self.radius * self.radius
        rows, cols, sq = rows[keep], cols[keep], sq[keep]

        order = np.lexsort((cols, rows))
        return query_ids[rows[order]], cols[order], sq[order]

    def query(self, point) -> np.ndarray:
        """Indices j with |point - p_j| <= radius, ascending"""
        _, cols, _ = self.pairs_for(np.atleast_2d(point))
        return cols

    def pairs(self, threads: Optional[int] = None):
        """All sample pairs within the radius (self pairs included), row-major sorted

        Rows are split into contiguous chunks; chunk outputs are concatenated
        in row order so the result does not depend on the worker count.
        """
        threads = max(1, int(threads or Config.THREADS))
        ids = np.arange(self.n)
        if threads == 1 or self.n < 2 * threads:
            return self.pairs_for(self.points, ids)

        chunks = np.array_split(ids, threads)
        with ThreadPoolExecutor(max_workers=threads) as executor:
            parts = list(executor.map(lambda chunk: self.pairs_for(self.points[chunk], chunk), chunks))
        return tuple(np.concatenate([part[k] for part in parts]) for k in range(3))


def build_neighbor_index(cloud, radius: float) -> NeighborIndex:
    points = cloud.points if isinstance(cloud, PointCloud) else cloud
    return NeighborIndex(points, radius)


@dataclass(frozen=True, eq=False)
class PimPencil:
    """Symmetric stiffness A and mass B with the data they were built from"""

    A: sparse.csr_matrix
    B: sparse.csr_matrix
    t: float
    kernel: KernelSpec
    cloud: PointCloud
    graph_mode: bool = False
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def kernel_id(self) -> str:
        return self.kernel.family_id

    @property
    def weights(self) -> np.ndarray:
        """Volume weights entering the assembly (1/n in graph mode)"""
        if self.graph_mode:
            return np.full(self.n, 1.0 / self.n)
        return self.cloud.weights

    @property
    def isolated(self) -> np.ndarray:
        """Rows whose stiffness has no off-diagonal entry"""
        off = self.A - sparse.diags(self.A.diagonal())
        off.eliminate_zeros()
        return np.flatnonzero(np.diff(off.tocsr().indptr) == 0)

    def with_jitter(self, eps: float) -> 'PimPencil':
        """Add eps * trace(B) / n to the mass diagonal"""
        if eps < 0:
            raise ValidationError(f"jitter must be nonnegative, got {eps}")
        if eps == 0:
            return self
        shift = eps * self.B.diagonal().sum() / self.n
        logger.info(f"Regularizing mass diagonal by {shift:.3e} (jitter {eps:g})")
        B = (self.B + shift * sparse.identity(self.n, format='csr')).tocsr()
        return replace(self, B=B, jitter=self.jitter + eps)


@monitor_performance('assemble')
def assemble_pencil(cloud: PointCloud, kernel, t: float, graph_mode: bool = False,
                    threads: Optional[int] = None, jitter: float = 0.0) -> PimPencil:
    """Assemble the row-symmetrized point integral pencil

    A_ij = -(C_t/t) R(|p_i - p_j|^2 / 4t) V_i V_j for i != j with
    A_ii = -sum_{j != i} A_ij, and B_ij = C_t Rbar(|p_i - p_j|^2 / 4t) V_i V_j
    including the diagonal. Pairs farther apart than 2 sqrt(t) contribute nothing.
    """
    if isinstance(kernel, str):
        kernel = get_kernel(kernel)
    if not t > 0:
        raise ValidationError(f"bandwidth t must be positive, got {t}")

    n = cloud.n
    c_t = normalization_constant(t, cloud.intrinsic_dim)
    V = np.full(n, 1.0 / n) if graph_mode else cloud.weights

    index = build_neighbor_index(cloud, 2.0 * math.sqrt(t))
    rows, cols, sq = index.pairs(threads)
    r = sq / (4.0 * t)
    vv = V[rows] * V[cols]

    off = rows != cols
    a_off = -(c_t / t) * kernel.R(r[off]) * vv[off]
    a_diag = np.bincount(rows[off], weights=-a_off, minlength=n)
    b_vals = c_t * kernel.Rbar(r) * vv

    A = sparse.coo_matrix(
        (np.concatenate([a_off, a_diag]),
         (np.concatenate([rows[off], np.arange(n)]), np.concatenate([cols[off], np.arange(n)]))),
        shape=(n, n),
    ).tocsr()
    A.sort_indices()
    B = sparse.coo_matrix((b_vals, (rows, cols)), shape=(n, n)).tocsr()
    B.sort_indices()

    pencil = PimPencil(A, B, float(t), kernel, cloud, bool(graph_mode))
    logger.info(
        f"Assembled pencil n={n} t={t:.4g} kernel={kernel.family_id} "
        f"graph_mode={graph_mode} nnz(A)={A.nnz}"
    )

    isolated = np.flatnonzero(np.bincount(rows[off], minlength=n) == 0)
    if isolated.size:
        message = f"disconnected at this bandwidth: {isolated.size} of {n} points have no neighbor within 2*sqrt(t)"
        logger.warning(message)
        warnings.warn(message, BandwidthWarning, stacklevel=2)

    if jitter:
        pencil = pencil.with_jitter(jitter)
    return pencil


def apply_discrete_laplacian(pencil: PimPencil, u) -> np.ndarray:
    """Unsymmetrized action (C_t/t) sum_j R_t(p_i, p_j)(u_i - u_j) V_j, i.e. diag(1/V) A u"""
    u = np.asarray(u, dtype=float)
    if u.shape != (pencil.n,):
        raise DimensionMismatchError(f"vector has shape {u.shape}, pencil has n={pencil.n}")
    return (pencil.A @ u) / pencil.weights


@dataclass(frozen=True)
class ShiftDiagnostics:
    """Range of w_{t,h}(p_i) = sum_j R_t(p_i, p_j) V_j over the samples"""
    w: np.ndarray
    w_min: float
    w_max: float
    w_median: float
    flagged: np.ndarray

    @property
    def ratio(self) -> float:
        return self.w_min / self.w_max

    def to_dict(self):
        return {
            'w_min': self.w_min,
            'w_max': self.w_max,
            'w_median': self.w_median,
            'ratio': self.ratio,
            'flagged': self.flagged.tolist(),
        }


def sample_w(pencil: PimPencil) -> np.ndarray:
    """w at the samples, recovered from the stiffness diagonal plus the self term"""
    V = pencil.weights
    c_t = normalization_constant(pencil.t, pencil.cloud.intrinsic_dim)
    return pencil.t * pencil.A.diagonal() / V + c_t * pencil.kernel.R(0.0) * V


def spectral_shift_check(pencil: PimPencil, threshold: float = 0.1) -> ShiftDiagnostics:
    """Flag samples where w drops below ``threshold`` times its median"""
    w = sample_w(pencil)
    median = float(np.median(w))
    flagged = np.union1d(np.flatnonzero(w < threshold * median), pencil.isolated)
    diagnostics = ShiftDiagnostics(w, float(w.min()), float(w.max()), median, flagged)
    if flagged.size:
        logger.warning(f"{flagged.size} samples with w below {threshold:g} x median; bandwidth too small or sampling too sparse")
    return diagnostics
