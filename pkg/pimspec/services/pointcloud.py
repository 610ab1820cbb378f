"""
Weighted point clouds (P, V) on manifolds with analytic Neumann spectra
"""

import math
import logging
from dataclasses import dataclass, field
from functools import cached_property, partial
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import i0, lpmv

from pimspec.utils.error_handlers import UnknownManifoldError, ValidationError

logger = logging.getLogger(__name__)

MANIFOLDS = ('interval', 'circle', 'rectangle', 'sphere', 'hemisphere', 'torus', 'flat_torus')

# Minimum sample counts per sampler
MIN_SAMPLES = {
    'interval': 2,
    'circle': 3,
    'rectangle': 2,
    'sphere': 12,
    'hemisphere': 8,
    'torus': 16,
    'flat_torus': 16,
}


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Sample points with volume weights; the (P, V) pair of the discretization"""

    points: np.ndarray
    weights: np.ndarray
    intrinsic_dim: int
    boundary: np.ndarray = None
    manifold: Optional[str] = None
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        weights = np.array(self.weights, dtype=float).reshape(-1)
        n, d = points.shape

        if n < 2:
            raise ValidationError(f"a point cloud needs at least 2 points, got {n}")
        if weights.shape != (n,):
            raise ValidationError(f"expected {n} weights, got {weights.shape[0]}")
        if not np.all(weights > 0):
            raise ValidationError("all volume weights must be strictly positive")
        if not 1 <= self.intrinsic_dim <= d:
            raise ValidationError(f"need ambient dimension {d} >= intrinsic dimension {self.intrinsic_dim} >= 1")
        if not np.all(np.isfinite(points)):
            raise ValidationError("point coordinates must be finite")

        boundary = np.zeros(n, dtype=bool) if self.boundary is None else np.array(self.boundary, dtype=bool)
        if boundary.shape != (n,):
            raise ValidationError(f"expected {n} boundary flags, got {boundary.shape[0]}")

        for arr in (points, weights, boundary):
            arr.setflags(write=False)

        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'boundary', boundary)
        object.__setattr__(self, 'intrinsic_dim', int(self.intrinsic_dim))
        object.__setattr__(self, 'params', dict(self.params))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    @cached_property
    def h_estimate(self) -> float:
        return estimate_fill_distance(self)


def _check_n(tag: str, n: int):
    if int(n) != n or n < MIN_SAMPLES[tag]:
        raise ValidationError(f"{tag} sampler needs n >= {MIN_SAMPLES[tag]}, got {n}")


def _check_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ValidationError(f"{name} must be positive, got {value}")


def sample_interval(n: int, L: float = 1.0) -> PointCloud:
    """Midpoint grid on [0, L]; both end cells flagged as boundary"""
    _check_n('interval', n)
    _check_positive(L=L)
    x = (np.arange(n) + 0.5) * (L / n)
    boundary = np.zeros(n, dtype=bool)
    boundary[[0, -1]] = True
    return PointCloud(x[:, None], np.full(n, L / n), 1, boundary, 'interval', {'L': float(L)})


def sample_circle(n: int, radius: float = 1.0) -> PointCloud:
    """Equispaced points on a circle with arc-length weights"""
    _check_n('circle', n)
    _check_positive(radius=radius)
    theta = 2.0 * math.pi * (np.arange(n) + 0.5) / n
    points = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return PointCloud(points, np.full(n, 2.0 * math.pi * radius / n), 1, None, 'circle', {'radius': float(radius)})


def sample_rectangle(n: int, Lx: float = 1.0, Ly: float = 1.0) -> PointCloud:
    """Tensor midpoint grid with n points per side; the outer ring is flagged as boundary"""
    _check_n('rectangle', n)
    _check_positive(Lx=Lx, Ly=Ly)
    x = (np.arange(n) + 0.5) * (Lx / n)
    y = (np.arange(n) + 0.5) * (Ly / n)
    xx, yy = np.meshgrid(x, y, indexing='ij')
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing='ij')
    boundary = (ii == 0) | (jj == 0) | (ii == n - 1) | (jj == n - 1)
    points = np.column_stack([xx.ravel(), yy.ravel()])
    weights = np.full(n * n, Lx * Ly / (n * n))
    return PointCloud(points, weights, 2, boundary.ravel(), 'rectangle', {'Lx': float(Lx), 'Ly': float(Ly)})


def _torus_grid(n: int, R_major: float, r_minor: float):
    n_u = max(4, int(round(math.sqrt(n * R_major / r_minor))))
    n_v = max(4, int(round(n / n_u)))
    u = 2.0 * math.pi * (np.arange(n_u) + 0.5) / n_u
    v = 2.0 * math.pi * (np.arange(n_v) + 0.5) / n_v
    uu, vv = np.meshgrid(u, v, indexing='ij')
    return uu.ravel(), vv.ravel(), n_u, n_v


def sample_torus(n: int, R_major: float = 2.0, r_minor: float = 1.0) -> PointCloud:
    """Parameter grid on the torus of revolution in R^3 with metric-correct area weights

    The grid holds roughly n points, split between the two angles in
    proportion to the radii. Area element r (R + r cos v) du dv.
    """
    _check_n('torus', n)
    _check_positive(R_major=R_major, r_minor=r_minor)
    if r_minor >= R_major:
        raise ValidationError("torus needs r_minor < R_major")
    u, v, n_u, n_v = _torus_grid(n, R_major, r_minor)
    ring = R_major + r_minor * np.cos(v)
    points = np.column_stack([ring * np.cos(u), ring * np.sin(u), r_minor * np.sin(v)])
    weights = (2.0 * math.pi / n_u) * (2.0 * math.pi / n_v) * r_minor * ring
    return PointCloud(points, weights, 2, None, 'torus', {'R_major': float(R_major), 'r_minor': float(r_minor)})


def sample_flat_torus(n: int, R_major: float = 2.0, r_minor: float = 1.0) -> PointCloud:
    """Product of two circles embedded isometrically in R^4"""
    _check_n('flat_torus', n)
    _check_positive(R_major=R_major, r_minor=r_minor)
    u, v, n_u, n_v = _torus_grid(n, R_major, r_minor)
    points = np.column_stack([
        R_major * np.cos(u), R_major * np.sin(u),
        r_minor * np.cos(v), r_minor * np.sin(v),
    ])
    weights = np.full(u.shape[0], (2.0 * math.pi * R_major / n_u) * (2.0 * math.pi * r_minor / n_v))
    return PointCloud(points, weights, 2, None, 'flat_torus', {'R_major': float(R_major), 'r_minor': float(r_minor)})


def sample_sphere(n: int) -> PointCloud:
    """Fibonacci lattice on the unit sphere with equal weights 4 pi / n

    Heights are the midpoints of n equal slabs in z, so the rule integrates
    functions of z with the midpoint rule.
    """
    _check_n('sphere', n)
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    points = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    return PointCloud(points, np.full(n, 4.0 * math.pi / n), 2, None, 'sphere', {})


def sample_hemisphere(n: int) -> PointCloud:
    """Latitude bands on the upper unit hemisphere with exact band areas

    Points in the band touching the equator are flagged as boundary.
    """
    _check_n('hemisphere', n)
    bands = max(2, int(round((math.pi / 2.0) / math.sqrt(2.0 * math.pi / n))))
    dtheta = (math.pi / 2.0) / bands

    points, weights, boundary = [], [], []
    for k in range(bands):
        lo, hi = k * dtheta, (k + 1) * dtheta
        area = 2.0 * math.pi * (math.cos(lo) - math.cos(hi))
        count = max(1, int(round(n * area / (2.0 * math.pi))))
        theta = 0.5 * (lo + hi)
        phi = 2.0 * math.pi * (np.arange(count) + 0.5 * (k % 2)) / count
        points.append(np.column_stack([
            math.sin(theta) * np.cos(phi),
            math.sin(theta) * np.sin(phi),
            np.full(count, math.cos(theta)),
        ]))
        weights.append(np.full(count, area / count))
        boundary.append(np.full(count, k == bands - 1))

    return PointCloud(np.vstack(points), np.concatenate(weights), 2, np.concatenate(boundary), 'hemisphere', {})


SAMPLERS = {
    'interval': (sample_interval, ('L',)),
    'circle': (sample_circle, ('radius',)),
    'rectangle': (sample_rectangle, ('Lx', 'Ly')),
    'sphere': (sample_sphere, ()),
    'hemisphere': (sample_hemisphere, ()),
    'torus': (sample_torus, ('R_major', 'r_minor')),
    'flat_torus': (sample_flat_torus, ('R_major', 'r_minor')),
}


def sample_manifold(tag: str, n: int, **params) -> PointCloud:
    """Dispatch to the built-in sampler for ``tag``"""
    if tag not in SAMPLERS:
        raise UnknownManifoldError(f"unknown manifold {tag!r}; expected one of {list(SAMPLERS)}")
    sampler, allowed = SAMPLERS[tag]
    unknown = sorted(set(params) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown parameters for {tag}: {unknown}; allowed: {list(allowed)}")
    return sampler(n, **{key: float(value) for key, value in params.items()})


def _warp(s, warp):
    return s + warp * np.sin(2.0 * math.pi * s) / (2.0 * math.pi)


def perturb_cloud(cloud: PointCloud, jitter: float, seed: int = 0, warp: float = 0.0) -> PointCloud:
    """Jitter an interval or circle cloud in parameter space and recompute Voronoi weights

    Each parameter s in [0, 1) is moved to warp(s) + jitter * U(-1/2, 1/2) / n.
    The warp s + warp sin(2 pi s) / 2 pi is monotone for |warp| < 1 and makes
    the sampling density nonuniform.
    """
    if cloud.manifold not in ('interval', 'circle'):
        raise ValidationError("perturbation is available for interval and circle clouds only")
    if jitter < 0 or abs(warp) >= 1:
        raise ValidationError("need jitter >= 0 and |warp| < 1")

    rng = np.random.default_rng(seed)
    n = cloud.n

    if cloud.manifold == 'interval':
        L = cloud.params['L']
        s = cloud.points[:, 0] / L
    else:
        radius = cloud.params['radius']
        s = np.mod(np.arctan2(cloud.points[:, 1], cloud.points[:, 0]) / (2.0 * math.pi), 1.0)

    s = _warp(s, warp) + jitter * (rng.random(n) - 0.5) / n
    params = dict(cloud.params, jitter=float(jitter), warp=float(warp), seed=int(seed))

    if cloud.manifold == 'interval':
        s = np.sort(np.clip(s, 0.0, 1.0))
        mids = 0.5 * (s[1:] + s[:-1])
        edges = np.concatenate([[0.0], mids, [1.0]])
        weights = L * np.diff(edges)
        boundary = np.zeros(n, dtype=bool)
        boundary[[0, -1]] = True
        if not np.all(weights > 0):
            raise ValidationError("perturbation produced coincident points; lower the jitter")
        return PointCloud((L * s)[:, None], weights, 1, boundary, 'interval', params)

    s = np.sort(np.mod(s, 1.0))
    prev = np.concatenate([[s[-1] - 1.0], s[:-1]])
    nxt = np.concatenate([s[1:], [s[0] + 1.0]])
    weights = 2.0 * math.pi * radius * 0.5 * (nxt - prev)
    if not np.all(weights > 0):
        raise ValidationError("perturbation produced coincident points; lower the jitter")
    theta = 2.0 * math.pi * s
    points = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return PointCloud(points, weights, 1, None, 'circle', params)


def estimate_fill_distance(cloud) -> float:
    """Largest nearest-neighbor distance over the cloud (proxy for h)"""
    points = cloud.points if isinstance(cloud, PointCloud) else np.atleast_2d(np.asarray(cloud, dtype=float))
    if points.shape[0] < 2:
        raise ValidationError("fill distance needs at least 2 points")
    distances, _ = cKDTree(points).query(points, k=2)
    return float(distances[:, 1].max())


# ---------------------------------------------------------------------------
# Analytic Neumann spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cluster:
    """A block of equal analytic eigenvalues occupying positions [start, stop)"""
    value: float
    start: int
    stop: int

    @property
    def multiplicity(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Ascending Neumann eigenvalues mu >= 0 (with repeats) and their eigenfunctions"""

    manifold: str
    eigenvalues: np.ndarray
    volume: float
    modes: tuple = field(repr=False)

    def eigenfunction_eval(self, index: int, points) -> np.ndarray:
        """Evaluate analytic eigenfunction ``index`` at ambient points (m x d)"""
        if not 0 <= index < len(self.modes):
            raise ValidationError(f"mode index {index} outside 0..{len(self.modes) - 1}")
        return self.modes[index](np.atleast_2d(np.asarray(points, dtype=float)))

    def clusters(self) -> List[Cluster]:
        values = self.eigenvalues
        clusters, start = [], 0
        for i in range(1, len(values) + 1):
            if i == len(values) or not math.isclose(values[i], values[start], rel_tol=1e-9, abs_tol=1e-12):
                clusters.append(Cluster(float(values[start]), start, i))
                start = i
        return clusters

    @property
    def multiplicities(self):
        return [(c.value, c.multiplicity) for c in self.clusters()]


def _interval_mode(m, L, x):
    return np.cos(m * math.pi * x[:, 0] / L)


def _angle(x, i=0, j=1):
    return np.arctan2(x[:, j], x[:, i])


def _circle_mode(m, kind, x):
    if m == 0:
        return np.ones(x.shape[0])
    theta = _angle(x)
    return np.cos(m * theta) if kind == 'cos' else np.sin(m * theta)


def _rectangle_mode(m, p, Lx, Ly, x):
    return np.cos(m * math.pi * x[:, 0] / Lx) * np.cos(p * math.pi * x[:, 1] / Ly)


def _harmonic(l, m, kind, x):
    norm = np.linalg.norm(x[:, :3], axis=1)
    z = np.clip(x[:, 2] / norm, -1.0, 1.0)
    radial = lpmv(m, l, z)
    if m == 0:
        return radial
    phi = _angle(x)
    return radial * (np.cos(m * phi) if kind == 'cos' else np.sin(m * phi))


def _trig(kind, m, angle):
    if m == 0:
        return np.ones_like(angle)
    return np.cos(m * angle) if kind == 'cos' else np.sin(m * angle)


def _flat_torus_mode(m, ku, p, kv, x):
    return _trig(ku, m, _angle(x, 0, 1)) * _trig(kv, p, _angle(x, 2, 3))


def _kinds(m):
    return ('cos',) if m == 0 else ('cos', 'sin')


def _complete_clusters(entries, count):
    """Sort (mu, fn) entries and cut after ``count`` without splitting a cluster"""
    entries = sorted(entries, key=lambda item: item[0])
    cut = min(count, len(entries))
    while cut < len(entries) and math.isclose(entries[cut][0], entries[cut - 1][0], rel_tol=1e-9, abs_tol=1e-12):
        cut += 1
    entries = entries[:cut]
    return np.array([mu for mu, _ in entries]), tuple(fn for _, fn in entries)


def ground_truth(manifold_tag: str, params: Optional[dict] = None, count: int = 40) -> GroundTruth:
    """Analytic Neumann spectrum of a built-in manifold (at least ``count`` modes)"""
    params = dict(params or {})
    entries = []

    if manifold_tag == 'interval':
        L = float(params.get('L', 1.0))
        volume = L
        for m in range(count):
            entries.append(((m * math.pi / L) ** 2, partial(_interval_mode, m, L)))

    elif manifold_tag == 'circle':
        radius = float(params.get('radius', 1.0))
        volume = 2.0 * math.pi * radius
        for m in range(count):
            for kind in _kinds(m):
                entries.append(((m / radius) ** 2, partial(_circle_mode, m, kind)))

    elif manifold_tag == 'rectangle':
        Lx, Ly = float(params.get('Lx', 1.0)), float(params.get('Ly', 1.0))
        volume = Lx * Ly
        for m in range(count):
            for p in range(count):
                mu = (m * math.pi / Lx) ** 2 + (p * math.pi / Ly) ** 2
                entries.append((mu, partial(_rectangle_mode, m, p, Lx, Ly)))

    elif manifold_tag in ('sphere', 'hemisphere'):
        hemisphere = manifold_tag == 'hemisphere'
        volume = 2.0 * math.pi if hemisphere else 4.0 * math.pi
        for l in range(int(math.ceil(math.sqrt(2 * count))) + 2):
            for m in range(l + 1):
                # Neumann modes on the upper hemisphere are even in z: l + m even
                if hemisphere and (l + m) % 2:
                    continue
                for kind in _kinds(m):
                    entries.append((float(l * (l + 1)), partial(_harmonic, l, m, kind)))

    elif manifold_tag == 'flat_torus':
        R_major, r_minor = float(params.get('R_major', 2.0)), float(params.get('r_minor', 1.0))
        volume = 4.0 * math.pi ** 2 * R_major * r_minor
        for m in range(count):
            for p in range(count):
                mu = (m / R_major) ** 2 + (p / r_minor) ** 2
                for ku in _kinds(m):
                    for kv in _kinds(p):
                        entries.append((mu, partial(_flat_torus_mode, m, ku, p, kv)))

    elif manifold_tag == 'torus':
        raise UnknownManifoldError(
            "the torus of revolution has no closed-form Neumann spectrum; use flat_torus"
        )
    else:
        raise UnknownManifoldError(f"no analytic spectrum for manifold {manifold_tag!r}")

    eigenvalues, modes = _complete_clusters(entries, count)
    return GroundTruth(manifold_tag, eigenvalues, volume, modes)


# ---------------------------------------------------------------------------
# h-integral approximation check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureProbe:
    """A function with a known integral over the manifold"""
    name: str
    func: Callable = field(repr=False)
    exact: float


@dataclass(frozen=True)
class QuadratureResult:
    name: str
    exact: float
    approx: float
    error: float


def builtin_probes(cloud: PointCloud) -> List[QuadratureProbe]:
    """Constants, coordinate monomials and smooth functions with exact integrals"""
    p = cloud.params
    e = math.e

    if cloud.manifold == 'interval':
        L = p['L']
        return [
            QuadratureProbe('1', lambda x: np.ones(x.shape[0]), L),
            QuadratureProbe('x', lambda x: x[:, 0], L * L / 2.0),
            QuadratureProbe('cos(x)', lambda x: np.cos(x[:, 0]), math.sin(L)),
            QuadratureProbe('cos(2x)', lambda x: np.cos(2.0 * x[:, 0]), math.sin(2.0 * L) / 2.0),
            QuadratureProbe('exp(x/L)', lambda x: np.exp(x[:, 0] / L), L * (e - 1.0)),
        ]
    if cloud.manifold == 'circle':
        rho = p['radius']
        return [
            QuadratureProbe('1', lambda x: np.ones(x.shape[0]), 2.0 * math.pi * rho),
            QuadratureProbe('x^2', lambda x: x[:, 0] ** 2, math.pi * rho ** 3),
            QuadratureProbe('exp(x/r)', lambda x: np.exp(x[:, 0] / rho), 2.0 * math.pi * rho * float(i0(1.0))),
        ]
    if cloud.manifold == 'rectangle':
        Lx, Ly = p['Lx'], p['Ly']
        return [
            QuadratureProbe('1', lambda x: np.ones(x.shape[0]), Lx * Ly),
            QuadratureProbe('x', lambda x: x[:, 0], Lx * Lx * Ly / 2.0),
            QuadratureProbe('exp(x/Lx+y/Ly)', lambda x: np.exp(x[:, 0] / Lx + x[:, 1] / Ly),
                            Lx * Ly * (e - 1.0) ** 2),
        ]
    if cloud.manifold == 'sphere':
        return [
            QuadratureProbe('1', lambda x: np.ones(x.shape[0]), 4.0 * math.pi),
            QuadratureProbe('z^2', lambda x: x[:, 2] ** 2, 4.0 * math.pi / 3.0),
            QuadratureProbe('exp(z)', lambda x: np.exp(x[:, 2]), 2.0 * math.pi * (e - 1.0 / e)),
        ]
    if cloud.manifold == 'hemisphere':
        return [
            QuadratureProbe('1', lambda x: np.ones(x.shape[0]), 2.0 * math.pi),
            QuadratureProbe('z', lambda x: x[:, 2], math.pi),
            QuadratureProbe('z^2', lambda x: x[:, 2] ** 2, 2.0 * math.pi / 3.0),
            QuadratureProbe('exp(z)', lambda x: np.exp(x[:, 2]), 2.0 * math.pi * (e - 1.0)),
        ]
    if cloud.manifold == 'torus':
        R, r = p['R_major'], p['r_minor']
        return [
            QuadratureProbe('1', lambda x: np.ones(x.shape[0]), 4.0 * math.pi ** 2 * R * r),
            QuadratureProbe('z^2', lambda x: x[:, 2] ** 2, 2.0 * math.pi ** 2 * R * r ** 3),
            QuadratureProbe('exp(z/r)', lambda x: np.exp(x[:, 2] / r), 4.0 * math.pi ** 2 * R * r * float(i0(1.0))),
        ]
    if cloud.manifold == 'flat_torus':
        R, r = p['R_major'], p['r_minor']
        return [
            QuadratureProbe('1', lambda x: np.ones(x.shape[0]), 4.0 * math.pi ** 2 * R * r),
            QuadratureProbe('x1^2', lambda x: x[:, 0] ** 2, 2.0 * math.pi ** 2 * R ** 3 * r),
            QuadratureProbe('exp(x1/R)', lambda x: np.exp(x[:, 0] / R), 4.0 * math.pi ** 2 * R * r * float(i0(1.0))),
        ]
    raise UnknownManifoldError(f"no built-in quadrature probes for manifold {cloud.manifold!r}")


def quadrature_check(cloud: PointCloud, test_functions: Optional[Sequence] = None) -> List[QuadratureResult]:
    """|exact - sum f(p_i) V_i| for each probe function"""
    probes = builtin_probes(cloud) if test_functions is None else [
        probe if isinstance(probe, QuadratureProbe) else QuadratureProbe(*probe) for probe in test_functions
    ]

    results = []
    for probe in probes:
        approx = float(np.dot(np.asarray(probe.func(cloud.points), dtype=float), cloud.weights))
        results.append(QuadratureResult(probe.name, float(probe.exact), approx, abs(float(probe.exact) - approx)))
        logger.debug(f"quadrature {probe.name}: exact={probe.exact:.6g} error={results[-1].error:.3e}")
    return results
