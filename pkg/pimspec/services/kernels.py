"""
Kernel functions R with their primitives R-bar and R-bar-bar

R is compactly supported on [0, 1], bounded below by delta0 on [0, 1/2) and
twice continuously differentiable. Rbar(r) = int_r^inf R(s) ds and
Rbarbar(r) = int_r^inf Rbar(s) ds. Kernels are evaluated at scale t through
C_t * K(|x - y|^2 / 4t) with C_t = (4 pi t)^(-k/2).
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicHermiteSpline

from pimspec.config import Config
from pimspec.utils.error_handlers import ValidationError

logger = logging.getLogger(__name__)

LEVELS = ('R', 'Rbar', 'Rbarbar')

# CLI spellings of the primitive levels
LEVEL_ALIASES = {
    'R': 'R', 'r': 'R',
    'Rbar': 'Rbar', 'rbar': 'Rbar', 'R̄': 'Rbar',
    'Rbarbar': 'Rbarbar', 'rbarbar': 'Rbarbar', 'R̄̄': 'Rbarbar',
}


@dataclass(frozen=True)
class KernelSpec:
    """An admissible kernel and its exact first and second primitives"""

    family_id: str
    delta0: float
    eval_R: Callable = field(repr=False)
    eval_Rbar: Callable = field(repr=False)
    eval_Rbarbar: Callable = field(repr=False)
    support: float = 1.0
    smoothness: int = 2

    def evaluate(self, r, which='R'):
        """Evaluate one primitive level at r (scalar or array), zero beyond the support"""
        level = LEVEL_ALIASES.get(which)
        if level is None:
            raise ValidationError(f"unknown kernel level {which!r}; expected one of {LEVELS}")
        fn = {'R': self.eval_R, 'Rbar': self.eval_Rbar, 'Rbarbar': self.eval_Rbarbar}[level]

        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = (r >= 0.0) & (r <= self.support)
        if np.any(inside):
            out[inside] = fn(r[inside])
        if out.ndim == 0:
            return float(out)
        return out

    def R(self, r):
        return self.evaluate(r, 'R')

    def Rbar(self, r):
        return self.evaluate(r, 'Rbar')

    def Rbarbar(self, r):
        return self.evaluate(r, 'Rbarbar')


def _wendland_R(r):
    return (1.0 - r) ** 4 * (4.0 * r + 1.0)


def _wendland_Rbar(r):
    return (1.0 - r) ** 5 * (1.0 + 2.0 * r) / 3.0


def _wendland_Rbarbar(r):
    return (1.0 - r) ** 6 / 6.0 - 2.0 * (1.0 - r) ** 7 / 21.0


def wendland_kernel() -> KernelSpec:
    """Degree-5 compactly supported C2 polynomial R(r) = (1-r)^4 (4r+1) on [0, 1]"""
    return KernelSpec(
        family_id='wendland',
        delta0=float(_wendland_R(0.5)),
        eval_R=_wendland_R,
        eval_Rbar=_wendland_Rbar,
        eval_Rbarbar=_wendland_Rbarbar,
    )


def _radial_wendland_polynomials():
    """R, Rbar and Rbarbar of the radial Wendland kernel as polynomials in u = 1 - sqrt(r)

    Rbar(r) = phi(sqrt(r)) with phi(s) = (1-s)^9 (231 s^3 + 159 s^2 + 45 s + 5),
    a C6 radial function that is positive definite in up to five dimensions,
    so the mass matrix C_t Rbar(|p_i - p_j|^2 / 4t) V_i V_j has a Cholesky
    factor for distinct points. R(r) = -phi'(s) / 2s and
    Rbarbar(r) = int_s^1 2 sigma phi(sigma) d sigma. All three are scaled to R(0) = 1.
    Powers of u keep the values accurate near the support edge.
    """
    u = Polynomial([0.0, 1.0])
    s = 1.0 - u
    phi = u ** 9 * Polynomial([5.0, 45.0, 159.0, 231.0])(s)
    R, _ = divmod(phi.deriv(), 2.0 * s)
    Rbarbar = (2.0 * s * phi).integ()
    scale = float(R(1.0))
    return R / scale, phi / scale, Rbarbar / scale


def radial_wendland_kernel() -> KernelSpec:
    """Kernel whose Rbar is Wendland's C6 function of |x| (positive definite mass matrix)

    R is a degree-10 polynomial in sqrt(r) whose s and s^3 coefficients
    vanish, which keeps it C2 in r at the origin.
    """
    R, Rbar, Rbarbar = _radial_wendland_polynomials()

    def lift(poly):
        return lambda r: poly(1.0 - np.sqrt(np.asarray(r, dtype=float)))

    return KernelSpec(
        family_id='wendland_radial',
        delta0=float(lift(R)(0.5)),
        eval_R=lift(R),
        eval_Rbar=lift(Rbar),
        eval_Rbarbar=lift(Rbarbar),
    )


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s ** 2)


def gaussian_kernel(blend_width: float = None, panels: int = None) -> KernelSpec:
    """Truncated Gaussian e^(-r) blended to zero on [1 - eps, 1] by a C2 smoothstep

    The primitives have no closed form; Rbar is tabulated at construction with
    Gauss-Legendre panels and stored as a cubic Hermite spline (values Rbar,
    slopes -R), whose exact antiderivative gives Rbarbar.
    """
    eps = Config.GAUSSIAN_BLEND_WIDTH if blend_width is None else blend_width
    panels = panels or Config.KERNEL_TABLE_PANELS
    if not 0 < eps <= 0.5:
        raise ValidationError("gaussian blend width must lie in (0, 1/2]")

    def R(r):
        r = np.asarray(r, dtype=float)
        return np.exp(-r) * (1.0 - _smoothstep((r - (1.0 - eps)) / eps))

    nodes = np.linspace(0.0, 1.0, panels + 1)
    gl_x, gl_w = np.polynomial.legendre.leggauss(8)
    left, right = nodes[:-1], nodes[1:]
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    panel_integrals = (R(mid[:, None] + half[:, None] * gl_x[None, :]) * gl_w[None, :]).sum(axis=1) * half

    # Rbar at node i integrates the panels to its right
    rbar_nodes = np.concatenate([np.cumsum(panel_integrals[::-1])[::-1], [0.0]])
    rbar_spline = CubicHermiteSpline(nodes, rbar_nodes, -R(nodes))
    antiderivative = rbar_spline.antiderivative()
    total = float(antiderivative(1.0))

    def Rbar(r):
        return rbar_spline(np.asarray(r, dtype=float))

    def Rbarbar(r):
        return total - antiderivative(np.asarray(r, dtype=float))

    logger.debug(f"Tabulated gaussian kernel primitives on {panels} panels, Rbar(0)={rbar_nodes[0]:.15g}")

    return KernelSpec(
        family_id='gaussian',
        delta0=float(R(0.5)),
        eval_R=R,
        eval_Rbar=Rbar,
        eval_Rbarbar=Rbarbar,
    )


KERNEL_FAMILIES = {
    'wendland': wendland_kernel,
    'wendland_radial': radial_wendland_kernel,
    'gaussian': gaussian_kernel,
}


def get_kernel(name: str) -> KernelSpec:
    """Look up a kernel family by name"""
    try:
        factory = KERNEL_FAMILIES[name]
    except KeyError:
        raise ValidationError(f"unknown kernel {name!r}; expected one of {sorted(KERNEL_FAMILIES)}")
    return factory()


def normalization_constant(t: float, k: int) -> float:
    """C_t = (4 pi t)^(-k/2)"""
    if not t > 0:
        raise ValidationError(f"bandwidth t must be positive, got {t}")
    if int(k) != k or k < 1:
        raise ValidationError(f"intrinsic dimension must be a positive integer, got {k}")
    return (4.0 * math.pi * t) ** (-0.5 * k)


def kernel_at_scale(spec: KernelSpec, t: float, sq_dist, which='R', *, intrinsic_dim: int):
    """C_t * K(sq_dist / 4t) for the selected primitive level K"""
    c_t = normalization_constant(t, intrinsic_dim)
    return c_t * spec.evaluate(np.asarray(sq_dist, dtype=float) / (4.0 * t), which)
