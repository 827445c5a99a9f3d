"""Green's function of the time-fractional heat equation.

K(t,x,y) is the density of x + B_t at y. It is evaluated by three
independent routes (Fourier inversion of E_beta(-lambda^2 t^alpha / 2),
M-Wright subordination of the Gaussian kernel, and the H-function
series) and used to solve the Cauchy problem by convolution.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, special

from errors import GridError, ParameterError, QuadratureError
from fraccalc import SampledFunction
from ggbm import FracParams, gaussian_density, marginal_density
from specfun import fox_h, gamma, kernel_spec, m_wright_array, m_wright_support, mittag_leffler

logger = logging.getLogger(__name__)

SERIES_LIMIT = 10.0
SERIES_TERMS = 128
TABLE_NODES = 256
# lambda^2 t^alpha / 2 where the a = 0 inversion switches to the asymptotic tail
TAIL_START = 50.0
SURFACE_PANELS = 48
SURFACE_ORDER = 16
SURFACE_CUTOFF = 1e-14
STENCIL_STEP = 0.05


class KernelMethod(str, Enum):
    QUADRATURE = "quadrature"
    SUBORDINATION = "subordination"
    FOXH = "foxh"
    SELF_SIMILAR = "self-similar"


class KernelQuery(BaseModel):
    """Evaluation point (t, x, y) of K."""

    model_config = ConfigDict(frozen=True)

    t: float = Field(gt=0)
    x: float
    y: float = 0.0
    params: FracParams

    @property
    def offset(self) -> float:
        return abs(self.x - self.y)

    @property
    def variance(self) -> float:
        return self.t ** self.params.alpha


def gaussian_kernel(q: KernelQuery) -> float:
    """Exact fBm kernel (2 pi t^alpha)^(-1/2) exp(-(x-y)^2 / (2 t^alpha))."""
    return gaussian_density(q.offset, q.variance)


def diagonal_value(v: float, beta: float) -> float:
    """K at x = y: 1 / (sqrt(2v) Gamma(1 - beta/2))."""
    return 1.0 / (math.sqrt(2.0 * v) * gamma(1.0 - beta / 2.0))


# ---------------------------------------------------------------------------
# Fourier inversion
# ---------------------------------------------------------------------------

def _inversion_tail(beta: float, cutoff: float) -> float:
    """int_cutoff^inf E_beta(-lambda^2 v / 2) dlambda from the algebraic asymptotic series."""
    total = 0.0
    for k in range(1, 9):
        total += (-1) ** (k + 1) * special.rgamma(1.0 - beta * k) * TAIL_START ** (-k) / (2 * k - 1)
    return cutoff * total


def kernel_quadrature(q: KernelQuery) -> float:
    """(1/pi) int_0^inf cos(lambda a) E_beta(-lambda^2 t^alpha / 2) dlambda.

    Off the diagonal the cosine transform goes to QUADPACK's Fourier
    integrator; on the diagonal the integral is cut where the argument
    reaches TAIL_START and the rest is added in closed form.
    """
    beta = q.params.beta
    v = q.variance
    a = q.offset

    def integrand(lam: float) -> float:
        return mittag_leffler(beta, -0.5 * lam * lam * v).value

    if a == 0.0:
        cutoff = math.sqrt(2.0 * TAIL_START / v)
        head, err = integrate.quad(integrand, 0.0, cutoff, epsabs=1e-13, epsrel=1e-11, limit=400)
        value = head + _inversion_tail(beta, cutoff)
    else:
        value, err = integrate.quad(integrand, 0.0, np.inf, weight="cos", wvar=a, epsabs=1e-12, limlst=200)
    if err > 1e-8:
        raise QuadratureError(f"inversion at t={q.t}, a={a} did not converge (error {err:.2e})", module=__name__)
    return value / math.pi


def kernel_subordination(q: KernelQuery) -> float:
    """int_0^inf M_beta(r) N(x - y; 0, r t^alpha) dr."""
    return marginal_density(q.offset, q.t, q.params)


# ---------------------------------------------------------------------------
# Series and H-function
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _series_coefficients(beta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Log-magnitudes and signs of the coefficients of both power series in w = a^2/(2v)."""
    k = np.arange(SERIES_TERMS, dtype=float)
    alternating = np.where(k % 2 == 1, -1.0, 1.0)

    def part(upper: np.ndarray, lower: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sign = alternating * special.gammasgn(upper) * special.gammasgn(lower)
        pole = (lower <= 0) & (lower == np.round(lower))
        log_mag = special.gammaln(upper) - special.gammaln(k + 1.0) - special.gammaln(lower)
        return np.where(pole, -np.inf, log_mag), np.where(pole, 0.0, sign)

    log1, sign1 = part(0.5 - k, 1.0 - beta / 2.0 - beta * k)
    log2, sign2 = part(-0.5 - k, 1.0 - beta - beta * k)
    return log1, sign1, log2, sign2


def _series_sums(w: np.ndarray, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    log1, sign1, log2, sign2 = _series_coefficients(beta)
    k = np.arange(SERIES_TERMS, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = np.log(w)[:, None]
        powers = np.where(k[None, :] == 0, 0.0, k[None, :] * log_w)
    first = np.sum(sign1 * np.exp(log1 + powers), axis=1)
    second = np.sum(sign2 * np.exp(log2 + powers), axis=1)
    return first, second


def kernel_series(a: float, v: float, beta: float) -> float:
    """Two-sum expansion of K in powers of w = a^2 / (2v).

    (2 pi v)^(-1/2) sum_k (-w)^k / k! Gamma(1/2-k) / Gamma(1-beta/2-beta k)
    + |a| / (2v sqrt(pi)) sum_k (-w)^k / k! Gamma(-1/2-k) / Gamma(1-beta-beta k);
    terms whose lower Gamma sits on a pole vanish.

    Raises:
        ParameterError: if w exceeds SERIES_LIMIT
    """
    if v <= 0:
        raise ParameterError(f"variance must be positive, got {v}", module=__name__)
    if not 0 < beta <= 1:
        raise ParameterError(f"beta must lie in (0,1], got {beta}", module=__name__)
    a = abs(a)
    w = a * a / (2.0 * v)
    if w > SERIES_LIMIT:
        raise ParameterError(f"series argument {w:.3f} exceeds {SERIES_LIMIT}", module=__name__)
    if a == 0.0:
        return diagonal_value(v, beta)
    log1, sign1, log2, sign2 = _series_coefficients(beta)
    first: List[float] = []
    second: List[float] = []
    log_w = math.log(w)
    for k in range(SERIES_TERMS):
        first.append(sign1[k] * math.exp(log1[k] + k * log_w))
        second.append(sign2[k] * math.exp(log2[k] + k * log_w))
        if k > w and abs(first[-1]) + abs(second[-1]) < 1e-18:
            break
    return math.fsum(first) / math.sqrt(2.0 * math.pi * v) + a / (2.0 * v * math.sqrt(math.pi)) * math.fsum(second)


def kernel_foxh(q: KernelQuery) -> float:
    """(2 pi t^alpha)^(-1/2) H^{2,0}_{1,2}(w | (1-beta/2, beta); (0,1), (1/2,1)).

    At beta = 1 the second residue series vanishes and the first sums to
    e^(-w), so the Gaussian comes out of the same series. Far from the
    diagonal the H-series is summed in extended precision.

    Raises:
        AccuracyLossError: if the offset is too large for MAX_DIGITS digits
    """
    v = q.variance
    if q.offset == 0.0:
        return diagonal_value(v, q.params.beta)
    w = q.offset ** 2 / (2.0 * v)
    return fox_h(kernel_spec(q.params.beta), w).value / math.sqrt(2.0 * math.pi * v)


# ---------------------------------------------------------------------------
# Self-similar evaluation
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _unit_table(beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule in u = sqrt(r) with M_beta(u^2) folded into the weights."""
    upper = math.sqrt(m_wright_support(beta))
    x, w = np.polynomial.legendre.leggauss(TABLE_NODES)
    u = 0.5 * upper * (x + 1.0)
    coef = 0.5 * upper * w * m_wright_array(beta, u * u) * 2.0 / math.sqrt(2.0 * math.pi)
    return u, coef


def unit_kernel_array(zetas: np.ndarray, beta: float) -> np.ndarray:
    """K(1, zeta, 0) on an array: series for zeta^2/2 <= SERIES_LIMIT, mixing rule beyond."""
    zetas = np.abs(np.asarray(zetas, dtype=float))
    if beta == 1.0:
        return np.exp(-0.5 * zetas ** 2) / math.sqrt(2.0 * math.pi)
    out = np.empty_like(zetas)
    w = 0.5 * zetas ** 2
    near = w <= SERIES_LIMIT
    if np.any(near):
        first, second = _series_sums(w[near], beta)
        out[near] = first / math.sqrt(2.0 * math.pi) + zetas[near] / (2.0 * math.sqrt(math.pi)) * second
        out[near & (zetas == 0.0)] = diagonal_value(1.0, beta)
    if np.any(~near):
        u, coef = _unit_table(beta)
        far = zetas[~near]
        out[~near] = np.exp(-0.5 * (far[:, None] / u[None, :]) ** 2) @ coef
    return np.maximum(out, 0.0)


def unit_kernel(zeta: float, beta: float) -> float:
    return float(unit_kernel_array(np.array([zeta]), beta)[0])


def kernel_self_similar(q: KernelQuery) -> float:
    """K(t, x, y) = t^(-alpha/2) K(1, (x-y) t^(-alpha/2), 0)."""
    s = math.sqrt(q.variance)
    return unit_kernel(q.offset / s, q.params.beta) / s


_EVALUATORS: Dict[KernelMethod, Callable[[KernelQuery], float]] = {
    KernelMethod.QUADRATURE: kernel_quadrature,
    KernelMethod.SUBORDINATION: kernel_subordination,
    KernelMethod.FOXH: kernel_foxh,
    KernelMethod.SELF_SIMILAR: kernel_self_similar,
}


def kernel_table(params: FracParams, t: float, xs: np.ndarray, y: float = 0.0,
                 method: KernelMethod = KernelMethod.SELF_SIMILAR) -> SampledFunction:
    """K(t, x, y) on a uniform x grid."""
    xs = _uniform(xs)
    evaluate = _EVALUATORS[KernelMethod(method)]
    values = [evaluate(KernelQuery(t=t, x=float(x), y=y, params=params)) for x in xs]
    logger.info(f"Tabulated kernel ({KernelMethod(method).value}) at t={t} on {xs.size} points")
    return SampledFunction(grid_start=float(xs[0]), grid_step=float(xs[1] - xs[0]), values=np.asarray(values))


def save_table(table: SampledFunction, path: Union[str, Path], metadata: dict) -> Path:
    """Write ``x,value`` rows and a JSON sidecar with the run metadata."""
    path = Path(path)
    table.to_csv(path)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_table(path: Union[str, Path]) -> SampledFunction:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    xs = np.array([float(r[0]) for r in rows])
    return SampledFunction(grid_start=xs[0], grid_step=xs[1] - xs[0], values=np.array([float(r[1]) for r in rows]))


# ---------------------------------------------------------------------------
# Cauchy problem
# ---------------------------------------------------------------------------

def _uniform(xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size < 2:
        raise ParameterError("need a 1-D grid with at least two points", module=__name__)
    steps = np.diff(xs)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise ParameterError("grid must be uniform and increasing", module=__name__)
    return xs


def check_initial_data(u0: SampledFunction) -> Dict[str, object]:
    """Numerical look at the integrability and Fourier-decay conditions on u0.

    Returns the L1 and L2 norms, the relative spectral weight of
    lambda^2 |u0~| in the top quarter of the resolved band and a list of
    warnings; nothing is raised.
    """
    values = np.abs(u0.values)
    l1 = float(integrate.trapezoid(values, dx=u0.grid_step))
    l2 = math.sqrt(float(integrate.trapezoid(values ** 2, dx=u0.grid_step)))
    spectrum = np.abs(np.fft.rfft(u0.values))
    freqs = np.fft.rfftfreq(u0.size, d=u0.grid_step)
    weighted = freqs ** 2 * spectrum
    total = float(np.sum(weighted))
    high = float(np.sum(weighted[freqs >= 0.75 * freqs[-1]]))
    ratio = high / total if total > 0 else 0.0
    warnings: List[str] = []
    peak = float(np.max(values))
    if peak > 0 and max(values[0], values[-1]) > 1e-8 * peak:
        warnings.append("u0 has not decayed at the grid ends; L1/L2 norms are truncated")
    if ratio > 1e-6:
        warnings.append(f"second Fourier moment not resolved (high-band share {ratio:.2e})")
    for message in warnings:
        logger.warning(f"initial data: {message}")
    return {"l1": l1, "l2": l2, "spectral_tail": ratio, "warnings": warnings}


@lru_cache(maxsize=64)
def _surface_rule(beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on [-Z, 0] and [0, Z] with K(1, zeta, 0) folded in."""
    peak = unit_kernel(0.0, beta)
    cutoff = 1.0
    while unit_kernel(cutoff, beta) > SURFACE_CUTOFF * peak:
        cutoff += 1.0
    x, w = np.polynomial.legendre.leggauss(SURFACE_ORDER)
    edges = np.linspace(0.0, cutoff, SURFACE_PANELS + 1)
    half = 0.5 * np.diff(edges)
    right = (edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel() * unit_kernel_array(right, beta)
    return np.concatenate((-right[::-1], right)), np.concatenate((weights[::-1], weights))


def cauchy_surface(u0: SampledFunction, params: FracParams) -> Callable[[float, np.ndarray], np.ndarray]:
    """Closure (t, xs) -> u(t, xs) = int K(1, zeta, 0) u0(x + t^(alpha/2) zeta) dzeta.

    u0 enters through its piecewise-linear interpolant, zero outside the grid.
    """
    nodes, weights = _surface_rule(params.beta)

    def surface(t: float, xs: Union[float, np.ndarray]) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        if t < 0:
            raise ParameterError(f"t must be nonnegative, got {t}", module=__name__)
        if t == 0.0:
            return np.asarray(u0.interp(xs))
        scale = t ** (params.alpha / 2.0)
        return u0.interp(xs[:, None] + scale * nodes[None, :]) @ weights

    return surface


def solve_cauchy(u0: SampledFunction, t: float, xs: np.ndarray, params: FracParams) -> SampledFunction:
    """u(t, x) = int u0(y) K(t, x, y) dy on the grid ``xs``.

    When ``xs`` lies on the lattice of u0 the kernel is tabulated once
    on the offset lattice and the convolution is a trapezoid sum;
    otherwise the surface quadrature is used.

    Raises:
        GridError: if the u0 step exceeds half the kernel width sqrt(t^alpha)
    """
    if t <= 0:
        raise ParameterError(f"t must be positive, got {t}", module=__name__)
    xs = _uniform(xs)
    width = math.sqrt(t ** params.alpha)
    if u0.grid_step > 0.5 * width:
        raise GridError(f"u0 step {u0.grid_step} too coarse for kernel width {width:.4f}", module=__name__)
    check_initial_data(u0)
    h = u0.grid_step
    shifts = (xs - u0.grid_start) / h
    lattice = np.round(shifts)
    if np.allclose(shifts, lattice, rtol=0.0, atol=1e-9):
        idx = lattice.astype(int)
        lowest = int(idx.min()) - (u0.size - 1)
        offsets = np.arange(lowest, int(idx.max()) + 1) * h
        table = unit_kernel_array(offsets / width, params.beta) / width
        weights = np.full(u0.size, h)
        weights[[0, -1]] *= 0.5
        gather = idx[:, None] - np.arange(u0.size)[None, :] - lowest
        values = table[gather] @ (weights * u0.values)
        logger.debug(f"solve_cauchy: tabulated {offsets.size} kernel offsets")
    else:
        values = cauchy_surface(u0, params)(t, xs)
    return SampledFunction(grid_start=float(xs[0]), grid_step=float(xs[1] - xs[0]), values=values)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _second_difference(u_fn: Callable[[float, np.ndarray], np.ndarray], t: float, x: float,
                       h: float = STENCIL_STEP) -> float:
    """Five-point stencil for d^2/dx^2."""
    v = u_fn(t, x + h * np.array([-2.0, -1.0, 0.0, 1.0, 2.0]))
    return float((-v[0] + 16.0 * v[1] - 30.0 * v[2] + 16.0 * v[3] - v[4]) / (12.0 * h * h))


def residual_fie(u_fn: Callable[[float, np.ndarray], np.ndarray], u0: SampledFunction, t: float, x: float,
                 params: FracParams) -> float:
    """|u(t,x) - u0(x) - (1/2) (I^beta d_x^2 u((.)^(beta/alpha), x))(t^(alpha/beta))|.

    The fractional integral is taken with QUADPACK's algebraic weight
    (T - s)^(beta - 1).
    """
    if t <= 0:
        raise ParameterError(f"t must be positive, got {t}", module=__name__)
    alpha, beta = params.alpha, params.beta
    horizon = t ** (alpha / beta)

    def integrand(s: float) -> float:
        return _second_difference(u_fn, s ** (beta / alpha), x)

    integral, err = integrate.quad(integrand, 0.0, horizon, weight="alg", wvar=(0.0, beta - 1.0),
                                   epsabs=1e-11, epsrel=1e-9, limit=200)
    if err > 1e-6:
        raise QuadratureError(f"fractional integral error {err:.2e}", module=__name__)
    lhs = float(u_fn(t, x)[0])
    rhs = float(u0.interp(x)) + 0.5 * integral / gamma(beta)
    return abs(lhs - rhs)


def residual_fbm_pde(u_fn: Callable[[float, np.ndarray], np.ndarray], t: float, x: float, alpha: float) -> float:
    """|d_t u - (alpha/2) t^(alpha-1) d_x^2 u| for the fBm (beta = 1) surface."""
    if t <= 0:
        raise ParameterError(f"t must be positive, got {t}", module=__name__)
    dt = 1e-3 * t
    forward = float(u_fn(t + dt, x)[0])
    backward = float(u_fn(t - dt, x)[0])
    time_derivative = (forward - backward) / (2.0 * dt)
    return abs(time_derivative - 0.5 * alpha * t ** (alpha - 1.0) * _second_difference(u_fn, t, x))


def kernel_mass(params: FracParams) -> float:
    """int K(t, x, y) dy, the same for every t by self-similarity; should be one."""
    split = math.sqrt(2.0 * SERIES_LIMIT)
    head, e1 = integrate.quad(lambda z: unit_kernel(z, params.beta), 0.0, split, epsabs=1e-13, limit=200)
    tail, e2 = integrate.quad(lambda z: unit_kernel(z, params.beta), split, np.inf, epsabs=1e-13, limit=200)
    if e1 + e2 > 1e-8:
        raise QuadratureError(f"mass quadrature error {e1 + e2:.2e}", module=__name__)
    return 2.0 * (head + tail)
