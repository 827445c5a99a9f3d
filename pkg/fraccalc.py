"""Fractional integrals and derivatives.

Closed forms on indicator functions, product-trapezoidal grid operators
(Riemann-Liouville integral, Marchaud derivative, Caputo derivative on an
interval), the normalized operator M^H and the alpha-inner product.
"""

from __future__ import annotations

import csv
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import integrate

from errors import GridError, ParameterError, SingularityError
from specfun import gamma

logger = logging.getLogger(__name__)

MIN_GRID_POINTS = 8
TAIL_RATIO = 1e-8


class Side(str, Enum):
    """Orientation of a fractional operator.

    ``LEFT`` is the ``+`` operator (memory of the past, integration from
    minus infinity), ``RIGHT`` the ``-`` operator (integration to plus
    infinity).
    """

    LEFT = "left"
    RIGHT = "right"


class SampledFunction(BaseModel):
    """Real or complex values on the uniform grid start + k*step."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid_start: float
    grid_step: float = Field(gt=0)
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _as_array(cls, v):
        arr = np.asarray(v)
        arr = arr.astype(complex) if np.iscomplexobj(arr) else arr.astype(float)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("a sampled function needs at least two points")
        if not np.all(np.isfinite(arr)):
            raise ValueError("sampled values must be finite")
        return arr

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], np.ndarray], start: float, stop: float,
                      n: int) -> "SampledFunction":
        grid = np.linspace(start, stop, n)
        return cls(grid_start=start, grid_step=(stop - start) / (n - 1), values=fn(grid))

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def grid(self) -> np.ndarray:
        return self.grid_start + self.grid_step * np.arange(self.size)

    @property
    def stop(self) -> float:
        return self.grid_start + self.grid_step * (self.size - 1)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def with_values(self, values: np.ndarray) -> "SampledFunction":
        return SampledFunction(grid_start=self.grid_start, grid_step=self.grid_step, values=values)

    def same_grid(self, other: "SampledFunction") -> bool:
        return (self.size == other.size and math.isclose(self.grid_start, other.grid_start, abs_tol=1e-12)
                and math.isclose(self.grid_step, other.grid_step, rel_tol=1e-12))

    def interp(self, x: Union[float, np.ndarray]) -> Union[float, complex, np.ndarray]:
        """Piecewise-linear interpolant, zero outside the grid."""
        return np.interp(x, self.grid, self.values, left=0.0, right=0.0)

    def derivative(self) -> np.ndarray:
        """Second-order central differences, one-sided at the ends."""
        return np.gradient(self.values, self.grid_step, edge_order=2)

    def integral(self) -> Union[float, complex]:
        return integrate.trapezoid(self.values, dx=self.grid_step)

    def integral_between(self, lo: float, hi: float) -> Union[float, complex]:
        """Exact integral of the linear interpolant over [lo, hi]."""
        grid = self.grid
        inner = grid[(grid > lo) & (grid < hi)]
        nodes = np.concatenate(([lo], inner, [hi]))
        return integrate.trapezoid(self.interp(nodes), nodes)

    def to_csv(self, path: Union[str, Path], column: str = "value") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", column])
            for x, v in zip(self.grid, self.values):
                writer.writerow([repr(float(x)), repr(complex(v) if self.is_complex else float(v))])


def _check_order(alpha: float, name: str = "alpha") -> None:
    if not 0 < alpha < 1:
        raise ParameterError(f"{name} must lie in (0,1), got {alpha}", module=__name__)


def _check_grid(f: SampledFunction) -> None:
    if f.size < MIN_GRID_POINTS:
        raise GridError(f"grid has {f.size} points, need at least {MIN_GRID_POINTS}", module=__name__)


def _warn_tails(f: SampledFunction, op: str) -> None:
    peak = float(np.max(np.abs(f.values)))
    tail = max(abs(f.values[0]), abs(f.values[-1]))
    if peak > 0 and tail > TAIL_RATIO * peak:
        logger.warning(f"{op}: sampled function has not decayed at the grid ends "
                       f"(tail {tail:.2e}, peak {peak:.2e}); truncation error expected")


# ---------------------------------------------------------------------------
# Constants and symbols
# ---------------------------------------------------------------------------

def k_h(H: float) -> float:
    """Normalization K_H = sqrt(2H sin(pi H) Gamma(2H)) of M^H."""
    if not 0 < H < 1:
        raise ParameterError(f"H must lie in (0,1), got {H}", module=__name__)
    return math.sqrt(2.0 * H * math.sin(math.pi * H) * gamma(2.0 * H))


def c_alpha(alpha: float) -> float:
    """Weight constant C(alpha) = Gamma(alpha+1) sin(pi alpha/2) = K_{alpha/2}^2."""
    return gamma(alpha + 1.0) * math.sin(math.pi * alpha / 2.0)


def fourier_symbol(alpha: float, side: Side, x: Union[float, np.ndarray]) -> Union[complex, np.ndarray]:
    """Multiplier (-/+ i x)^alpha of D^alpha_+/- for the transform with kernel e^{itx}."""
    sign = -1.0 if Side(side) is Side.LEFT else 1.0
    return (sign * 1j * np.asarray(x, dtype=float)) ** alpha


def fourier_transform(f: SampledFunction, freqs: Union[float, np.ndarray]) -> np.ndarray:
    """(1/sqrt(2 pi)) int f(t) e^{itx} dt by the trapezoid rule at the given frequencies."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    phases = np.exp(1j * np.outer(freqs, f.grid))
    weights = np.full(f.size, f.grid_step)
    weights[[0, -1]] *= 0.5
    return phases @ (weights * f.values) / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Indicator closed forms
# ---------------------------------------------------------------------------

def _plus_power(u: float, exponent: float) -> float:
    """u^exponent_+ : the power for u > 0, zero otherwise."""
    return u ** exponent if u > 0 else 0.0


def _indicator_form(exponent: float, a: float, b: float, side: Side, t: float) -> float:
    if Side(side) is Side.LEFT:
        return -_plus_power(t - b, exponent) + _plus_power(t - a, exponent)
    return _plus_power(b - t, exponent) - _plus_power(a - t, exponent)


def _check_interval(a: float, b: float) -> None:
    if not a < b:
        raise ParameterError(f"need a < b, got a={a}, b={b}", module=__name__)


def rl_integral_indicator(alpha: float, a: float, b: float, side: Side, t: float) -> float:
    """(I^alpha_+/- 1_(a,b))(t) = (-/+ (b-t)^alpha_-/+ +/- (a-t)^alpha_-/+) / Gamma(alpha+1)."""
    _check_order(alpha)
    _check_interval(a, b)
    return _indicator_form(alpha, a, b, side, t) / gamma(alpha + 1.0)


def rl_derivative_indicator(alpha: float, a: float, b: float, side: Side, t: float) -> float:
    """(D^alpha_+/- 1_(a,b))(t), singular at the interval ends."""
    _check_order(alpha)
    _check_interval(a, b)
    if t == a or t == b:
        raise SingularityError(f"D^{alpha} of an indicator is singular at t={t}", module=__name__)
    return _indicator_form(-alpha, a, b, side, t) / gamma(1.0 - alpha)


def marchaud_derivative_indicator(alpha: float, a: float, b: float, side: Side, t: float) -> float:
    """Marchaud derivative of 1_(a,b) from its defining integral, case by case."""
    _check_order(alpha)
    _check_interval(a, b)
    if t == a or t == b:
        raise SingularityError(f"Marchaud derivative of an indicator is singular at t={t}", module=__name__)
    if Side(side) is Side.LEFT:
        # mirror t -> -t turns the left operator on (a,b) into the right one on (-b,-a)
        return marchaud_derivative_indicator(alpha, -b, -a, Side.RIGHT, -t)
    scale = 1.0 / gamma(1.0 - alpha)
    if t > b:
        return 0.0
    if t > a:
        # 1(t) - 1(t+xi) is one for xi > b-t
        return scale * (b - t) ** (-alpha)
    # only -1(t+xi) on a-t < xi < b-t contributes
    return scale * ((b - t) ** (-alpha) - (a - t) ** (-alpha))


def m_h_indicator(H: float, a: float, b: float, side: Side, t: float, normalized: bool = False) -> float:
    """(M^H_+/- 1_[a,b))(t).

    The closed form (-/+ (b-t)^(H-1/2)_-/+ +/- (a-t)^(H-1/2)_-/+) / Gamma(H+1/2)
    is returned as is; ``normalized=True`` multiplies by K_H, the
    normalization under which products integrate to the grey Gram kernel.
    """
    if not 0 < H < 1:
        raise ParameterError(f"H must lie in (0,1), got {H}", module=__name__)
    _check_interval(a, b)
    if H == 0.5:
        value = 1.0 if a <= t < b else 0.0
    elif H > 0.5:
        value = rl_integral_indicator(H - 0.5, a, b, side, t)
    else:
        value = rl_derivative_indicator(0.5 - H, a, b, side, t)
    return k_h(H) * value if normalized else value


def rl_derivative_indicator_lp_norm(alpha: float, a: float, b: float, p: float) -> float:
    """int |D^alpha 1_(a,b)|^p dt; finite exactly when alpha*p < 1.

    The value does not depend on the side (mirror symmetry), so the right
    operator is integrated.
    """
    _check_order(alpha)
    _check_interval(a, b)
    if alpha * p >= 1:
        logger.warning(f"alpha*p = {alpha * p} >= 1: D^alpha of an indicator is not in L^{p}")
        return math.inf
    norm = gamma(1.0 - alpha) ** (-p)
    inside, e1 = integrate.quad(lambda t: norm, a, b, weight="alg", wvar=(0.0, -alpha * p))
    width = b - a

    def smooth_part(t: float) -> float:
        return norm * abs((a - t) ** alpha * (b - t) ** (-alpha) - 1.0) ** p

    near, e2 = integrate.quad(smooth_part, a - width, a, weight="alg", wvar=(0.0, -alpha * p))
    far, e3 = integrate.quad(lambda t: norm * abs((b - t) ** (-alpha) - (a - t) ** (-alpha)) ** p,
                             -np.inf, a - width)
    logger.debug(f"L^{p} norm pieces: {inside}, {near}, {far} (errors {e1:.1e}, {e2:.1e}, {e3:.1e})")
    return inside + near + far


# ---------------------------------------------------------------------------
# Grid operators
# ---------------------------------------------------------------------------

def _rl_integral_left(alpha: float, values: np.ndarray, h: float) -> np.ndarray:
    n = values.size
    m = np.arange(n, dtype=float)
    ap1 = alpha + 1.0
    c = np.ones(n)
    c[1:] = (m[1:] + 1.0) ** ap1 - 2.0 * m[1:] ** ap1 + (m[1:] - 1.0) ** ap1
    out = np.convolve(values, c)[:n]
    boundary = np.zeros(n)
    boundary[1:] = (m[1:] - 1.0) ** ap1 - (m[1:] - alpha - 1.0) * m[1:] ** alpha
    out = out + (boundary - c) * values[0]
    out[0] = 0.0
    return h ** alpha / gamma(alpha + 2.0) * out


def _oriented(op: Callable[[np.ndarray], np.ndarray], values: np.ndarray, side: Side) -> np.ndarray:
    if Side(side) is Side.LEFT:
        return op(values)
    return op(values[::-1])[::-1]


def rl_integral_grid(alpha: float, f: SampledFunction, side: Side) -> SampledFunction:
    """Riemann-Liouville integral I^alpha_+/- f on the grid of f.

    Product-trapezoidal rule: f is interpolated linearly and the kernel
    s^(alpha-1)/Gamma(alpha) is integrated exactly on every cell, which
    gives Toeplitz weights applied by convolution. f is taken as zero
    beyond the grid.
    """
    _check_order(alpha)
    _check_grid(f)
    _warn_tails(f, "rl_integral_grid")
    h = f.grid_step
    return f.with_values(_oriented(lambda v: _rl_integral_left(alpha, v, h), f.values, side))


def _marchaud_left(alpha: float, values: np.ndarray, h: float, p: int) -> np.ndarray:
    n = values.size
    eps = p * h
    m = np.arange(n + 1, dtype=float)
    with np.errstate(divide="ignore"):
        P = np.where(m > 0, (m ** (-alpha) - (m + 1.0) ** (-alpha)) / alpha, 0.0)
    Q = ((m + 1.0) ** (1.0 - alpha) - m ** (1.0 - alpha)) / (1.0 - alpha)
    j = np.arange(n)
    weights = np.zeros(n)
    first = j >= p
    weights[first] += ((j + 1.0) * P[j] - Q[j])[first]
    second = j >= p + 1
    jm = np.maximum(j - 1, 0)
    weights[second] += (Q[jm] - jm * P[jm])[second]
    conv = np.convolve(values, weights)[:n]
    d1 = np.gradient(values, h, edge_order=2)
    d2 = np.gradient(d1, h, edge_order=2)
    scale = alpha / gamma(1.0 - alpha)
    far = scale * (values * eps ** (-alpha) / alpha - h ** (-alpha) * conv)
    near = (d1 * eps ** (1.0 - alpha) * alpha / gamma(2.0 - alpha)
            - scale * d2 * eps ** (2.0 - alpha) / (2.0 * (2.0 - alpha)))
    return far + near


def marchaud_derivative_grid(alpha: float, f: SampledFunction, side: Side,
                             epsilon: Optional[float] = None) -> SampledFunction:
    """Marchaud derivative D^alpha_+/- f on the grid of f.

    The integral over xi >= epsilon uses product-trapezoidal weights; the
    part below epsilon is replaced by its Taylor expansion with central
    difference f' and f''. ``epsilon`` is rounded to a multiple of the
    grid step and defaults to two steps.

    Raises:
        GridError: for epsilon <= 0 or epsilon above 10% of the grid span
    """
    _check_order(alpha)
    _check_grid(f)
    h = f.grid_step
    epsilon = 2.0 * h if epsilon is None else float(epsilon)
    span = f.stop - f.grid_start
    if epsilon <= 0:
        raise GridError(f"epsilon must be positive, got {epsilon}", module=__name__)
    if epsilon > 0.1 * span:
        raise GridError(f"epsilon={epsilon} exceeds 10% of the grid span {span}", module=__name__)
    _warn_tails(f, "marchaud_derivative_grid")
    p = max(1, int(round(epsilon / h)))
    return f.with_values(_oriented(lambda v: _marchaud_left(alpha, v, h, p), f.values, side))


def rl_derivative_grid(alpha: float, f: SampledFunction, side: Side) -> SampledFunction:
    """Riemann-Liouville derivative as +/- d/dx I^(1-alpha)_+/- f."""
    _check_order(alpha)
    integral = rl_integral_grid(1.0 - alpha, f, side)
    sign = 1.0 if Side(side) is Side.LEFT else -1.0
    return f.with_values(sign * integral.derivative())


def caputo_derivative_interval(alpha: float, f: SampledFunction, x: float) -> Union[float, complex]:
    """Left Caputo derivative on [a, b] = [grid_start, stop] at a <= x <= b.

    (1/Gamma(1-alpha)) int_a^x f'(t) (x-t)^(-alpha) dt with f' from
    central differences, interpolated linearly, and the power kernel
    integrated exactly per cell.
    """
    _check_order(alpha)
    _check_grid(f)
    a, b, h = f.grid_start, f.stop, f.grid_step
    if not (a - 1e-12 * h <= x <= b + 1e-12 * h):
        raise ParameterError(f"x={x} lies outside [{a}, {b}]", module=__name__)
    x = min(max(x, a), b)
    if x == a:
        return 0.0
    g = f.derivative()
    last = min(int(math.floor((x - a) / h + 1e-9)), f.size - 1)
    nodes = f.grid[: last + 1]
    gs = g[: last + 1]
    if x - nodes[-1] > 1e-9 * h:
        nodes = np.append(nodes, x)
        gs = np.append(gs, np.interp(x, f.grid, g))
    u = x - nodes
    u = np.maximum(u, 0.0)
    m0 = (u[:-1] ** (1.0 - alpha) - u[1:] ** (1.0 - alpha)) / (1.0 - alpha)
    m1 = (u[:-1] ** (2.0 - alpha) - u[1:] ** (2.0 - alpha)) / (2.0 - alpha)
    delta = u[:-1] - u[1:]
    w_left = (m1 - u[1:] * m0) / delta
    w_right = (u[:-1] * m0 - m1) / delta
    total = np.sum(w_left * gs[:-1] + w_right * gs[1:])
    value = total / gamma(1.0 - alpha)
    return complex(value) if np.iscomplexobj(value) else float(value)


def caputo_derivative_grid(alpha: float, f: SampledFunction) -> SampledFunction:
    """caputo_derivative_interval at every grid node."""
    values = [caputo_derivative_interval(alpha, f, float(x)) for x in f.grid]
    return f.with_values(np.asarray(values))


def m_h_grid(H: float, f: SampledFunction, side: Side, epsilon: Optional[float] = None) -> SampledFunction:
    """M^H_+/- f = K_H I^(H-1/2) f for H > 1/2, K_H D^(1/2-H) f for H < 1/2, f for H = 1/2."""
    if not 0 < H < 1:
        raise ParameterError(f"H must lie in (0,1), got {H}", module=__name__)
    if H == 0.5:
        return f
    if H > 0.5:
        inner = rl_integral_grid(H - 0.5, f, side)
    else:
        inner = marchaud_derivative_grid(0.5 - H, f, side, epsilon)
    return inner.with_values(k_h(H) * inner.values)


def inner_alpha(f: SampledFunction, g: SampledFunction, alpha: float, pad_factor: int = 8) -> Union[float, complex]:
    """(f, g)_alpha = C(alpha) int |x|^(1-alpha) conj(f~(x)) g~(x) dx.

    Both transforms come from one zero-padded FFT each; the frequency
    cell around the origin is integrated exactly against |x|^(1-alpha).
    """
    if not f.same_grid(g):
        raise GridError("inner_alpha needs both functions on the same grid", module=__name__)
    if not 0 < alpha < 2:
        raise ParameterError(f"alpha must lie in (0,2), got {alpha}", module=__name__)
    h = f.grid_step
    size = 1 << int(math.ceil(math.log2(pad_factor * f.size)))
    F = np.fft.ifft(f.values, size)
    G = np.fft.ifft(g.values, size)
    dx = 2.0 * math.pi / (size * h)
    freqs = np.fft.fftfreq(size, d=1.0 / size) * dx
    with np.errstate(divide="ignore"):
        weights = dx * np.abs(freqs) ** (1.0 - alpha)
    weights[0] = 2.0 * (dx / 2.0) ** (2.0 - alpha) / (2.0 - alpha)
    products = (h * size) ** 2 / (2.0 * math.pi) * np.conj(F) * G
    value = c_alpha(alpha) * np.sum(weights * products)
    if f.is_complex or g.is_complex:
        return complex(value)
    return float(value.real)
