"""Special functions of Mittag-Leffler type.

Gamma, the one- and two-parameter Mittag-Leffler functions, the M-Wright
function and Fox H-functions of the series-convergent class. Every series
evaluation returns a ``SeriesResult`` carrying the value together with
the number of terms used and an error estimate.
"""

from __future__ import annotations

import cmath
import logging
import math
from functools import lru_cache
from typing import Any, Callable, Iterable, List, Optional, Tuple, Union

import mpmath
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate, special

from errors import AccuracyLossError, DivergenceError, ParameterError, PoleError, QuadratureError
from settings import get_settings

logger = logging.getLogger(__name__)

Number = Union[float, complex]

SWITCHOVER = 5.0
MAX_TERMS = 4096
MAX_DIGITS = 1000
_CHUNK = 64
_EPS = float(np.finfo(float).eps)
# M_beta(x) <= exp(-_TAIL_EXPONENT) beyond m_wright_support(beta)
_TAIL_EXPONENT = 60.0


class SeriesResult(BaseModel):
    """Value of a truncated expansion with its truncation bookkeeping."""

    model_config = ConfigDict(frozen=True)

    value: Any
    terms_used: int = Field(ge=1)
    error_estimate: float = Field(ge=0)
    method: str = "taylor"

    @field_validator("value")
    @classmethod
    def _finite(cls, v: Any) -> Number:
        if isinstance(v, (complex, np.complexfloating)):
            v = complex(v)
            if not cmath.isfinite(v):
                raise ValueError("series value is not finite")
            return v
        v = float(v)
        if not math.isfinite(v):
            raise ValueError("series value is not finite")
        return v


# ---------------------------------------------------------------------------
# Gamma
# ---------------------------------------------------------------------------

def gamma(x: float) -> float:
    """Gamma function on the real line.

    Uses the reflection formula below 1/2 so that negative non-integer
    arguments keep full relative accuracy.

    Raises:
        PoleError: if ``x`` is a non-positive integer.
    """
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise PoleError(f"Gamma has a pole at x={x}", module=__name__)
    if x < 0.5:
        return math.pi / (math.sin(math.pi * math.fmod(x, 2.0)) * float(special.gamma(1.0 - x)))
    return float(special.gamma(x))


def _is_pole(x: np.ndarray) -> np.ndarray:
    return (x <= 0) & (x == np.floor(x))


def _log_rgamma(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """log|1/Gamma(x)| and sign(1/Gamma(x)); the sign is 0 at poles."""
    pole = _is_pole(x)
    safe = np.where(pole, 0.5, x)
    return -special.gammaln(safe), np.where(pole, 0.0, special.gammasgn(safe))


def _fsum(terms: np.ndarray) -> Number:
    if np.iscomplexobj(terms):
        return complex(math.fsum(terms.real), math.fsum(terms.imag))
    return math.fsum(terms)


def _sum_series(term_fn: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]], tol: float,
                max_terms: int = MAX_TERMS) -> Tuple[Number, int, float]:
    """Sum a series chunk by chunk with exactly rounded (compensated) summation.

    ``term_fn(k)`` returns the terms for the index array ``k`` and the
    exponents they were computed from (used for the rounding estimate).
    Summation stops once three consecutive terms fall below
    ``tol * |partial sum|``.

    Returns:
        (value, terms_used, error_estimate)
    """
    terms: List[np.ndarray] = []
    exponents: List[np.ndarray] = []
    start = 0
    while start < max_terms:
        t, y = term_fn(np.arange(start, start + _CHUNK, dtype=float))
        start += _CHUNK
        if not np.all(np.isfinite(t)):
            raise DivergenceError("series terms overflowed", module=__name__)
        terms.append(t)
        exponents.append(y)
        all_t = np.concatenate(terms)
        partial = np.cumsum(all_t)
        small = np.abs(all_t) <= tol * np.abs(partial)
        run = small[2:] & small[1:-1] & small[:-2]
        hits = np.flatnonzero(run)
        if hits.size:
            stop = int(hits[0]) + 3
            used = all_t[:stop]
            ys = np.concatenate(exponents)[:stop]
            tail = float(np.sum(np.abs(used[-3:])))
            rounding = _EPS * float(np.sum(np.abs(used) * (2.0 + np.abs(ys))))
            return _fsum(used), stop, tail + rounding
    raise DivergenceError(f"terms did not decay within {max_terms} terms", module=__name__)


def _is_real(z: Number) -> bool:
    return not isinstance(z, complex) or z.imag == 0.0


def _power_terms(z: Number, k: np.ndarray, log_coef: np.ndarray, sign: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """sign * exp(log_coef) * z**k computed in log space."""
    with np.errstate(over="ignore", invalid="ignore"):
        if _is_real(z):
            zr = float(z.real) if isinstance(z, complex) else float(z)
            y = k * math.log(abs(zr)) + log_coef
            zsign = np.where(np.mod(k, 2.0) == 1.0, math.copysign(1.0, zr), 1.0)
            return sign * zsign * np.exp(y), y
        y = k * cmath.log(z) + log_coef
        return sign * np.exp(y), np.abs(y)


# ---------------------------------------------------------------------------
# Mittag-Leffler
# ---------------------------------------------------------------------------

def _ml_taylor(beta: float, gamma_: float, z: Number, tol: float) -> Tuple[Number, int, float]:
    def term_fn(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        log_coef, sign = _log_rgamma(beta * k + gamma_)
        return _power_terms(z, k, log_coef, sign)

    return _sum_series(term_fn, tol)


def _ml_asymptotic(beta: float, gamma_: float, x: float) -> Tuple[float, int, float]:
    """E_{beta,gamma}(-x) ~ sum_k (-1)^(k+1) x^(-k) / Gamma(gamma - beta k), optimally truncated."""
    k = np.arange(1, 257, dtype=float)
    log_coef, sign = _log_rgamma(gamma_ - beta * k)
    with np.errstate(over="ignore", under="ignore"):
        y = -k * math.log(x) + log_coef
        terms = sign * np.where(np.mod(k, 2.0) == 1.0, 1.0, -1.0) * np.exp(y)
    mags = np.abs(terms)
    nonzero = np.flatnonzero(mags > 0)
    if nonzero.size == 0:
        value, used, omitted = 0.0, 1, 0.0
    else:
        # stop at the smallest term; it is the first one omitted
        smallest = int(nonzero[np.argmin(mags[nonzero])])
        value = math.fsum(terms[:smallest])
        used = max(smallest, 1)
        omitted = float(mags[smallest])
    rounding = _EPS * float(np.sum(np.abs(terms[:used]) * (2.0 + np.abs(y[:used]))))
    exponential = 0.0
    if beta > 2.0 / 3.0:
        # exponentially small contribution near the Stokes line
        arg = x ** (1.0 / beta) * math.cos(math.pi / beta)
        exponential = 2.0 / beta * x ** ((1.0 - gamma_) / beta) * math.exp(min(arg, 700.0))
    return value, used, omitted + rounding + exponential


def _ml_spectral(beta: float, x: float) -> Tuple[float, int, float]:
    """E_beta(-x) for 0 < beta < 1 from its completely monotone integral form."""
    c = math.cos(beta * math.pi)
    scale = x ** (1.0 / beta)

    def integrand(s: float) -> float:
        return math.exp(-scale * s ** (1.0 / beta)) / (s * s + 2.0 * s * c + 1.0)

    value, err, info = integrate.quad(integrand, 0.0, np.inf, epsabs=1e-15, epsrel=1e-12, limit=200, full_output=1)[:3]
    factor = math.sin(beta * math.pi) / (beta * math.pi)
    return factor * value, int(info["neval"]), factor * err


def _ml_spectral_beta(beta: float, x: float) -> Tuple[float, int, float]:
    """E_{beta,beta}(-x) = beta int_0^inf r e^{-rx} K(r) dr with the spectral density
    K(r) = sin(beta pi) r^(beta-1) / (pi (r^(2 beta) + 2 r^beta cos(beta pi) + 1))."""
    c = math.cos(beta * math.pi)

    def integrand(r: float) -> float:
        rb = r ** beta
        return math.exp(-r * x) * rb / (rb * rb + 2.0 * rb * c + 1.0)

    head, err_head, info = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-15, epsrel=1e-12, limit=200,
                                          full_output=1)[:3]
    tail, err_tail = integrate.quad(integrand, 1.0, np.inf, epsabs=1e-15, epsrel=1e-12, limit=200)
    factor = beta * math.sin(beta * math.pi) / math.pi
    return factor * (head + tail), int(info["neval"]), factor * (err_head + err_tail)


def _accepts(error: float, value: Number, tol: float) -> bool:
    return error <= tol * max(1.0, abs(value))


def mittag_leffler2(beta: float, gamma_: float, z: Number, tol: Optional[float] = None) -> SeriesResult:
    """Two-parameter Mittag-Leffler function E_{beta,gamma}(z).

    Regimes are tried in order of expected accuracy: the Taylor series
    near the origin, the algebraic asymptotic series on the negative real
    axis, and for ``0 < beta < 1`` with ``gamma`` equal to 1 or to ``beta``
    the spectral integral on the negative real axis. The first regime meeting ``tol`` wins.

    Args:
        beta: order, ``beta > 0``
        gamma_: second parameter; Gamma poles in single terms count as zero
        z: real or complex argument
        tol: relative tolerance (absolute below magnitude one)

    Raises:
        ParameterError: for ``beta <= 0``
        AccuracyLossError: if no regime reached ``tol``
    """
    tol = get_settings().tol if tol is None else float(tol)
    beta = float(beta)
    gamma_ = float(gamma_)
    if not beta > 0:
        raise ParameterError(f"Mittag-Leffler order must be positive, got {beta}", module=__name__)
    real = _is_real(z)
    z = float(z.real) if (real and isinstance(z, complex)) else z

    if beta == 1.0 and gamma_ == 1.0:
        return SeriesResult(value=math.exp(z) if real else cmath.exp(z), terms_used=1, error_estimate=0.0, method="exp")
    if z == 0:
        value = float(special.rgamma(gamma_))
        return SeriesResult(value=value if real else complex(value), terms_used=1, error_estimate=0.0)

    modulus = abs(z)
    regimes: List[str] = []
    if real and z < 0 and 0 < beta < 2 and modulus >= 1.0:
        regimes = ["asymptotic", "taylor"] if modulus >= SWITCHOVER else ["taylor", "asymptotic"]
    else:
        regimes = ["taylor"]

    best: Optional[Tuple[Number, int, float, str]] = None
    for regime in regimes:
        try:
            if regime == "taylor":
                if modulus ** (1.0 / beta) > 700.0:
                    continue
                value, used, err = _ml_taylor(beta, gamma_, z, tol)
            else:
                value, used, err = _ml_asymptotic(beta, gamma_, -z)
        except DivergenceError as exc:
            logger.debug(f"E_{beta},{gamma_}({z}): {regime} regime failed: {exc}")
            continue
        if best is None or err < best[2]:
            best = (value, used, err, regime)
        if _accepts(err, value, tol):
            break

    if best is not None and _accepts(best[2], best[0], tol):
        value, used, err, regime = best
    elif real and z < 0 and 0 < beta < 1 and gamma_ in (1.0, beta):
        value, used, err = _ml_spectral(beta, -z) if gamma_ == 1.0 else _ml_spectral_beta(beta, -z)
        regime = "integral"
        if best is not None and best[2] < err:
            value, used, err, regime = best
        if not _accepts(err, value, tol):
            raise AccuracyLossError(f"E_{beta}({z}) did not reach tol={tol}", value=value,
                                    error_estimate=err, module=__name__)
    else:
        value, err = (best[0], best[2]) if best is not None else (float("nan"), float("inf"))
        raise AccuracyLossError(f"E_{beta},{gamma_}({z}) did not reach tol={tol}",
                                value=value, error_estimate=err, module=__name__)

    if not real:
        value = complex(value)
    elif isinstance(value, complex):
        value = value.real
    logger.debug(f"E_{beta},{gamma_}({z}) = {value} via {regime} ({used} terms, err {err:.2e})")
    return SeriesResult(value=value, terms_used=max(int(used), 1), error_estimate=float(err), method=regime)


def mittag_leffler(beta: float, z: Number, tol: Optional[float] = None) -> SeriesResult:
    """One-parameter Mittag-Leffler function E_beta(z) = E_{beta,1}(z)."""
    return mittag_leffler2(beta, 1.0, z, tol)


def ml_derivative(beta: float, z: Number, tol: Optional[float] = None) -> Number:
    """d/dz E_beta(z) = E_{beta,beta}(z) / beta."""
    result = mittag_leffler2(beta, beta, z, tol)
    return result.value / float(beta)


def ml_integral_identity_residual(alpha: float, beta: float, lam: float, t: float) -> float:
    """Residual of the Volterra identity satisfied by E_beta(-lam^2 t^alpha / 2).

    With T = t^(alpha/beta) the identity reads
    E_beta(-c T^beta) = 1 - c/Gamma(beta) * int_0^T (T-r)^(beta-1) E_beta(-c r^beta) dr,
    c = lam^2/2, which is the substituted form of the s-integral over [0, t].
    """
    if not (0 < alpha < 2 and 0 < beta < 1 and t > 0):
        raise ParameterError(f"need 0<alpha<2, 0<beta<1, t>0; got alpha={alpha}, beta={beta}, t={t}",
                             module=__name__)
    c = 0.5 * lam * lam
    big_t = t ** (alpha / beta)
    lhs = mittag_leffler(beta, -c * t ** alpha).value

    def e_beta(r: float) -> float:
        return mittag_leffler(beta, -c * r ** beta).value

    half = 0.5 * big_t
    head, err_head = integrate.quad(lambda r: (big_t - r) ** (beta - 1.0) * e_beta(r), 0.0, half,
                                    epsabs=1e-13, epsrel=1e-11, limit=200)
    tail, err_tail = integrate.quad(e_beta, half, big_t, weight="alg", wvar=(0.0, beta - 1.0),
                                    epsabs=1e-13, epsrel=1e-11, limit=200)
    if err_head + err_tail > 1e-8:
        raise QuadratureError(f"identity quadrature error {err_head + err_tail:.2e}", module=__name__)
    rhs = 1.0 - c * (head + tail) / gamma(beta)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# M-Wright
# ---------------------------------------------------------------------------

def m_wright_support(beta: float) -> float:
    """Point beyond which M_beta is below exp(-60)."""
    c = (1.0 - beta) * beta ** (beta / (1.0 - beta))
    return (_TAIL_EXPONENT / c) ** (1.0 - beta)


def _m_wright_series_peak(beta: float, x: float) -> Tuple[float, float]:
    """Upper bounds (log) for the largest series term and the term at n=512."""
    n = np.arange(0, 513, dtype=float)
    bound = n * math.log(x) - special.gammaln(n + 1.0) + special.gammaln(beta * n + beta) - math.log(math.pi)
    return float(np.max(bound)), float(bound[-1])


def _m_wright_series(beta: float, x: float, tol: float) -> Tuple[float, int, float]:
    def term_fn(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        log_fact = -special.gammaln(n + 1.0)
        log_rg, sign = _log_rgamma(1.0 - beta - beta * n)
        return _power_terms(-x, n, log_fact + log_rg, sign)

    return _sum_series(term_fn, tol, max_terms=640)


def _m_wright_integral(beta: float, x: float) -> Tuple[float, int, float]:
    """Exponentially damped large-x form.

    M_beta(x) = x^(beta/(1-beta)) / (pi (1-beta)) * int_0^pi A(phi) exp(-A(phi) x^(1/(1-beta))) dphi
    with A(phi) = sin(beta phi)^(beta/(1-beta)) sin((1-beta) phi) / sin(phi)^(1/(1-beta)).
    """
    p = 1.0 / (1.0 - beta)
    xp = x ** p
    log_prefactor = beta * p * math.log(x)

    def integrand(phi: float) -> float:
        log_a = (beta * p * math.log(math.sin(beta * phi)) + math.log(math.sin((1.0 - beta) * phi))
                 - p * math.log(math.sin(phi)))
        exponent = log_a - math.exp(log_a) * xp + log_prefactor
        return math.exp(exponent) if exponent > -745.0 else 0.0

    peak = min(1.0, 3.0 / math.sqrt(xp))
    value, err, info = integrate.quad(integrand, 0.0, math.pi, points=(peak,), epsabs=1e-16,
                                      epsrel=1e-12, limit=200, full_output=1)[:3]
    scale = 1.0 / (math.pi * (1.0 - beta))
    return scale * value, int(info["neval"]), scale * err


@lru_cache(maxsize=262144)
def _m_wright_cached(beta: float, x: float, tol: float) -> Tuple[float, int, float, str]:
    if x == 0.0:
        return float(special.rgamma(1.0 - beta)), 1, 0.0, "series"
    peak, last = _m_wright_series_peak(beta, x)
    if peak < math.log(1e5) and last < math.log(tol * 1e-3):
        try:
            value, used, err = _m_wright_series(beta, x, tol)
            if err <= max(tol, tol * abs(value)):
                return max(value, 0.0), used, err, "series"
        except DivergenceError:
            pass
    value, used, err = _m_wright_integral(beta, x)
    if err > max(1e-9, 1e-6 * abs(value)):
        raise AccuracyLossError(f"M_{beta}({x}) integral form did not converge", value=value,
                                error_estimate=err, module=__name__)
    return max(value, 0.0), used, err, "integral"


def m_wright(beta: float, x: float, tol: Optional[float] = None) -> SeriesResult:
    """M-Wright function M_beta(x) for 0 < beta < 1 and x >= 0.

    The alternating series is summed with compensation while it loses
    fewer than about five digits to cancellation; past that the
    exponentially damped integral form is used. Tiny negative round-off
    is clamped to zero.
    """
    tol = get_settings().tol if tol is None else float(tol)
    beta = float(beta)
    x = float(x)
    if not 0 < beta < 1:
        raise ParameterError(f"M-Wright order must lie in (0,1), got {beta}", module=__name__)
    if x < 0:
        raise ParameterError(f"M-Wright argument must be nonnegative, got {x}", module=__name__)
    value, used, err, method = _m_wright_cached(beta, x, tol)
    return SeriesResult(value=value, terms_used=used, error_estimate=err, method=method)


def m_wright_array(beta: float, xs: Iterable[float], tol: Optional[float] = None) -> np.ndarray:
    """M_beta evaluated pointwise on an array of nonnegative reals."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty_like(xs)
    flat = out.reshape(-1)
    for i, x in enumerate(xs.reshape(-1)):
        flat[i] = m_wright(beta, float(x), tol).value
    return out


def m_wright_moment(beta: float, delta: float) -> float:
    """Closed-form moment int_0^inf r^delta M_beta(r) dr = Gamma(delta+1)/Gamma(beta delta+1)."""
    return gamma(delta + 1.0) / gamma(beta * delta + 1.0)


def m_wright_moment_quadrature(beta: float, delta: float) -> float:
    """The same moment by quadrature, for delta > -1."""
    if delta <= -1:
        raise ParameterError(f"moment of order {delta} diverges", module=__name__)
    upper = m_wright_support(beta)
    head, err_head = integrate.quad(lambda r: m_wright(beta, r).value, 0.0, 1.0, weight="alg",
                                    wvar=(delta, 0.0), epsabs=1e-13, limit=200)
    points = [r for r in (4.0, 16.0, 64.0) if r < upper]
    tail, err_tail = integrate.quad(lambda r: r ** delta * m_wright(beta, r).value, 1.0, upper,
                                    points=points or None, epsabs=1e-13, epsrel=1e-11, limit=400)
    if err_head + err_tail > 1e-8:
        raise QuadratureError(f"moment quadrature error {err_head + err_tail:.2e}", module=__name__)
    return head + tail


def m_wright_laplace_residual(beta: float, z: Number) -> float:
    """|int_0^inf M_beta(r) e^{-rz} dr - E_beta(-z)| for Re z >= 0."""
    z = complex(z)
    if z.real < 0:
        raise ParameterError(f"Laplace identity needs Re z >= 0, got {z}", module=__name__)
    upper = m_wright_support(beta)
    points = [r for r in (1.0, 4.0, 16.0, 64.0) if r < upper] or None

    def part(fn: Callable[[float], float]) -> float:
        value, err = integrate.quad(fn, 0.0, upper, points=points, epsabs=1e-13, epsrel=1e-11, limit=400)
        if err > 1e-7:
            raise QuadratureError(f"Laplace quadrature error {err:.2e}", module=__name__)
        return value

    real_part = part(lambda r: m_wright(beta, r).value * math.exp(-z.real * r) * math.cos(z.imag * r))
    transform: Number = real_part
    if z.imag != 0.0:
        imag_part = part(lambda r: -m_wright(beta, r).value * math.exp(-z.real * r) * math.sin(z.imag * r))
        transform = complex(real_part, imag_part)
        target = mittag_leffler(beta, -z).value
    else:
        target = mittag_leffler(beta, -z.real).value
    return float(abs(transform - target))


# ---------------------------------------------------------------------------
# Fox H
# ---------------------------------------------------------------------------

Pair = Tuple[float, float]


def _coincident_poles(starts: List[Pair], count: int = 200) -> bool:
    ladders = [(s + np.arange(count)) / scale for s, scale in starts]
    for i in range(len(ladders)):
        for j in range(i + 1, len(ladders)):
            if np.min(np.abs(ladders[i][:, None] - ladders[j][None, :])) < 1e-10:
                return True
    return False


class HFunctionSpec(BaseModel):
    """Parameters of H^{m,n}_{p,q}(z | (a_i, A_i); (b_j, B_j)).

    Two series classes are supported: ``mu = sum B - sum A > 0`` with
    ``m >= 1`` (expansion over the poles of the b-Gammas) and ``mu < 0``
    with ``n >= 1``, which is evaluated through the inversion formula.
    """

    model_config = ConfigDict(frozen=True)

    m: int = Field(ge=0)
    n: int = Field(ge=0)
    p: int = Field(ge=0)
    q: int = Field(ge=0)
    upper_params: Tuple[Pair, ...] = ()
    lower_params: Tuple[Pair, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "HFunctionSpec":
        if len(self.upper_params) != self.p or len(self.lower_params) != self.q:
            raise ValueError(f"expected {self.p} upper and {self.q} lower pairs")
        if not (self.n <= self.p and self.m <= self.q):
            raise ValueError("need 0 <= n <= p and 0 <= m <= q")
        if any(scale <= 0 for _, scale in self.upper_params + self.lower_params):
            raise ValueError("all A_i and B_j must be positive")
        cls = self.series_class
        if cls == "lower":
            if _coincident_poles(list(self.lower_params[: self.m])):
                raise ValueError("poles of the b-Gammas coincide")
        elif cls == "upper":
            starts = [(1.0 - a, scale) for a, scale in self.upper_params[: self.n]]
            if _coincident_poles(starts):
                raise ValueError("poles of the a-Gammas coincide")
        else:
            raise ValueError(f"no convergent series for mu={self.mu} with m={self.m}, n={self.n}")
        return self

    @property
    def mu(self) -> float:
        return sum(s for _, s in self.lower_params) - sum(s for _, s in self.upper_params)

    @property
    def series_class(self) -> Optional[str]:
        if self.mu > 0 and self.m >= 1:
            return "lower"
        if self.mu < 0 and self.n >= 1:
            return "upper"
        return None


def fox_h_invert(spec: HFunctionSpec) -> HFunctionSpec:
    """H^{m,n}_{p,q}(z) = H^{n,m}_{q,p}(1/z) with (1-b, B) above and (1-a, A) below."""
    try:
        return HFunctionSpec(
            m=spec.n, n=spec.m, p=spec.q, q=spec.p,
            upper_params=tuple((1.0 - b, s) for b, s in spec.lower_params),
            lower_params=tuple((1.0 - a, s) for a, s in spec.upper_params),
        )
    except ValueError as exc:
        raise ParameterError(f"inverted spec invalid: {exc}", module=__name__) from exc


def fox_h_power_shift(spec: HFunctionSpec, sigma: float) -> HFunctionSpec:
    """Spec of z^sigma H(z): a_i -> a_i + sigma A_i, b_j -> b_j + sigma B_j."""
    try:
        return HFunctionSpec(
            m=spec.m, n=spec.n, p=spec.p, q=spec.q,
            upper_params=tuple((a + sigma * s, s) for a, s in spec.upper_params),
            lower_params=tuple((b + sigma * s, s) for b, s in spec.lower_params),
        )
    except ValueError as exc:
        raise ParameterError(f"shifted spec invalid: {exc}", module=__name__) from exc


def exp_spec() -> HFunctionSpec:
    """e^{-z} = H^{1,0}_{0,1}(z | -; (0,1))."""
    return HFunctionSpec(m=1, n=0, p=0, q=1, lower_params=((0.0, 1.0),))


def m_wright_spec(beta: float) -> HFunctionSpec:
    """M_beta(z) = H^{1,0}_{1,1}(z | (1-beta, beta); (0,1))."""
    return HFunctionSpec(m=1, n=0, p=1, q=1, upper_params=((1.0 - beta, beta),), lower_params=((0.0, 1.0),))


def kernel_spec(beta: float) -> HFunctionSpec:
    """H^{2,0}_{1,2}(w | (1-beta/2, beta); (0,1), (1/2,1)) behind the heat kernel."""
    return HFunctionSpec(m=2, n=0, p=1, q=2, upper_params=((1.0 - beta / 2.0, beta),),
                         lower_params=((0.0, 1.0), (0.5, 1.0)))


def _fox_h_term_fn(spec: HFunctionSpec, i: int, z: float) -> Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]:
    """Terms of the residue series at the poles of the i-th lower Gamma, with their log-magnitudes."""
    b_i, scale_i = spec.lower_params[i]
    log_z = math.log(z)

    def term_fn(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        s = (b_i + k) / scale_i
        log_coef = -special.gammaln(k + 1.0) - math.log(scale_i)
        sign = np.where(np.mod(k, 2.0) == 1.0, -1.0, 1.0)
        numer = [b - scale * s for j, (b, scale) in enumerate(spec.lower_params[: spec.m]) if j != i]
        numer += [1.0 - a + scale * s for a, scale in spec.upper_params[: spec.n]]
        denom = [1.0 - b + scale * s for b, scale in spec.lower_params[spec.m:]]
        denom += [a - scale * s for a, scale in spec.upper_params[spec.n:]]
        for arg in numer:
            if np.any(_is_pole(arg)):
                raise ParameterError("numerator Gamma pole in H-series term; parameters outside the supported class",
                                     module=__name__)
            log_coef = log_coef + special.gammaln(arg)
            sign = sign * special.gammasgn(arg)
        for arg in denom:
            log_rg, sgn = _log_rgamma(arg)
            log_coef = log_coef + log_rg
            sign = sign * sgn
        with np.errstate(over="ignore", under="ignore"):
            y = log_coef + s * log_z
            return sign * np.exp(y), np.where(sign == 0.0, -np.inf, y)

    return term_fn


def _fox_h_pole_series(spec: HFunctionSpec, i: int, z: float, tol: float) -> Tuple[float, int, float]:
    term_fn = _fox_h_term_fn(spec, i, z)

    def finite_exponents(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        t, y = term_fn(k)
        return t, np.where(np.isfinite(y), y, 0.0)

    return _sum_series(finite_exponents, tol)


def _fox_h_peak(spec: HFunctionSpec, z: float) -> Tuple[float, int]:
    """Largest log-magnitude over all residue terms, and the index where the last series peaks."""
    k = np.arange(MAX_TERMS, dtype=float)
    peak, index = -np.inf, 0
    for i in range(spec.m):
        _, y = _fox_h_term_fn(spec, i, z)(k)
        if np.any(np.isfinite(y)):
            j = int(np.argmax(y))
            peak = max(peak, float(y[j]))
            index = max(index, j)
    return peak, index


def _fox_h_pole_series_mp(spec: HFunctionSpec, i: int, z: float, tol: float,
                          start: int) -> Tuple[mpmath.mpf, int, mpmath.mpf, mpmath.mpf]:
    """The same residue series at the current mpmath working precision.

    Returns:
        (value, terms_used, sum of |terms|, truncation estimate)
    """
    b_i, scale_i = (mpmath.mpf(v) for v in spec.lower_params[i])
    lower = [(mpmath.mpf(b), mpmath.mpf(s)) for b, s in spec.lower_params]
    upper = [(mpmath.mpf(a), mpmath.mpf(s)) for a, s in spec.upper_params]
    log_z = mpmath.log(z)
    total = mpmath.mpf(0)
    mass = mpmath.mpf(0)
    recent: List[mpmath.mpf] = []
    for k in range(max(MAX_TERMS, 4 * start)):
        s = (b_i + k) / scale_i
        coef = mpmath.rgamma(k + 1) / scale_i
        for j, (b, scale) in enumerate(lower[: spec.m]):
            if j != i:
                coef *= mpmath.gamma(b - scale * s)
        for a, scale in upper[: spec.n]:
            coef *= mpmath.gamma(1 - a + scale * s)
        for b, scale in lower[spec.m:]:
            coef *= mpmath.rgamma(1 - b + scale * s)
        for a, scale in upper[spec.n:]:
            coef *= mpmath.rgamma(a - scale * s)
        term = (-1) ** k * coef * mpmath.exp(s * log_z)
        total += term
        mass += abs(term)
        recent = (recent + [abs(term)])[-3:]
        if k > start and len(recent) == 3 and all(r <= tol * abs(total) for r in recent):
            return total, k + 1, mass, mpmath.fsum(recent)
    raise DivergenceError(f"extended-precision terms did not decay within {k + 1} terms", module=__name__)


def _fox_h_extended(spec: HFunctionSpec, z: float, tol: float) -> SeriesResult:
    """Residue series in mpmath arithmetic, with the precision raised until cancellation is covered."""
    peak, start = _fox_h_peak(spec, z)
    peak = max(peak, 0.0)
    digits = max(30, int(math.ceil(peak / math.log(10.0) - math.log10(tol))) + 15)
    value, err = mpmath.mpf("nan"), mpmath.inf
    while digits <= MAX_DIGITS:
        with mpmath.workdps(digits):
            parts = [_fox_h_pole_series_mp(spec, i, z, tol, start) for i in range(spec.m)]
            value = mpmath.fsum(p[0] for p in parts)
            mass = mpmath.fsum(p[2] for p in parts)
            err = mass * mpmath.mpf(10) ** (2 - digits) + mpmath.fsum(p[3] for p in parts)
            used = sum(p[1] for p in parts)
            if err <= tol * abs(value) or mass == 0:
                logger.debug(f"H^{spec.m},{spec.n}_{spec.p},{spec.q}({z}) needed {digits} digits ({used} terms)")
                return SeriesResult(value=float(value), terms_used=max(used, 1), error_estimate=float(err),
                                    method="h-series-extended")
            needed = mpmath.log10(mass / (tol * abs(value))) if value != 0 else digits
            digits = max(2 * digits, int(mpmath.ceil(needed)) + 15)
    raise AccuracyLossError(f"H^{spec.m},{spec.n}_{spec.p},{spec.q}({z}) needs more than {MAX_DIGITS} digits",
                            value=float(value), error_estimate=float(err), module=__name__)


def fox_h(spec: HFunctionSpec, z: float, tol: Optional[float] = None) -> SeriesResult:
    """Fox H-function by its residue series.

    Sums over the first ``m`` lower Gamma factors' poles:
    H(z) = sum_i sum_k (-1)^k / (k! B_i) * prod Gamma(...) / prod Gamma(...) * z^((b_i+k)/B_i).
    Specs of the ``mu < 0`` class are evaluated as ``fox_h(invert(spec), 1/z)``.
    The error estimate must stay below ``tol * |value|``; when
    cancellation eats the double-precision digits the series is summed
    again in extended precision.

    Raises:
        ParameterError: for ``z <= 0`` or a numerator pole
        AccuracyLossError: if not even MAX_DIGITS digits reach ``tol``
    """
    tol = get_settings().tol if tol is None else float(tol)
    z = float(z)
    if not z > 0:
        raise ParameterError(f"H-function series needs z > 0, got {z}", module=__name__)
    if spec.series_class == "upper":
        inner = fox_h(fox_h_invert(spec), 1.0 / z, tol)
        return SeriesResult(value=inner.value, terms_used=inner.terms_used,
                            error_estimate=inner.error_estimate, method="h-series-inverted")
    total: List[float] = []
    used = 0
    err = 0.0
    try:
        for i in range(spec.m):
            value, n_terms, e = _fox_h_pole_series(spec, i, z, tol)
            total.append(value)
            used += n_terms
            err += e
    except DivergenceError as exc:
        logger.debug(f"H-series at z={z} overflowed in double precision: {exc}")
        return _fox_h_extended(spec, z, tol)
    value = math.fsum(total)
    if not err <= tol * abs(value):
        logger.debug(f"H-series at z={z}: error {err:.2e} on value {value:.3e}, switching to extended precision")
        return _fox_h_extended(spec, z, tol)
    logger.debug(f"H^{spec.m},{spec.n}_{spec.p},{spec.q}({z}) = {value} ({used} terms)")
    return SeriesResult(value=value, terms_used=used, error_estimate=err, method="h-series")
