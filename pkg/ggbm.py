"""Generalized grey Brownian motion B^{alpha,beta}.

Finite-dimensional laws are Gaussian scale mixtures: X = sqrt(tau) L z
with L L^T the grey Gram matrix, z standard normal and tau drawn from
the M-Wright density M_beta (one draw per path). With this convention
E exp(i theta.X) = E_beta(-theta^T A theta / 2) and
E(B_t B_s) = A(t,s) / Gamma(beta+1).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import integrate, linalg

from errors import AccuracyLossError, CovarianceError, DomainError, ParameterError, QuadratureError
from fraccalc import SampledFunction, Side, m_h_grid
from settings import get_settings
from specfun import gamma, m_wright, m_wright_support, mittag_leffler, mittag_leffler2

logger = logging.getLogger(__name__)

JITTER = 1e-12
DOMAIN_FRACTION = 0.8


class FracParams(BaseModel):
    """Order pair of the process and of the time-fractional heat equation."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0, lt=2)
    beta: float = Field(gt=0, le=1)

    @property
    def gaussian(self) -> bool:
        return self.beta == 1.0


class GreyGram(BaseModel):
    """A_ij = (t_i^alpha + t_j^alpha - |t_i - t_j|^alpha) / 2 with its Cholesky factor."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    alpha: float
    matrix: np.ndarray
    cholesky: np.ndarray

    @property
    def size(self) -> int:
        return int(self.times.size)


class PathEnsemble(BaseModel):
    """Sampled paths on a time grid together with the mixing draws that produced them."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    samples: np.ndarray
    taus: np.ndarray
    seed: int
    alpha: float
    beta: float

    @field_validator("taus")
    @classmethod
    def _positive(cls, v: np.ndarray) -> np.ndarray:
        if np.any(v <= 0):
            raise ValueError("mixing draws must be positive")
        return v

    @model_validator(mode="after")
    def _shapes(self) -> "PathEnsemble":
        if self.samples.ndim != 2 or self.samples.shape != (self.taus.size, self.times.size):
            raise ValueError(f"samples of shape {self.samples.shape} do not fit {self.taus.size} mixing draws "
                             f"on {self.times.size} times")
        return self

    @property
    def n_paths(self) -> int:
        return int(self.samples.shape[0])

    def metadata(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "seed": self.seed,
            "n_paths": self.n_paths,
            "times": [float(t) for t in self.times],
        }

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Write one row per path, the mixing draws to ``<stem>.taus.csv`` and a JSON sidecar.

        Returns:
            Path of the sidecar file.
        """
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"t_{i + 1}" for i in range(self.times.size)])
            for row in self.samples:
                writer.writerow([repr(float(v)) for v in row])
        with open(taus_path(path), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau"])
            writer.writerows([repr(float(tau))] for tau in self.taus)
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote {self.n_paths} paths to {path} (metadata {sidecar})")
        return sidecar

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "PathEnsemble":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        samples = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        taus = np.loadtxt(taus_path(path), delimiter=",", skiprows=1, ndmin=1)
        return cls(times=np.asarray(meta["times"], dtype=float), samples=samples, taus=taus,
                   seed=meta["seed"], alpha=meta["alpha"], beta=meta["beta"])


def taus_path(path: Union[str, Path]) -> Path:
    """Companion file holding the mixing draws of a path CSV."""
    return Path(path).with_suffix(".taus.csv")


# ---------------------------------------------------------------------------
# Second-moment structure
# ---------------------------------------------------------------------------

def grey_gram(times: Sequence[float], alpha: float) -> GreyGram:
    """Grey Gram matrix on strictly increasing positive times, validated PSD by Cholesky."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ParameterError("times must be a non-empty 1-D sequence", module=__name__)
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ParameterError("times must be positive and strictly increasing", module=__name__)
    if not 0 < alpha < 2:
        raise ParameterError(f"alpha must lie in (0,2), got {alpha}", module=__name__)
    powers = times ** alpha
    matrix = 0.5 * (powers[:, None] + powers[None, :] - np.abs(times[:, None] - times[None, :]) ** alpha)
    try:
        chol = linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        jitter = JITTER * np.trace(matrix) / times.size
        logger.warning(f"Gram matrix not numerically PD, retrying with jitter {jitter:.2e}")
        try:
            chol = linalg.cholesky(matrix + jitter * np.eye(times.size), lower=True)
        except linalg.LinAlgError as exc:
            raise CovarianceError(f"Gram matrix for alpha={alpha} is not PSD", module=__name__) from exc
    return GreyGram(times=times, alpha=float(alpha), matrix=matrix, cholesky=chol)


def covariance(t: float, s: float, params: FracParams) -> float:
    """E(B_t B_s) = (t^alpha + s^alpha - |t-s|^alpha) / (2 Gamma(beta+1))."""
    if t < 0 or s < 0:
        raise ParameterError("times must be nonnegative", module=__name__)
    a = params.alpha
    return (t ** a + s ** a - abs(t - s) ** a) / (2.0 * gamma(params.beta + 1.0))


def char_fn(theta: Sequence[float], gram: GreyGram, beta: float) -> float:
    """E exp(i theta.X) = E_beta(-theta^T A theta / 2)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (gram.size,):
        raise ParameterError(f"theta has shape {theta.shape}, Gram matrix has size {gram.size}", module=__name__)
    quad_form = float(theta @ gram.matrix @ theta)
    return mittag_leffler(beta, -0.5 * quad_form).value


def even_moment(n: int, t: float, params: FracParams) -> float:
    """E B_t^(2n) = (2n)! / (Gamma(beta n + 1) 2^n) t^(alpha n); odd moments vanish."""
    if n < 1 or t <= 0:
        raise ParameterError("need n >= 1 and t > 0", module=__name__)
    return math.factorial(2 * n) / (gamma(params.beta * n + 1.0) * 2.0 ** n) * t ** (params.alpha * n)


def increment_moment(n: int, t: float, s: float, params: FracParams) -> float:
    """E (B_t - B_s)^(2n) by stationarity of increments."""
    if t == s:
        return 0.0
    return even_moment(n, abs(t - s), params)


def scaled_times(times: Sequence[float], alpha: float) -> np.ndarray:
    """Time change t -> 2^(1/alpha) t; B at these times has variance 2 t^alpha / Gamma(beta+1)."""
    return 2.0 ** (1.0 / alpha) * np.asarray(times, dtype=float)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def batch_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for batch ``index`` derived from ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def derive_seed(seed: int, index: int) -> int:
    """Integer seed for sub-run ``index``, for callers that hand a whole sub-run to sample_paths."""
    return int(np.random.SeedSequence(seed, spawn_key=(1 << 20, index)).generate_state(1)[0])


def batch_layout(total: int, size: int) -> List[Tuple[int, int]]:
    """(batch index, count) pairs covering ``total`` draws."""
    return [(i, min(size, total - start)) for i, start in enumerate(range(0, total, size))]


def _log_kanter(beta: float, u: np.ndarray) -> np.ndarray:
    p = 1.0 / (1.0 - beta)
    return beta * p * np.log(np.sin(beta * u)) + np.log(np.sin((1.0 - beta) * u)) - p * np.log(np.sin(u))


def draw_tau(beta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from M_beta using ``rng``; see sample_tau."""
    if beta == 1.0:
        return np.ones(n)
    u = math.pi * (1.0 - rng.random(n))
    w = np.maximum(rng.standard_exponential(n), np.finfo(float).tiny)
    return np.exp((1.0 - beta) * (np.log(w) - _log_kanter(beta, u)))


def sample_tau(beta: float, n: int, seed: Optional[int] = None) -> np.ndarray:
    """i.i.d. draws with density M_beta.

    tau = S^(-beta) for a one-sided beta-stable S built from one uniform
    angle and one exponential variate; in log form this is
    tau = (W / A(U))^(1-beta). beta = 1 gives the constant 1.
    """
    if not 0 < beta <= 1:
        raise ParameterError(f"beta must lie in (0,1], got {beta}", module=__name__)
    seed = get_settings().default_seed if seed is None else seed
    return draw_tau(beta, n, batch_rng(seed, 0))


def sample_stable(beta: float, n: int, seed: Optional[int] = None) -> np.ndarray:
    """One-sided beta-stable variates with Laplace transform exp(-s^beta)."""
    if not 0 < beta < 1:
        raise ParameterError(f"beta must lie in (0,1), got {beta}", module=__name__)
    return sample_tau(beta, n, seed) ** (-1.0 / beta)


def sample_paths(gram: GreyGram, beta: float, n_paths: int, seed: Optional[int] = None,
                 workers: Optional[int] = None, batch_size: Optional[int] = None) -> PathEnsemble:
    """Sample ggBm on the Gram matrix times.

    Batches use generators derived from (seed, batch index), so the
    ensemble does not depend on the number of workers.
    """
    if not 0 < beta <= 1:
        raise ParameterError(f"beta must lie in (0,1], got {beta}", module=__name__)
    if n_paths < 1:
        raise ParameterError("n_paths must be positive", module=__name__)
    settings = get_settings()
    seed = settings.default_seed if seed is None else seed
    workers = workers or settings.workers
    batch_size = batch_size or settings.path_batch_size

    def run(batch: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
        index, count = batch
        rng = batch_rng(seed, index)
        taus = draw_tau(beta, count, rng)
        z = rng.standard_normal((count, gram.size))
        return np.sqrt(taus)[:, None] * (z @ gram.cholesky.T), taus

    layout = batch_layout(n_paths, batch_size)
    logger.info(f"Sampling {n_paths} paths on {gram.size} times in {len(layout)} batches ({workers} workers)")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, layout))
    return PathEnsemble(times=gram.times, samples=np.concatenate([p[0] for p in parts]),
                        taus=np.concatenate([p[1] for p in parts]), seed=seed, alpha=gram.alpha, beta=beta)


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------

def gaussian_density(x: float, variance: float) -> float:
    return math.exp(-x * x / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)


def marginal_density(x: float, t: float, params: FracParams) -> float:
    """Density of B_t: int_0^inf M_beta(r) N(x; 0, r t^alpha) dr.

    Integrated in u = sqrt(r), which removes the r^(-1/2) endpoint
    behaviour: 2 (2 pi v)^(-1/2) int_0^U M_beta(u^2) exp(-x^2/(2 u^2 v)) du.
    """
    if t <= 0:
        raise ParameterError(f"t must be positive, got {t}", module=__name__)
    v = t ** params.alpha
    if params.gaussian:
        return gaussian_density(x, v)
    beta = params.beta
    upper = math.sqrt(m_wright_support(beta))
    x2 = x * x

    def integrand(u: float) -> float:
        if u == 0.0:
            return m_wright(beta, 0.0).value if x2 == 0.0 else 0.0
        return m_wright(beta, u * u).value * math.exp(-x2 / (2.0 * u * u * v))

    value, err = integrate.quad(integrand, 0.0, upper, epsabs=1e-13, epsrel=1e-11, limit=400)
    if err > 1e-8:
        raise QuadratureError(f"density quadrature error {err:.2e} at x={x}", module=__name__)
    return 2.0 * value / math.sqrt(2.0 * math.pi * v)


def kernel_density_estimate(samples: np.ndarray, xs: np.ndarray, bandwidth: float) -> np.ndarray:
    """Epanechnikov kernel density estimate, window sums taken from sorted prefix sums."""
    if bandwidth <= 0:
        raise ParameterError("bandwidth must be positive", module=__name__)
    s = np.sort(np.asarray(samples, dtype=float))
    xs = np.asarray(xs, dtype=float)
    c1 = np.concatenate(([0.0], np.cumsum(s)))
    c2 = np.concatenate(([0.0], np.cumsum(s * s)))
    lo = np.searchsorted(s, xs - bandwidth, side="left")
    hi = np.searchsorted(s, xs + bandwidth, side="right")
    count = hi - lo
    first = c1[hi] - c1[lo]
    second = c2[hi] - c2[lo]
    squares = count * xs * xs - 2.0 * xs * first + second
    return 0.75 * (count - squares / bandwidth ** 2) / (s.size * bandwidth)


# ---------------------------------------------------------------------------
# S-transforms
# ---------------------------------------------------------------------------

def _winding_number(beta: float, radius: float, n_angles: int = 360) -> int:
    angles = np.linspace(0.0, 2.0 * math.pi, n_angles + 1)
    values = np.array([mittag_leffler(beta, radius * complex(math.cos(a), math.sin(a)), tol=1e-8).value
                       for a in angles])
    phase = np.unwrap(np.angle(values))
    return int(round((phase[-1] - phase[0]) / (2.0 * math.pi)))


@lru_cache(maxsize=64)
def domain_bound(beta: float) -> float:
    """Radius eps_beta of the zero-free disc of E_beta, searched up to 5.

    Zeros are counted with the argument principle on circles of growing
    radius; the first crossing is refined by bisection. The scan stops
    where the Taylor series stops being reliable for complex arguments.
    """
    limit = min(5.0, 20.0 ** beta)
    step = 0.25
    previous = 0.0
    radius = step
    while radius <= limit + 1e-12:
        try:
            zeros = _winding_number(beta, radius)
        except AccuracyLossError:
            logger.debug(f"domain scan for beta={beta} stopped at radius {radius}")
            return previous
        if zeros >= 1:
            lo, hi = previous, radius
            for _ in range(12):
                mid = 0.5 * (lo + hi)
                if _winding_number(beta, mid) >= 1:
                    hi = mid
                else:
                    lo = mid
            logger.info(f"E_{beta} has its first zero at modulus ~{hi:.4f}")
            return hi
        previous = radius
        radius += step
    return limit


def _pairing(phi: SampledFunction) -> Union[float, complex]:
    """Bilinear <phi, phi> = int phi^2."""
    return phi.with_values(phi.values * phi.values).integral()


def _s_ratio(phi: SampledFunction, beta: float) -> Union[float, complex]:
    z = 0.5 * _pairing(phi)
    bound = domain_bound(beta)
    if abs(z) > DOMAIN_FRACTION * bound:
        raise DomainError(f"|<phi,phi>|/2 = {abs(z):.4f} exceeds {DOMAIN_FRACTION} * eps_beta = "
                          f"{DOMAIN_FRACTION * bound:.4f}", module=__name__)
    denominator = mittag_leffler(beta, z).value
    if abs(denominator) < 1e-8:
        raise DomainError(f"E_beta({z}) vanishes", module=__name__)
    return mittag_leffler2(beta, beta, z).value / (beta * denominator)


def _check_window(phi: SampledFunction, t: float) -> None:
    if not (phi.grid_start <= 0.0 and t <= phi.stop and t >= 0):
        raise ParameterError(f"[0, {t}] must lie inside the grid [{phi.grid_start}, {phi.stop}]", module=__name__)


def s_transform_ggbm(phi: SampledFunction, t: float, params: FracParams) -> complex:
    """S B_t(phi) = E_{beta,beta}(<phi,phi>/2) / (beta E_beta(<phi,phi>/2)) * int_0^t M^{alpha/2}_+ phi."""
    _check_window(phi, t)
    ratio = _s_ratio(phi, params.beta)
    transformed = m_h_grid(params.alpha / 2.0, phi, Side.LEFT)
    return complex(ratio * transformed.integral_between(0.0, t))


def s_transform_noise(phi: SampledFunction, t: float, params: FracParams) -> complex:
    """t-derivative of s_transform_ggbm: (M^{alpha/2}_+ phi)(t) times the same ratio."""
    _check_window(phi, t)
    ratio = _s_ratio(phi, params.beta)
    transformed = m_h_grid(params.alpha / 2.0, phi, Side.LEFT)
    return complex(ratio * transformed.interp(t))
