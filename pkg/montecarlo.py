"""Monte Carlo and quadrature estimators built on the ggBm sampler.

Every estimator splits its draws into batches with generators derived
from (seed, batch index) and merges per-batch (count, mean, M2) triples,
so results are reproducible bit for bit from the seed whatever the
worker count.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, special

from errors import ParameterError, QuadratureError
from fraccalc import SampledFunction
from ggbm import FracParams, batch_layout, batch_rng, derive_seed, draw_tau, grey_gram, sample_paths
from heatkernel import KernelQuery, kernel_quadrature, unit_kernel
from settings import get_settings
from specfun import gamma, mittag_leffler

logger = logging.getLogger(__name__)

MIN_STEPS = 50


class MCEstimate(BaseModel):
    """Sample mean with its standard error and the inputs that reproduce it."""

    model_config = ConfigDict(frozen=True)

    value: float
    stderr: float = Field(ge=0)
    n_samples: int = Field(ge=0)
    seed: int
    params: Dict[str, float] = {}

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.value - target) <= sigmas * self.stderr

    def to_json(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Moments(NamedTuple):
    count: int
    mean: float
    m2: float

    @classmethod
    def of(cls, values: np.ndarray) -> "Moments":
        if values.size == 0:
            return cls(0, 0.0, 0.0)
        mean = float(np.mean(values))
        return cls(int(values.size), mean, float(np.sum((values - mean) ** 2)))


def merge_moments(parts: Iterable[Moments]) -> Moments:
    """Pairwise (Chan) combination of batch moments in batch order."""
    total = Moments(0, 0.0, 0.0)
    for part in parts:
        if part.count == 0:
            continue
        if total.count == 0:
            total = part
            continue
        n = total.count + part.count
        delta = part.mean - total.mean
        mean = total.mean + delta * part.count / n
        m2 = total.m2 + part.m2 + delta * delta * total.count * part.count / n
        total = Moments(n, mean, m2)
    return total


def _estimate(moments: Moments, seed: int, params: Dict[str, float]) -> MCEstimate:
    if moments.count > 1:
        stderr = math.sqrt(moments.m2 / (moments.count - 1) / moments.count)
    else:
        stderr = 0.0
    return MCEstimate(value=moments.mean, stderr=stderr, n_samples=moments.count, seed=seed, params=params)


def _run_batches(run: Callable[[Tuple[int, int]], Moments], total: int, batch_size: int,
                 workers: int) -> Moments:
    layout = batch_layout(total, batch_size)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(run, layout))
    return merge_moments(parts)


def _resolve(seed: Optional[int], workers: Optional[int], batch_size: Optional[int],
             default_batch: Optional[int] = None) -> Tuple[int, int, int]:
    settings = get_settings()
    return (settings.default_seed if seed is None else seed,
            workers or settings.workers,
            batch_size or default_batch or settings.batch_size)


# ---------------------------------------------------------------------------
# Feynman-Kac
# ---------------------------------------------------------------------------

def fk_solution(u0: SampledFunction, t: float, x: float, params: FracParams, n_samples: int,
                seed: Optional[int] = None, workers: Optional[int] = None,
                batch_size: Optional[int] = None) -> MCEstimate:
    """u(t, x) = E u0(x + sqrt(tau) t^(alpha/2) z) with tau ~ M_beta and z standard normal.

    u0 is read through its linear interpolant, zero off the grid.
    """
    if t <= 0:
        raise ParameterError(f"t must be positive, got {t}", module=__name__)
    if n_samples < 1:
        raise ParameterError("n_samples must be positive", module=__name__)
    seed, workers, batch_size = _resolve(seed, workers, batch_size)
    scale = t ** (params.alpha / 2.0)

    def run(batch: Tuple[int, int]) -> Moments:
        index, count = batch
        rng = batch_rng(seed, index)
        taus = draw_tau(params.beta, count, rng)
        z = rng.standard_normal(count)
        return Moments.of(np.asarray(u0.interp(x + np.sqrt(taus) * scale * z)))

    moments = _run_batches(run, n_samples, batch_size, workers)
    estimate = _estimate(moments, seed, {"alpha": params.alpha, "beta": params.beta, "t": t, "x": x})
    logger.info(f"fk_solution(t={t}, x={x}) = {estimate.value:.6f} +/- {estimate.stderr:.2e} (n={n_samples})")
    return estimate


# ---------------------------------------------------------------------------
# Donsker delta
# ---------------------------------------------------------------------------

def donsker_truncation(n_cut: float, a: float, t: float, params: FracParams) -> float:
    """(1/2 pi) int_{-n}^{n} e^{-i x a} E_beta(-x^2 t^alpha / 2) dx.

    The integrand is even, so this is (1/pi) times a cosine integral over
    [0, n], done with QUADPACK's oscillatory rule when a != 0.
    """
    if n_cut < 0:
        raise ParameterError(f"n_cut must be nonnegative, got {n_cut}", module=__name__)
    if t <= 0:
        raise ParameterError(f"t must be positive, got {t}", module=__name__)
    if n_cut == 0:
        return 0.0
    v = t ** params.alpha
    beta = params.beta

    def integrand(lam: float) -> float:
        return mittag_leffler(beta, -0.5 * lam * lam * v).value

    if a == 0.0:
        value, err = integrate.quad(integrand, 0.0, n_cut, epsabs=1e-13, epsrel=1e-11, limit=400)
    else:
        value, err = integrate.quad(integrand, 0.0, n_cut, weight="cos", wvar=abs(a), epsabs=1e-13,
                                    limit=400)
    if err > 1e-8:
        raise QuadratureError(f"truncated delta integral error {err:.2e}", module=__name__)
    return value / math.pi


def donsker_tail(n_cut: float, t: float, params: FracParams, terms: int = 8) -> float:
    """Leading behaviour of kernel - donsker_truncation at a = 0 for large n_cut.

    (1/pi) sum_k (-1)^(k+1) (2/t^alpha)^k n^(1-2k) / ((2k-1) Gamma(1-beta k)).
    Zero for beta = 1, where the missing mass is exponentially small.
    """
    v = t ** params.alpha
    total = 0.0
    for k in range(1, terms + 1):
        coef = special.rgamma(1.0 - params.beta * k) / (2 * k - 1)
        total += (-1) ** (k + 1) * coef * (2.0 / v) ** k * n_cut ** (1 - 2 * k)
    return total / math.pi


def donsker_limit(a: float, t: float, params: FracParams) -> float:
    """The n_cut -> infinity value, i.e. K(t, a, 0)."""
    return kernel_quadrature(KernelQuery(t=t, x=a, y=0.0, params=params))


# ---------------------------------------------------------------------------
# Local time
# ---------------------------------------------------------------------------

def local_time_expectation(a: float, T: float, params: FracParams) -> float:
    """E L(a, T) = int_0^T K(t, a, 0) dt.

    With K(t, a, 0) = t^(-alpha/2) K(1, a t^(-alpha/2), 0) the endpoint
    singularity goes into QUADPACK's algebraic weight.
    """
    if T <= 0:
        raise ParameterError(f"T must be positive, got {T}", module=__name__)
    if params.alpha >= 2:
        raise ParameterError("local time needs alpha < 2", module=__name__)

    def integrand(t: float) -> float:
        return unit_kernel(abs(a) * t ** (-params.alpha / 2.0), params.beta) if t > 0 else 0.0

    value, err = integrate.quad(integrand, 0.0, T, weight="alg", wvar=(-params.alpha / 2.0, 0.0),
                                epsabs=1e-13, epsrel=1e-10, limit=400)
    if err > 1e-9:
        raise QuadratureError(f"local time quadrature error {err:.2e}", module=__name__)
    return value


def local_time_expectation_closed(T: float, params: FracParams) -> float:
    """E L(0, T) = (2 / (2 - alpha)) T^(1 - alpha/2) / (sqrt(2) Gamma(1 - beta/2))."""
    return 2.0 / (2.0 - params.alpha) * T ** (1.0 - params.alpha / 2.0) / (
        math.sqrt(2.0) * gamma(1.0 - params.beta / 2.0))


def local_time_mc(a: float, T: float, params: FracParams, n_paths: int, n_steps: int, bandwidth: float,
                  seed: Optional[int] = None, start: float = 0.0, workers: Optional[int] = None,
                  batch_size: Optional[int] = None) -> MCEstimate:
    """Occupation-time estimate of L(a, T) for the process started at ``start``.

    Paths live on t_k = k T / n_steps, k = 1..n_steps; each contributes
    dt * #{k : |X_k - a| < bandwidth} / (2 bandwidth). The interval
    [0, t_1] is not counted, a bias of order dt^(1 - alpha/2).
    """
    if bandwidth <= 0:
        raise ParameterError("bandwidth must be positive", module=__name__)
    if n_steps < MIN_STEPS:
        raise ParameterError(f"n_steps must be at least {MIN_STEPS}, got {n_steps}", module=__name__)
    if T <= 0 or n_paths < 1:
        raise ParameterError("need T > 0 and n_paths >= 1", module=__name__)
    seed, workers, batch_size = _resolve(seed, workers, batch_size, get_settings().path_batch_size)
    dt = T / n_steps
    gram = grey_gram(dt * np.arange(1, n_steps + 1), params.alpha)

    def run(batch: Tuple[int, int]) -> Moments:
        index, count = batch
        ensemble = sample_paths(gram, params.beta, count, seed=derive_seed(seed, index), workers=1,
                                batch_size=count)
        hits = np.count_nonzero(np.abs(start + ensemble.samples - a) < bandwidth, axis=1)
        return Moments.of(hits * dt / (2.0 * bandwidth))

    moments = _run_batches(run, n_paths, batch_size, workers)
    estimate = _estimate(moments, seed, {"alpha": params.alpha, "beta": params.beta, "a": a, "T": T,
                                         "n_steps": float(n_steps), "bandwidth": bandwidth, "start": start})
    logger.info(f"local_time_mc(a={a}, T={T}) = {estimate.value:.5f} +/- {estimate.stderr:.2e}")
    return estimate
