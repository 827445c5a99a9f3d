"""mittag-lab command line.

Every computation of the toolkit is a subcommand; tables go to CSV and
single results to JSON, and the same config and seed reproduce the same
bytes. Exit status: 0 on success, 2 on invalid input, 1 on numerical
failure.

    python main.py ml --beta 1 --z 1
    python main.py kernel --alpha 0.5 --beta 0.5 --t 1 --xmin -3 --xmax 3 --n 121 --out k.csv
    python main.py selftest
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError, model_validator
from scipy import integrate

import fraccalc
import ggbm
import heatkernel
import montecarlo
import specfun
from errors import MittagLabError, ParameterError
from fraccalc import SampledFunction, Side
from ggbm import FracParams
from heatkernel import KernelMethod, KernelQuery
from settings import get_settings

load_dotenv()

logger = logging.getLogger(__name__)


class Subcommand(str, Enum):
    ML = "ml"
    MWRIGHT = "mwright"
    FOXH = "foxh"
    FRAC = "frac"
    COV = "cov"
    SIMULATE = "simulate"
    KERNEL = "kernel"
    SOLVE = "solve"
    FK = "fk"
    DONSKER = "donsker"
    LOCTIME = "loctime"
    SELFTEST = "selftest"


REQUIRED: Dict[Subcommand, Tuple[str, ...]] = {
    Subcommand.ML: ("beta", "z"),
    Subcommand.MWRIGHT: ("beta",),
    Subcommand.FOXH: ("kind", "z"),
    Subcommand.FRAC: ("op", "alpha"),
    Subcommand.COV: ("alpha", "beta", "times"),
    Subcommand.SIMULATE: ("alpha", "beta", "paths"),
    Subcommand.KERNEL: ("alpha", "beta", "t"),
    Subcommand.SOLVE: ("alpha", "beta", "t"),
    Subcommand.FK: ("alpha", "beta", "t", "x", "samples"),
    Subcommand.DONSKER: ("alpha", "beta", "t", "a", "n_cut"),
    Subcommand.LOCTIME: ("alpha", "beta", "a", "T"),
    Subcommand.SELFTEST: (),
}


class RunConfig(BaseModel):
    """One CLI invocation: the subcommand and its flag values."""

    subcommand: Subcommand
    params: Dict[str, Any] = {}

    @model_validator(mode="after")
    def _required(self) -> "RunConfig":
        missing = [k for k in REQUIRED[self.subcommand] if self.params.get(k) is None]
        if missing:
            raise ValueError(f"{self.subcommand.value}: missing required parameter(s) {', '.join(missing)}")
        if self.params.get("seed") is None:
            self.params["seed"] = get_settings().default_seed
        return self

    def get(self, key: str, default: Any = None) -> Any:
        value = self.params.get(key)
        return default if value is None else value

    def frac_params(self) -> FracParams:
        return FracParams(alpha=self.params["alpha"], beta=self.params["beta"])


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _number(v: Any) -> str:
    if isinstance(v, complex):
        return repr(v)
    return repr(float(v))


def write_rows(path: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_number(v) for v in row])


def write_json(path: str, payload: Dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n",
                          encoding="utf-8")


def _jsonable(v: Any) -> Any:
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, Enum):
        return v.value
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _grid(config: RunConfig, xmin: float = -5.0, xmax: float = 5.0, n: int = 201) -> np.ndarray:
    n = int(config.get("n", n))
    if n < 2:
        raise ParameterError("--n must be at least 2", module="cli")
    return np.linspace(float(config.get("xmin", xmin)), float(config.get("xmax", xmax)), n)


def _parse_times(text: str) -> List[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ParameterError(f"cannot parse times {text!r}", module="cli") from exc


def _gaussian_u0(config: RunConfig) -> SampledFunction:
    sigma2 = float(config.get("sigma", 0.5)) ** 2
    half = float(config.get("width", 20.0))
    step = float(config.get("step", 0.01))
    n = int(round(2.0 * half / step)) + 1
    return SampledFunction.from_callable(lambda x: np.exp(-x * x / (2.0 * sigma2)), -half, half, n)


def _format(value: Any) -> str:
    if isinstance(value, complex):
        return f"{value.real:.10f}{value.imag:+.10f}j"
    return f"{value:.10f}"


# ---------------------------------------------------------------------------
# Handlers: each returns the one-line summary
# ---------------------------------------------------------------------------

def cmd_ml(config: RunConfig) -> str:
    z: Any = float(config.params["z"])
    if config.get("zi", 0.0):
        z = complex(z, float(config.get("zi")))
    gamma_ = float(config.get("gamma", 1.0))
    tol = config.get("tol")
    result = specfun.mittag_leffler2(float(config.params["beta"]), gamma_, z, tol)
    payload: Dict[str, Any] = {"value": result.value, "method": result.method,
                               "error_estimate": result.error_estimate, "terms_used": result.terms_used}
    if config.get("derivative"):
        payload["derivative"] = specfun.ml_derivative(float(config.params["beta"]), z, tol)
    if config.get("out"):
        write_json(config.params["out"], payload)
    return _format(result.value)


def cmd_mwright(config: RunConfig) -> str:
    beta = float(config.params["beta"])
    if config.get("x") is not None:
        result = specfun.m_wright(beta, float(config.params["x"]), config.get("tol"))
        return _format(result.value)
    xs = _grid(config, 0.0, 5.0)
    values = specfun.m_wright_array(beta, xs, config.get("tol"))
    if config.get("out"):
        write_rows(config.params["out"], ["x", "value"], list(zip(xs, values)))
    return f"M_{beta} on {xs.size} points, mass check {specfun.m_wright_moment_quadrature(beta, 0.0):.10f}"


def _h_spec(config: RunConfig) -> specfun.HFunctionSpec:
    kind = config.params["kind"]
    beta = config.get("beta")
    if kind == "exp":
        spec = specfun.exp_spec()
    elif kind in ("mwright", "kernel"):
        if beta is None:
            raise ParameterError(f"--beta is required for --kind {kind}", module="cli")
        spec = specfun.m_wright_spec(float(beta)) if kind == "mwright" else specfun.kernel_spec(float(beta))
    else:
        raise ParameterError(f"unknown H-function kind {kind!r}", module="cli")
    if config.get("shift") is not None:
        spec = specfun.fox_h_power_shift(spec, float(config.params["shift"]))
    return spec


def cmd_foxh(config: RunConfig) -> str:
    spec = _h_spec(config)
    z = float(config.params["z"])
    if config.get("invert"):
        spec, z = specfun.fox_h_invert(spec), 1.0 / z
    result = specfun.fox_h(spec, z, config.get("tol"))
    if config.get("out"):
        write_json(config.params["out"], {"spec": spec.model_dump(), "z": z, "value": result.value,
                                          "terms_used": result.terms_used})
    return _format(result.value)


FRAC_GRID_OPS = ("rl-integral", "rl-derivative", "marchaud", "caputo", "mh")
FRAC_INDICATOR_OPS = ("rl-integral-indicator", "rl-derivative-indicator", "marchaud-indicator", "mh-indicator")


def cmd_frac(config: RunConfig) -> str:
    op = config.params["op"]
    alpha = float(config.params["alpha"])
    side = Side(config.get("side", "left"))
    xs = _grid(config, -10.0, 10.0, 2001)
    if op in FRAC_INDICATOR_OPS:
        a, b = float(config.get("a", 0.0)), float(config.get("b", 1.0))
        closed = {
            "rl-integral-indicator": fraccalc.rl_integral_indicator,
            "rl-derivative-indicator": fraccalc.rl_derivative_indicator,
            "marchaud-indicator": fraccalc.marchaud_derivative_indicator,
            "mh-indicator": lambda h, a_, b_, s, t: fraccalc.m_h_indicator(h, a_, b_, s, t,
                                                                            bool(config.get("normalized"))),
        }[op]
        rows = [(x, closed(alpha, a, b, side, float(x))) for x in xs if x != a and x != b]
        if config.get("out"):
            write_rows(config.params["out"], ["x", "value"], rows)
        return f"{op} of 1_({a},{b}) on {len(rows)} points"
    if op == "inner":
        f = SampledFunction(grid_start=float(xs[0]), grid_step=float(xs[1] - xs[0]), values=np.exp(-xs * xs))
        return _format(fraccalc.inner_alpha(f, f, alpha))
    if op not in FRAC_GRID_OPS:
        raise ParameterError(f"unknown operator {op!r}", module="cli")
    f = SampledFunction(grid_start=float(xs[0]), grid_step=float(xs[1] - xs[0]), values=np.exp(-xs * xs))
    if op == "rl-integral":
        out = fraccalc.rl_integral_grid(alpha, f, side)
    elif op == "rl-derivative":
        out = fraccalc.rl_derivative_grid(alpha, f, side)
    elif op == "marchaud":
        out = fraccalc.marchaud_derivative_grid(alpha, f, side, config.get("epsilon"))
    elif op == "caputo":
        out = fraccalc.caputo_derivative_grid(alpha, f)
    else:
        out = fraccalc.m_h_grid(alpha, f, side, config.get("epsilon"))
    if config.get("out"):
        out.to_csv(config.params["out"])
    return f"{op} (order {alpha}, {side.value}) of exp(-x^2) on {out.size} points, value at 0: {out.interp(0.0):.10f}"


def cmd_cov(config: RunConfig) -> str:
    params = config.frac_params()
    times = _parse_times(config.params["times"])
    gram = ggbm.grey_gram(times, params.alpha)
    rows = [[t] + [ggbm.covariance(t, s, params) for s in times] for t in times]
    if config.get("out"):
        write_rows(config.params["out"], ["t"] + [repr(s) for s in times], rows)
    summary = f"covariance on {len(times)} times, E B^2 at t={times[-1]}: {rows[-1][-1]:.10f}"
    if config.get("theta"):
        theta = _parse_times(config.params["theta"])
        summary += f", char_fn = {ggbm.char_fn(theta, gram, params.beta):.10f}"
    return summary


def cmd_simulate(config: RunConfig) -> str:
    params = config.frac_params()
    if config.get("times"):
        times = _parse_times(config.params["times"])
    else:
        steps = int(config.get("steps", 100))
        times = list(float(config.get("T", 1.0)) * np.arange(1, steps + 1) / steps)
    gram = ggbm.grey_gram(times, params.alpha)
    ensemble = ggbm.sample_paths(gram, params.beta, int(config.params["paths"]), seed=int(config.params["seed"]))
    if config.get("out"):
        ensemble.to_csv(config.params["out"])
    final = ensemble.samples[:, -1]
    return (f"{ensemble.n_paths} paths on {len(times)} times, seed {ensemble.seed}; "
            f"Var B_T = {np.var(final):.6f} (exact {ggbm.covariance(times[-1], times[-1], params):.6f})")


def cmd_kernel(config: RunConfig) -> str:
    params = config.frac_params()
    t = float(config.params["t"])
    xs = _grid(config, -3.0, 3.0, 121)
    method = KernelMethod(config.get("method", KernelMethod.SELF_SIMILAR.value))
    table = heatkernel.kernel_table(params, t, xs, float(config.get("y", 0.0)), method)
    if config.get("out"):
        heatkernel.save_table(table, config.params["out"], {"alpha": params.alpha, "beta": params.beta, "t": t,
                                                            "y": float(config.get("y", 0.0)), "method": method.value})
    centre = table.values[int(np.argmin(np.abs(xs - float(config.get("y", 0.0)))))]
    return f"{table.size} rows ({method.value}), K at x=y: {centre:.10f}"


def cmd_solve(config: RunConfig) -> str:
    params = config.frac_params()
    t = float(config.params["t"])
    u0 = _gaussian_u0(config)
    solution = heatkernel.solve_cauchy(u0, t, _grid(config, -3.0, 3.0, 121), params)
    if config.get("out"):
        heatkernel.save_table(solution, config.params["out"], {"alpha": params.alpha, "beta": params.beta, "t": t,
                                                               "sigma": float(config.get("sigma", 0.5))})
    summary = f"u(t={t}) on {solution.size} points, u(t,0) = {float(solution.interp(0.0)):.10f}"
    if config.get("check"):
        residual = heatkernel.residual_fie(heatkernel.cauchy_surface(u0, params), u0, t, 0.0, params)
        summary += f", integral-equation residual {residual:.3e}"
    return summary


def cmd_fk(config: RunConfig) -> str:
    params = config.frac_params()
    estimate = montecarlo.fk_solution(_gaussian_u0(config), float(config.params["t"]), float(config.params["x"]),
                                      params, int(config.params["samples"]), seed=int(config.params["seed"]))
    if config.get("out"):
        estimate.to_json(config.params["out"])
    return f"{estimate.value:.10f} +/- {estimate.stderr:.3e} (n={estimate.n_samples}, seed={estimate.seed})"


def cmd_donsker(config: RunConfig) -> str:
    params = config.frac_params()
    a, t, n_cut = float(config.params["a"]), float(config.params["t"]), float(config.params["n_cut"])
    value = montecarlo.donsker_truncation(n_cut, a, t, params)
    limit = montecarlo.donsker_limit(a, t, params)
    if config.get("out"):
        write_json(config.params["out"], {"n_cut": n_cut, "a": a, "t": t, "value": value, "limit": limit})
    return f"{value:.10f} (kernel {limit:.10f}, gap {limit - value:.3e})"


def cmd_loctime(config: RunConfig) -> str:
    params = config.frac_params()
    a, T = float(config.params["a"]), float(config.params["T"])
    expectation = montecarlo.local_time_expectation(a, T, params)
    payload: Dict[str, Any] = {"a": a, "T": T, "expectation": expectation}
    summary = f"E L({a}, {T}) = {expectation:.10f}"
    if config.get("bandwidth") is not None:
        estimate = montecarlo.local_time_mc(a, T, params, int(config.get("paths", 20000)),
                                            int(config.get("steps", 500)), float(config.params["bandwidth"]),
                                            seed=int(config.params["seed"]))
        payload["mc"] = estimate.model_dump()
        summary += f", occupation estimate {estimate.value:.6f} +/- {estimate.stderr:.2e}"
    if config.get("out"):
        write_json(config.params["out"], payload)
    return summary


# ---------------------------------------------------------------------------
# selftest
# ---------------------------------------------------------------------------

OPERATIONS: Tuple[str, ...] = (
    "specfun.gamma", "specfun.mittag_leffler", "specfun.mittag_leffler2", "specfun.ml_derivative",
    "specfun.m_wright", "specfun.m_wright_laplace_residual", "specfun.fox_h", "specfun.fox_h_invert",
    "specfun.fox_h_power_shift", "specfun.ml_integral_identity_residual",
    "fraccalc.k_h", "fraccalc.rl_integral_indicator", "fraccalc.rl_derivative_indicator",
    "fraccalc.m_h_indicator", "fraccalc.rl_integral_grid", "fraccalc.marchaud_derivative_grid",
    "fraccalc.caputo_derivative_interval", "fraccalc.inner_alpha",
    "ggbm.grey_gram", "ggbm.covariance", "ggbm.char_fn", "ggbm.sample_tau", "ggbm.sample_paths",
    "ggbm.marginal_density", "ggbm.even_moment", "ggbm.s_transform_ggbm", "ggbm.s_transform_noise",
    "heatkernel.kernel_quadrature", "heatkernel.kernel_subordination", "heatkernel.kernel_series",
    "heatkernel.kernel_foxh", "heatkernel.solve_cauchy", "heatkernel.residual_fie",
    "montecarlo.fk_solution", "montecarlo.donsker_truncation", "montecarlo.local_time_expectation",
    "montecarlo.local_time_mc",
    "cli.run",
)


Measurement = Tuple[str, float, float]


class SelfCheck(NamedTuple):
    name: str
    covers: Tuple[str, ...]
    run: Callable[[], List[Measurement]]


def _z_score(samples: np.ndarray, target: float) -> float:
    return abs(float(samples.mean()) - target) / (float(samples.std(ddof=1)) / math.sqrt(samples.size))


def _check_gaussian_collapse() -> List[Measurement]:
    params = FracParams(alpha=1.0, beta=1.0)
    out: List[Measurement] = []
    for x in (0.0, 0.5, 1.0, 2.0, 8.0):
        exact = math.exp(-x * x / 2.0) / math.sqrt(2.0 * math.pi)
        q = KernelQuery(t=1.0, x=x, y=0.0, params=params)
        for fn in (heatkernel.kernel_quadrature, heatkernel.kernel_subordination, heatkernel.kernel_foxh):
            out.append((f"{fn.__name__}(x={x})", abs(fn(q) - exact), 1e-10))
    x = ggbm.sample_paths(ggbm.grey_gram([1.0], params.alpha), params.beta, 100_000,
                          seed=get_settings().default_seed).samples[:, 0]
    out.append(("Brownian variance z-score", _z_score(x ** 2, 1.0), 3.0))
    out.append(("Brownian kurtosis z-score", _z_score(x ** 4, 3.0), 3.0))
    return out


def _check_exp() -> List[Measurement]:
    return [
        ("E_1(1) - e", abs(specfun.mittag_leffler(1.0, 1.0).value - math.e), 1e-12),
        ("E_{1,1}(-2) - exp(-2)", abs(specfun.mittag_leffler2(1.0, 1.0, -2.0).value - math.exp(-2.0)), 1e-12),
        ("E_1'(0.5) - exp(0.5)", abs(specfun.ml_derivative(1.0, 0.5) - math.exp(0.5)), 1e-10),
        ("Gamma(-1/2)", abs(specfun.gamma(-0.5) + 2.0 * math.sqrt(math.pi)), 1e-12),
    ]


def _check_laplace() -> List[Measurement]:
    out = [(f"beta={beta}, z={z}", specfun.m_wright_laplace_residual(beta, float(z)), 1e-6)
           for beta in (0.25, 0.5, 0.75, 0.9) for z in range(6)]
    for beta in (0.5, 0.75):
        for delta in (-0.5, 1.0, 2.0):
            exact = specfun.m_wright_moment(beta, delta)
            out.append((f"moment beta={beta}, delta={delta}",
                        abs(specfun.m_wright_moment_quadrature(beta, delta) - exact), 1e-6))
    out.append(("M_1/2(1)", abs(specfun.m_wright(0.5, 1.0).value - math.exp(-0.25) / math.sqrt(math.pi)), 1e-10))
    return out


def _check_identity() -> List[Measurement]:
    return [(f"alpha={alpha}, beta={beta}, lambda={lam}, t={t}",
             specfun.ml_integral_identity_residual(alpha, beta, lam, t), 1e-6)
            for alpha in (0.5, 1.0, 1.5) for beta in (0.3, 0.6, 0.9) for lam in (0.5, 1.0, 2.0) for t in (0.7, 1.0)]


def _check_foxh() -> List[Measurement]:
    spec = specfun.kernel_spec(0.5)
    shifted = specfun.fox_h_power_shift(specfun.exp_spec(), 0.5)
    return [
        ("M-Wright", abs(specfun.fox_h(specfun.m_wright_spec(0.5), 1.3).value - specfun.m_wright(0.5, 1.3).value),
         1e-10),
        ("exp", abs(specfun.fox_h(specfun.exp_spec(), 2.0).value - math.exp(-2.0)), 1e-12),
        ("exp far out (relative)", abs(specfun.fox_h(specfun.exp_spec(), 40.0).value * math.exp(40.0) - 1.0), 1e-9),
        ("power shift", abs(specfun.fox_h(shifted, 2.0).value - math.sqrt(2.0) * math.exp(-2.0)), 1e-12),
        ("inversion", abs(specfun.fox_h(specfun.fox_h_invert(spec), 1.0 / 0.8).value
                          - specfun.fox_h(spec, 0.8).value), 1e-10),
    ]


def _check_kernels() -> List[Measurement]:
    out: List[Measurement] = []
    for order in (0.5, 0.75):
        params = FracParams(alpha=order, beta=order)
        for t in (0.5, 1.0, 2.0):
            for x in (0.0, 0.5, 1.0, 2.0):
                q = KernelQuery(t=t, x=x, y=0.0, params=params)
                values = [heatkernel.kernel_quadrature(q), heatkernel.kernel_subordination(q),
                          heatkernel.kernel_foxh(q), heatkernel.kernel_series(x, q.variance, order)]
                out.append((f"spread at order={order}, t={t}, x={x}", (max(values) - min(values)) / max(values),
                            1e-6))
        out.append((f"mass at order={order}", abs(heatkernel.kernel_mass(params) - 1.0), 1e-6))
    params = FracParams(alpha=0.5, beta=0.9)
    q = KernelQuery(t=1.0, x=10.0, y=0.0, params=params)
    out.append(("far field x=10", abs(heatkernel.kernel_foxh(q) - heatkernel.kernel_subordination(q)), 1e-12))
    return out


def _check_fractional_calculus() -> List[Measurement]:
    alpha = 0.4
    oracle = integrate.quad(lambda s: (2.0 - s) ** (alpha - 1.0), 0.0, 1.0)[0] / specfun.gamma(alpha)
    h = 1e-5
    numeric = (fraccalc.rl_integral_indicator(1 - alpha, 0.0, 1.0, Side.LEFT, 2.0 + h)
               - fraccalc.rl_integral_indicator(1 - alpha, 0.0, 1.0, Side.LEFT, 2.0 - h)) / (2 * h)
    f = SampledFunction.from_callable(lambda x: np.exp(-x * x), -10.0, 10.0, 2001)
    marchaud = fraccalc.marchaud_derivative_grid(alpha, f, Side.LEFT)
    composed = fraccalc.rl_derivative_grid(alpha, fraccalc.rl_integral_grid(alpha, f, Side.LEFT), Side.LEFT)
    caputo = fraccalc.caputo_derivative_interval(alpha, f, 0.5)
    return [
        ("K_1/2", abs(fraccalc.k_h(0.5) - 1.0), 1e-12),
        ("I^a indicator", abs(fraccalc.rl_integral_indicator(alpha, 0.0, 1.0, Side.LEFT, 2.0) - oracle), 1e-8),
        ("D^a indicator", abs(fraccalc.rl_derivative_indicator(alpha, 0.0, 1.0, Side.LEFT, 2.0) - numeric), 1e-6),
        ("M^H indicator", abs(fraccalc.m_h_indicator(0.5 + alpha, 0.0, 1.0, Side.LEFT, 2.0) - oracle), 1e-8),
        ("Caputo vs Marchaud", abs(caputo - float(marchaud.interp(0.5))), 1e-3),
        ("D I f - f", float(np.max(np.abs(composed.values - f.values))), 1e-3),
        ("Plancherel", abs(fraccalc.inner_alpha(f, f, 1.0) - integrate.trapezoid(f.values ** 2, dx=f.grid_step)),
         1e-6),
    ]


def _check_sampler() -> List[Measurement]:
    seed = get_settings().default_seed
    n = 100_000
    out: List[Measurement] = []
    cases = (
        ((0.8, 0.6), [0.5, 1.0], [0.7, -0.4]),
        ((0.8, 0.6), [0.5, 1.0, 1.5], [0.3, -0.5, 0.8]),
        ((1.4, 0.5), [0.5, 1.0, 1.5], [0.3, -0.5, 0.8]),
        ((0.5, 0.9), [0.5, 1.0, 1.5], [0.3, -0.5, 0.8]),
        ((0.5, 0.5), [1.0, 2.0], [1.0, 0.5]),
        ((1.0, 0.75), [0.25, 0.5, 1.0, 2.0], [0.5, 0.5, -0.5, 0.25]),
    )
    for i, ((alpha, beta), times, theta) in enumerate(cases):
        gram = ggbm.grey_gram(times, alpha)
        samples = ggbm.sample_paths(gram, beta, n, seed=seed + i).samples
        out.append((f"char_fn z-score ({alpha}, {beta}, {len(times)} times)",
                    _z_score(np.cos(samples @ np.asarray(theta)), ggbm.char_fn(theta, gram, beta)), 3.0))
    params = FracParams(alpha=0.8, beta=0.6)
    for t, h in ((1.0, 0.5), (2.0, 1.0)):
        paths = ggbm.sample_paths(ggbm.grey_gram([t, t + h], params.alpha), params.beta, n, seed=seed).samples
        expected = ggbm.char_fn([1.3], ggbm.grey_gram([h], params.alpha), params.beta)
        out.append((f"increment z-score (t={t}, h={h})", _z_score(np.cos(1.3 * (paths[:, 1] - paths[:, 0])), expected),
                    3.0))
    gram = ggbm.grey_gram([1.0], params.alpha)
    x = ggbm.sample_paths(gram, params.beta, n, seed=seed).samples[:, 0]
    out.append(("variance z-score", _z_score(x ** 2, ggbm.even_moment(1, 1.0, params)), 3.0))
    half = FracParams(alpha=0.8, beta=0.5)
    x = ggbm.sample_paths(gram, half.beta, n, seed=seed + 1).samples[:, 0]
    out.append(("fourth moment z-score", _z_score(x ** 4, ggbm.even_moment(2, 1.0, half)), 3.0))
    taus = ggbm.sample_tau(params.beta, n, seed=7)
    out.append(("E tau z-score", _z_score(taus, specfun.m_wright_moment(params.beta, 1.0)), 3.0))
    out.append(("second moment", abs(ggbm.even_moment(1, 1.0, params) - ggbm.covariance(1.0, 1.0, params)), 1e-12))
    out.append(("density at 0", abs(ggbm.marginal_density(0.0, 1.0, params)
                                    - heatkernel.diagonal_value(1.0, params.beta)), 1e-8))
    return out


def _check_s_transform() -> List[Measurement]:
    out: List[Measurement] = []
    phi = SampledFunction.from_callable(lambda x: 0.1 * np.exp(-x * x), -10.0, 10.0, 4001)
    h = 1e-2
    for alpha, beta in ((0.8, 0.6), (0.5, 0.5)):
        params = FracParams(alpha=alpha, beta=beta)
        fd = (ggbm.s_transform_ggbm(phi, 1.0 + h, params) - ggbm.s_transform_ggbm(phi, 1.0 - h, params)) / (2 * h)
        exact = ggbm.s_transform_noise(phi, 1.0, params)
        out.append((f"({alpha}, {beta})", abs(fd - exact) / abs(exact), 1e-4))
    return out


def _check_cauchy() -> List[Measurement]:
    params = FracParams(alpha=1.0, beta=1.0)
    u0 = SampledFunction.from_callable(lambda x: np.exp(-x * x), -20.0, 20.0, 4001)
    xs = np.linspace(-2.0, 2.0, 41)
    solution = heatkernel.solve_cauchy(u0, 0.5, xs, params)
    exact = np.exp(-xs * xs / 2.0) / math.sqrt(2.0)
    surface = heatkernel.cauchy_surface(u0, params)
    return [
        ("heat semigroup", float(np.max(np.abs(solution.values - exact))), 1e-4),
        ("integral equation", heatkernel.residual_fie(surface, u0, 0.5, 0.0, params), 1e-4),
    ]


def _check_feynman_kac() -> List[Measurement]:
    seed = get_settings().default_seed
    u0 = SampledFunction.from_callable(lambda x: np.exp(-x * x), -20.0, 20.0, 4001)
    xs = np.linspace(-1.0, 1.0, 5)
    out: List[Measurement] = []
    for alpha, beta in ((0.5, 0.5), (1.0, 0.5), (0.8, 0.6)):
        params = FracParams(alpha=alpha, beta=beta)
        reference = heatkernel.solve_cauchy(u0, 1.0, xs, params).values
        for i, x in enumerate(xs):
            estimate = montecarlo.fk_solution(u0, 1.0, float(x), params, 100_000, seed=seed + i)
            out.append((f"stderr units ({alpha}, {beta}, x={x})",
                        abs(estimate.value - float(reference[i])) / estimate.stderr, 3.0))
    return out


def _check_donsker() -> List[Measurement]:
    params = FracParams(alpha=0.5, beta=0.5)
    values = [montecarlo.donsker_truncation(n, 0.0, 1.0, params) for n in (5.0, 10.0, 20.0, 40.0, 80.0)]
    gaps = np.abs(np.diff(values))
    return [
        ("n_cut=50, a=1", abs(montecarlo.donsker_truncation(50.0, 1.0, 1.0, params)
                              - montecarlo.donsker_limit(1.0, 1.0, params)), 1e-3),
        ("n_cut=0", abs(montecarlo.donsker_truncation(0.0, 1.0, 1.0, params)), 0.0),
        ("non-shrinking gaps over n_cut=5..80", float(np.count_nonzero(np.diff(gaps) >= 0)), 0.0),
    ]


def _check_local_time() -> List[Measurement]:
    brownian = montecarlo.local_time_expectation(0.0, 1.0, FracParams(alpha=1.0, beta=1.0))
    params = FracParams(alpha=0.5, beta=0.5)
    expected = montecarlo.local_time_expectation(0.5, 1.0, params)
    estimate = montecarlo.local_time_mc(0.5, 1.0, params, 20_000, 500, 0.05, seed=get_settings().default_seed)
    return [
        ("Brownian", abs(brownian - math.sqrt(2.0 / math.pi)), 1e-8),
        ("occupation (relative)", abs(estimate.value - expected) / expected, 0.05),
    ]


SELFTESTS: Tuple[SelfCheck, ...] = (
    SelfCheck("gaussian-collapse", ("heatkernel.kernel_quadrature", "heatkernel.kernel_subordination",
                                    "heatkernel.kernel_foxh"), _check_gaussian_collapse),
    SelfCheck("exp-limits", ("specfun.gamma", "specfun.mittag_leffler", "specfun.mittag_leffler2",
                             "specfun.ml_derivative"), _check_exp),
    SelfCheck("laplace-identity", ("specfun.m_wright", "specfun.m_wright_laplace_residual"), _check_laplace),
    SelfCheck("integral-identity", ("specfun.ml_integral_identity_residual",), _check_identity),
    SelfCheck("h-function", ("specfun.fox_h", "specfun.fox_h_invert", "specfun.fox_h_power_shift"), _check_foxh),
    SelfCheck("kernel-agreement", ("heatkernel.kernel_quadrature", "heatkernel.kernel_subordination",
                                   "heatkernel.kernel_foxh", "heatkernel.kernel_series"), _check_kernels),
    SelfCheck("fractional-calculus", ("fraccalc.k_h", "fraccalc.rl_integral_indicator",
                                      "fraccalc.rl_derivative_indicator", "fraccalc.m_h_indicator",
                                      "fraccalc.rl_integral_grid", "fraccalc.marchaud_derivative_grid",
                                      "fraccalc.caputo_derivative_interval", "fraccalc.inner_alpha"),
              _check_fractional_calculus),
    SelfCheck("sampler", ("ggbm.grey_gram", "ggbm.covariance", "ggbm.char_fn", "ggbm.sample_tau",
                          "ggbm.sample_paths", "ggbm.marginal_density", "ggbm.even_moment"), _check_sampler),
    SelfCheck("s-transform", ("ggbm.s_transform_ggbm", "ggbm.s_transform_noise"), _check_s_transform),
    SelfCheck("cauchy-problem", ("heatkernel.solve_cauchy", "heatkernel.residual_fie"), _check_cauchy),
    SelfCheck("feynman-kac", ("montecarlo.fk_solution",), _check_feynman_kac),
    SelfCheck("donsker", ("montecarlo.donsker_truncation",), _check_donsker),
    SelfCheck("local-time", ("montecarlo.local_time_expectation", "montecarlo.local_time_mc"), _check_local_time),
)


def uncovered_operations() -> List[str]:
    covered = {op for check in SELFTESTS for op in check.covers} | {"cli.run"}
    return [op for op in OPERATIONS if op not in covered]


class SelftestFailure(MittagLabError):
    """At least one selftest check failed."""


def cmd_selftest(config: RunConfig) -> str:
    results: List[Dict[str, Any]] = []
    failures = 0
    missing = uncovered_operations()
    if missing:
        failures += 1
        print(f"❌ manifest: operations without a check: {', '.join(missing)}")
    for check in SELFTESTS:
        started = time.perf_counter()
        try:
            measurements = check.run()
            bad = [m for m in measurements if not m[1] <= m[2]]
            passed = not bad
            worst = bad[0] if bad else max(measurements, key=lambda m: m[1] / m[2] if m[2] else m[1])
            detail = f"{worst[0]}: {worst[1]:.3e} {'<=' if passed else '>'} {worst[2]:.0e}"
        except MittagLabError as exc:
            measurements, passed, detail = [], False, str(exc)
        elapsed = time.perf_counter() - started
        failures += 0 if passed else 1
        print(f"{'✅' if passed else '❌'} {check.name}: {detail} ({elapsed:.1f}s)")
        results.append({"name": check.name, "passed": passed, "covers": list(check.covers),
                        "measurements": [{"label": m[0], "measured": m[1], "tolerance": m[2]} for m in measurements]})
    if config.get("out"):
        write_json(config.params["out"], {"checks": results, "uncovered": missing})
    if failures:
        raise SelftestFailure(f"{failures} of {len(SELFTESTS)} checks failed")
    return f"all {len(SELFTESTS)} checks passed, {len(OPERATIONS)} operations covered"


HANDLERS: Dict[Subcommand, Callable[[RunConfig], str]] = {
    Subcommand.ML: cmd_ml,
    Subcommand.MWRIGHT: cmd_mwright,
    Subcommand.FOXH: cmd_foxh,
    Subcommand.FRAC: cmd_frac,
    Subcommand.COV: cmd_cov,
    Subcommand.SIMULATE: cmd_simulate,
    Subcommand.KERNEL: cmd_kernel,
    Subcommand.SOLVE: cmd_solve,
    Subcommand.FK: cmd_fk,
    Subcommand.DONSKER: cmd_donsker,
    Subcommand.LOCTIME: cmd_loctime,
    Subcommand.SELFTEST: cmd_selftest,
}


def run(config: RunConfig) -> int:
    """Execute one subcommand and print its summary line.

    Returns:
        0 on success, 2 for invalid parameters, 1 for numerical failures
    """
    try:
        summary = HANDLERS[config.subcommand](config)
    except (ParameterError, ValidationError) as exc:
        logger.error(f"{config.subcommand.value}: invalid input: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MittagLabError as exc:
        logger.error(f"{config.subcommand.value} failed: {exc}", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="RNG seed (default: MITTAG_DEFAULT_SEED)")
    common.add_argument("--tol", type=float, help="Series tolerance")
    common.add_argument("--out", help="Output file (CSV for tables, JSON for single results)")

    orders = argparse.ArgumentParser(add_help=False)
    orders.add_argument("--alpha", type=float)
    orders.add_argument("--beta", type=float)

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--xmin", type=float)
    grid.add_argument("--xmax", type=float)
    grid.add_argument("--n", type=int)

    u0 = argparse.ArgumentParser(add_help=False)
    u0.add_argument("--sigma", type=float, help="Standard deviation of the Gaussian initial datum (default 0.5)")
    u0.add_argument("--width", type=float, help="Half-width of the initial-datum grid (default 20)")
    u0.add_argument("--step", type=float, help="Step of the initial-datum grid (default 0.01)")

    parser = argparse.ArgumentParser(prog="mittag-lab", description="Mittag-Leffler analysis toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("ml", parents=[common], help="Mittag-Leffler function E_{beta,gamma}(z)")
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--z", type=float)
    p.add_argument("--zi", type=float, help="Imaginary part of z")
    p.add_argument("--derivative", action="store_true")

    p = sub.add_parser("mwright", parents=[common, grid], help="M-Wright function")
    p.add_argument("--beta", type=float)
    p.add_argument("--x", type=float)

    p = sub.add_parser("foxh", parents=[common], help="Fox H-function of a pinned parameter set")
    p.add_argument("--kind", choices=["exp", "mwright", "kernel"])
    p.add_argument("--beta", type=float)
    p.add_argument("--z", type=float)
    p.add_argument("--shift", type=float, help="Multiply by z^shift")
    p.add_argument("--invert", action="store_true", help="Evaluate the inverted spec at 1/z")

    p = sub.add_parser("frac", parents=[common, grid], help="Fractional operators")
    p.add_argument("--op", choices=list(FRAC_GRID_OPS) + list(FRAC_INDICATOR_OPS) + ["inner"])
    p.add_argument("--alpha", type=float, help="Order (H for mh operators)")
    p.add_argument("--side", choices=[s.value for s in Side])
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--normalized", action="store_true")

    p = sub.add_parser("cov", parents=[common, orders], help="ggBm covariance matrix")
    p.add_argument("--times", help="Comma-separated increasing times")
    p.add_argument("--theta", help="Comma-separated vector for the characteristic function")

    p = sub.add_parser("simulate", parents=[common, orders], help="Sample ggBm paths")
    p.add_argument("--times")
    p.add_argument("--T", dest="T", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)

    p = sub.add_parser("kernel", parents=[common, orders, grid], help="Heat kernel table")
    p.add_argument("--t", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--method", choices=[m.value for m in KernelMethod])

    p = sub.add_parser("solve", parents=[common, orders, grid, u0], help="Cauchy problem by convolution")
    p.add_argument("--t", type=float)
    p.add_argument("--check", action="store_true", help="Also report the integral-equation residual at x=0")

    p = sub.add_parser("fk", parents=[common, orders, u0], help="Feynman-Kac Monte Carlo")
    p.add_argument("--t", type=float)
    p.add_argument("--x", type=float)
    p.add_argument("--samples", type=int)

    p = sub.add_parser("donsker", parents=[common, orders], help="Truncated Donsker delta expectation")
    p.add_argument("--t", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--n-cut", dest="n_cut", type=float)

    p = sub.add_parser("loctime", parents=[common, orders], help="Local time expectation and estimate")
    p.add_argument("--a", type=float)
    p.add_argument("--T", dest="T", type=float)
    p.add_argument("--paths", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--bandwidth", type=float, help="Occupation window half-width; enables the estimate")

    sub.add_parser("selftest", parents=[common], help="Run the acceptance checks")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    logging.basicConfig(level=getattr(logging, settings.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = vars(build_parser().parse_args(argv))
    subcommand = args.pop("subcommand")
    try:
        params = {k: v for k, v in args.items() if v is not None and v is not False}
        config = RunConfig(subcommand=subcommand, params=params)
    except ValidationError as exc:
        print(f"error: {exc.errors()[0]['msg']}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
