"""Test script for the fractional heat kernel and the Cauchy problem."""

import json
import math

import numpy as np
import pytest
from scipy import special

import heatkernel
import specfun
from errors import AccuracyLossError, GridError, ParameterError
from fraccalc import SampledFunction
from ggbm import FracParams
from heatkernel import (
    KernelMethod,
    KernelQuery,
    cauchy_surface,
    check_initial_data,
    diagonal_value,
    gaussian_kernel,
    kernel_foxh,
    kernel_mass,
    kernel_quadrature,
    kernel_self_similar,
    kernel_series,
    kernel_subordination,
    kernel_table,
    load_table,
    residual_fbm_pde,
    residual_fie,
    save_table,
    solve_cauchy,
    unit_kernel_array,
)
from specfun import fox_h, fox_h_invert, kernel_spec


def query(alpha, beta, t, offset):
    return KernelQuery(t=t, x=offset, y=0.0, params=FracParams(alpha=alpha, beta=beta))


def gaussian_u0(sigma=0.5, width=10.0, step=0.01):
    n = int(round(2 * width / step)) + 1
    return SampledFunction.from_callable(
        lambda x: np.exp(-x * x / (2 * sigma * sigma)) / math.sqrt(2 * math.pi * sigma * sigma), -width, width, n)


# ---------------------------------------------------------------------------
# Kernel evaluators
# ---------------------------------------------------------------------------

def test_kernel_query_requires_positive_time():
    with pytest.raises(ValueError):
        query(0.5, 0.5, 0.0, 1.0)


def test_brownian_diagonal():
    assert kernel_quadrature(query(1.0, 1.0, 1.0, 0.0)) == pytest.approx(1.0 / math.sqrt(2 * math.pi), rel=1e-10)


@pytest.mark.parametrize("evaluate", [kernel_quadrature, kernel_subordination, kernel_foxh, kernel_self_similar])
def test_diagonal_value(evaluate):
    value = evaluate(query(0.5, 0.5, 1.0, 0.0))
    assert value == pytest.approx(1.0 / (math.sqrt(2.0) * math.gamma(0.75)), rel=1e-6)
    assert value == pytest.approx(0.5771, abs=1e-4)


def test_diagonal_value_closed_form():
    assert diagonal_value(2.0, 0.5) == pytest.approx(1.0 / (2.0 * math.gamma(0.75)), rel=1e-14)


def test_kernel_symmetry():
    params = FracParams(alpha=0.7, beta=0.6)
    left = KernelQuery(t=1.3, x=0.4, y=-0.6, params=params)
    right = KernelQuery(t=1.3, x=-0.6, y=0.4, params=params)
    assert kernel_quadrature(left) == kernel_quadrature(right)
    assert kernel_foxh(left) == kernel_foxh(right)


def test_subordination_matches_quadrature():
    q = query(0.5, 0.5, 1.0, 1.0)
    assert kernel_subordination(q) == pytest.approx(kernel_quadrature(q), rel=1e-6)


def test_kernel_series_examples():
    assert kernel_series(0.0, 1.0, 0.5) == pytest.approx(diagonal_value(1.0, 0.5), rel=1e-14)
    assert kernel_series(1.0, 1.0, 1.0) == pytest.approx(0.2419707, abs=1e-7)
    assert kernel_series(1.0, 1.0, 1.0) == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-12)
    assert kernel_series(0.5, 1.0, 0.5) == pytest.approx(kernel_quadrature(query(0.5, 0.5, 1.0, 0.5)), rel=1e-6)


def test_kernel_series_limits():
    with pytest.raises(ParameterError):
        kernel_series(5.0, 1.0, 0.5)
    with pytest.raises(ParameterError):
        kernel_series(1.0, 0.0, 0.5)


def test_foxh_is_the_series():
    for beta in (0.3, 0.5, 0.8):
        for a in (0.3, 1.0, 2.5):
            q = query(0.9, beta, 1.4, a)
            assert kernel_foxh(q) == pytest.approx(kernel_series(a, q.variance, beta), rel=1e-10)


def test_foxh_matches_quadrature():
    q = query(0.5, 0.5, 1.0, 0.8)
    assert kernel_foxh(q) == pytest.approx(kernel_quadrature(q), rel=1e-6)


def test_foxh_inversion_round_trip():
    spec = kernel_spec(0.5)
    assert fox_h_invert(fox_h_invert(spec)) == spec
    assert fox_h(fox_h_invert(fox_h_invert(spec)), 0.7).value == pytest.approx(fox_h(spec, 0.7).value, rel=1e-10)


@pytest.mark.slow
@pytest.mark.parametrize("order", [0.5, 0.75])
@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("offset", [0.0, 0.5, 1.0, 2.0])
def test_three_way_agreement(order, t, offset):
    q = query(order, order, t, offset)
    quadrature = kernel_quadrature(q)
    subordination = kernel_subordination(q)
    foxh = kernel_foxh(q)
    assert subordination == pytest.approx(quadrature, rel=1e-6)
    assert foxh == pytest.approx(quadrature, rel=1e-6)
    assert foxh == pytest.approx(subordination, rel=1e-6)


def test_self_similar_matches_series():
    for beta in (0.25, 0.5, 0.9):
        for offset in (0.0, 0.7, 1.9, 4.0):
            q = query(1.2, beta, 0.8, offset)
            assert kernel_self_similar(q) == pytest.approx(kernel_foxh(q), rel=1e-7)


def test_self_similar_far_field_matches_subordination():
    for beta in (0.3, 0.6):
        q = query(1.0, beta, 1.0, 6.0)
        assert kernel_self_similar(q) == pytest.approx(kernel_subordination(q), rel=1e-6)


@pytest.mark.parametrize("alpha", [0.4, 1.0, 1.6])
def test_gaussian_collapse(alpha):
    for offset in (0.0, 0.5, 2.0, 6.0):
        q = query(alpha, 1.0, 1.7, offset)
        exact = gaussian_kernel(q)
        assert kernel_foxh(q) == pytest.approx(exact, rel=1e-10)
        assert kernel_quadrature(q) == pytest.approx(exact, rel=1e-8, abs=1e-12)
        for evaluate in (kernel_subordination, kernel_self_similar):
            assert evaluate(q) == pytest.approx(exact, rel=1e-10)


def test_gaussian_collapse_does_not_call_the_gaussian(monkeypatch):
    def refuse(q):
        raise AssertionError("Gaussian shortcut taken")

    monkeypatch.setattr(heatkernel, "gaussian_kernel", refuse)
    for offset in (0.0, 1.0, 3.0):
        q = query(1.0, 1.0, 1.0, offset)
        exact = math.exp(-offset * offset / 2.0) / math.sqrt(2.0 * math.pi)
        assert kernel_foxh(q) == pytest.approx(exact, rel=1e-10)
        assert kernel_quadrature(q) == pytest.approx(exact, abs=1e-10)
    print("✅ Fourier and H-series routes reproduce the Gaussian on their own")


@pytest.mark.parametrize("beta, offset", [(0.5, 4.0), (0.5, 8.0), (0.75, 8.0), (0.9, 8.0), (0.9, 10.0)])
def test_foxh_far_from_the_diagonal(beta, offset):
    q = query(0.5, beta, 1.0, offset)
    try:
        value = kernel_foxh(q)
    except AccuracyLossError:
        pytest.fail(f"H-series gave up at beta={beta}, |x-y|={offset}")
    assert value >= 0.0
    assert value == pytest.approx(kernel_subordination(q), rel=1e-6, abs=1e-12)
    assert value < kernel_foxh(query(0.5, beta, 1.0, offset - 1.0))


def test_foxh_raises_when_digits_run_out(monkeypatch):
    monkeypatch.setattr(specfun, "MAX_DIGITS", 20)
    with pytest.raises(AccuracyLossError):
        kernel_foxh(query(0.5, 0.9, 1.0, 10.0))


def test_kernel_is_nonnegative():
    zetas = np.linspace(0.0, 30.0, 301)
    for beta in (0.2, 0.5, 0.8):
        assert np.all(unit_kernel_array(zetas, beta) >= 0.0)
    for offset in (0.5, 3.0, 8.0):
        assert kernel_quadrature(query(0.5, 0.5, 1.0, offset)) > -1e-12


@pytest.mark.parametrize("beta", [0.25, 0.5, 0.75, 1.0])
def test_kernel_mass(beta):
    assert kernel_mass(FracParams(alpha=0.5, beta=beta)) == pytest.approx(1.0, abs=1e-6)


def test_kernel_table_and_files(tmp_path):
    params = FracParams(alpha=0.5, beta=0.5)
    xs = np.linspace(-3.0, 3.0, 121)
    table = kernel_table(params, 1.0, xs)
    assert table.size == 121
    assert table.values[60] == pytest.approx(0.5771, abs=1e-4)
    sidecar = save_table(table, tmp_path / "kernel.csv", {"alpha": 0.5, "beta": 0.5, "t": 1.0})
    assert json.loads(sidecar.read_text())["t"] == 1.0
    assert (tmp_path / "kernel.csv").read_text().splitlines()[0] == "x,value"
    np.testing.assert_allclose(load_table(tmp_path / "kernel.csv").values, table.values, rtol=0, atol=0)


def test_kernel_table_methods_agree():
    params = FracParams(alpha=0.75, beta=0.75)
    xs = np.linspace(-2.0, 2.0, 9)
    reference = kernel_table(params, 0.5, xs, method=KernelMethod.QUADRATURE).values
    for method in (KernelMethod.FOXH, KernelMethod.SELF_SIMILAR):
        np.testing.assert_allclose(kernel_table(params, 0.5, xs, method=method).values, reference, rtol=1e-6)


def test_kernel_table_rejects_ragged_grid():
    with pytest.raises(ParameterError):
        kernel_table(FracParams(alpha=0.5, beta=0.5), 1.0, np.array([0.0, 0.1, 0.3]))


# ---------------------------------------------------------------------------
# Cauchy problem
# ---------------------------------------------------------------------------

def test_check_initial_data():
    report = check_initial_data(gaussian_u0())
    assert report["warnings"] == []
    assert report["l1"] == pytest.approx(1.0, abs=1e-8)
    step = SampledFunction(grid_start=-1.0, grid_step=0.01, values=np.ones(201))
    assert check_initial_data(step)["warnings"]


def test_flat_initial_data_is_preserved():
    u0 = SampledFunction.from_callable(
        lambda x: 0.5 * (special.erf(x + 25.0) - special.erf(x - 25.0)), -40.0, 40.0, 4001)
    xs = np.arange(-5.0, 5.0 + 1e-9, 0.1)
    solution = solve_cauchy(u0, 1.0, xs, FracParams(alpha=0.5, beta=0.5))
    np.testing.assert_allclose(solution.values, 1.0, atol=1e-4)


def test_brownian_heat_semigroup():
    u0 = gaussian_u0(sigma=0.5)
    params = FracParams(alpha=1.0, beta=1.0)
    xs = np.linspace(-3.0, 3.0, 61)
    exact = np.exp(-xs ** 2 / (2 * 1.25)) / math.sqrt(2 * math.pi * 1.25)
    np.testing.assert_allclose(solve_cauchy(u0, 1.0, xs, params).values, exact, atol=1e-8)
    # off the u0 lattice the surface quadrature takes over
    shifted = xs + 0.003
    exact = np.exp(-shifted ** 2 / (2 * 1.25)) / math.sqrt(2 * math.pi * 1.25)
    np.testing.assert_allclose(solve_cauchy(u0, 1.0, shifted, params).values, exact, atol=1e-4)


def test_solution_is_symmetric():
    u0 = gaussian_u0(sigma=0.7)
    xs = np.linspace(-2.0, 2.0, 41)
    values = solve_cauchy(u0, 0.8, xs, FracParams(alpha=0.6, beta=0.4)).values
    np.testing.assert_allclose(values, values[::-1], atol=1e-12)


def test_solve_cauchy_grid_checks():
    u0 = gaussian_u0(step=0.1)
    with pytest.raises(GridError):
        solve_cauchy(u0, 0.01, np.linspace(-1.0, 1.0, 21), FracParams(alpha=1.0, beta=0.5))
    with pytest.raises(ParameterError):
        solve_cauchy(u0, 0.0, np.linspace(-1.0, 1.0, 21), FracParams(alpha=1.0, beta=0.5))


def test_surface_agrees_with_lattice_solution():
    u0 = gaussian_u0()
    params = FracParams(alpha=0.8, beta=0.6)
    xs = np.linspace(-2.0, 2.0, 41)
    lattice = solve_cauchy(u0, 1.0, xs, params).values
    surface = cauchy_surface(u0, params)(1.0, xs)
    np.testing.assert_allclose(surface, lattice, atol=1e-4)
    np.testing.assert_allclose(cauchy_surface(u0, params)(0.0, xs), u0.interp(xs))


def test_residual_fie_classical():
    u0 = gaussian_u0()
    params = FracParams(alpha=1.0, beta=1.0)
    assert residual_fie(cauchy_surface(u0, params), u0, 0.5, 0.0, params) < 1e-4


@pytest.mark.slow
def test_residual_fie_fractional():
    u0 = gaussian_u0()
    params = FracParams(alpha=0.5, beta=0.5)
    assert residual_fie(cauchy_surface(u0, params), u0, 1.0, 0.0, params) < 1e-3


def test_residual_fbm_pde():
    u0 = gaussian_u0()
    params = FracParams(alpha=0.8, beta=1.0)
    assert residual_fbm_pde(cauchy_surface(u0, params), 1.0, 0.0, params.alpha) < 1e-4


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
