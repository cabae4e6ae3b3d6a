from typing import Any

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import regionsolve.functionals as functionals
from regionsolve.functionals import LinearFunctional, SampledPath


@pytest.fixture
def grid() -> np.ndarray:
    return functionals.uniform_grid(0, 1, 40)


@pytest.mark.parametrize(
    "title,g,want",
    [
        ("integral", LinearFunctional.integral((0, 1)), 1.0),
        ("integral on [2, 5]", LinearFunctional.integral((2, 5)), 3.0),
        ("evaluation", LinearFunctional.evaluation((0, 1), 0.3, 2.0), 2.0),
        ("linear density", LinearFunctional.new((0, 1), density="s"), 0.5),
        ("atoms and density", LinearFunctional.new((0, 1), atoms=[(0, 1), (1, -3)], density="4"), 2.0),
        ("negative", LinearFunctional.new((0, 1), atoms=[(0.5, -2)]), -2.0),
    ],
)
def test_gamma_mass(title: str, g: LinearFunctional, want: float):
    assert np.isclose(want, functionals.gamma_mass(g), rtol=0, atol=1e-12)


@pytest.mark.parametrize(
    "title,g",
    [
        ("antisymmetric density", LinearFunctional.new((0, 1), density="s-0.5")),
        ("cancelling atoms", LinearFunctional.new((0, 1), atoms=[(0, 1), (1, -1)])),
    ],
)
def test_gamma_mass_degenerate(title: str, g: LinearFunctional):
    with pytest.raises(functionals.DegenerateMassError):
        functionals.gamma_mass(g)


@pytest.mark.parametrize(
    "title,interval,atoms,exc",
    [
        ("atom outside", (0, 1), [(1.5, 1)], ValueError),
        ("duplicate atoms", (0, 1), [(0.5, 1), (0.5, 2)], ValueError),
    ],
)
def test_linear_functional_error(title: str, interval: tuple[float, float], atoms: Any, exc: Any):
    with pytest.raises(exc):
        LinearFunctional.new(interval, atoms=atoms)


@pytest.mark.parametrize(
    "title,a,b,intervals",
    [
        ("one interval", 0, 1, 1),
        ("empty interval", 1, 1, 10),
        ("reversed interval", 1, 0, 10),
    ],
)
def test_uniform_grid_error(title: str, a: float, b: float, intervals: int):
    with pytest.raises(functionals.GridError):
        functionals.uniform_grid(a, b, intervals)


def test_sampled_path_not_uniform():
    with pytest.raises(functionals.GridError):
        SampledPath.new([0, 0.1, 0.5, 1], np.zeros(4))


def test_gamma_apply_interval_mismatch(grid: np.ndarray):
    with pytest.raises(functionals.IntervalMismatchError):
        functionals.gamma_apply(LinearFunctional.integral((0, 2)), SampledPath.constant(grid, [1.0]))


@pytest.mark.parametrize(
    "title,g,s,want",
    [
        ("integral", LinearFunctional.integral((0, 1)), 0.25, 0.75),
        ("integral at b", LinearFunctional.integral((0, 1)), 1.0, 0.0),
        ("evaluation at a", LinearFunctional.evaluation((0, 1), 0), 0.0, 1.0),
        ("evaluation at a later", LinearFunctional.evaluation((0, 1), 0), 0.5, 0.0),
        ("evaluation at b", LinearFunctional.evaluation((0, 1), 1), 0.5, 1.0),
        ("quadratic density", LinearFunctional.new((0, 1), density="3*s^2"), 0.5, 0.875),
    ],
)
def test_cumulative_weight(title: str, g: LinearFunctional, s: float, want: float):
    assert np.isclose(want, functionals.cumulative_weight(g, s))


def test_weight_sign_negative(grid: np.ndarray):
    g = LinearFunctional.new((0, 1), atoms=[(0, 2), (1, -1)])
    assert -1.0 == functionals.weight_sign(g, grid)


def test_density_weight_matches_cumulative_weight():
    grid = functionals.uniform_grid(0, 1, 400)
    g = LinearFunctional.new((0, 1), density="exp(s)")
    want = np.array([functionals.cumulative_weight(g, s) for s in grid[1:-1]])
    assert np.allclose(want, functionals.density_weight(g, grid)[1:-1], atol=1e-5)


@pytest.mark.parametrize(
    "title,g,integrand,want",
    [
        ("evaluation at b", LinearFunctional.evaluation((0, 1), 1), lambda t: np.ones_like(t), 1.0),
        ("evaluation at a", LinearFunctional.evaluation((0, 1), 0), lambda t: np.ones_like(t), 0.0),
        ("integral", LinearFunctional.integral((0, 1)), lambda t: np.ones_like(t), 0.5),
        ("integral of linear", LinearFunctional.integral((0, 1)), lambda t: 2 * t, 1 / 3),
    ],
)
def test_theta(title: str, g: LinearFunctional, integrand: Any, want: float):
    grid = functionals.uniform_grid(0, 1, 400)
    got = functionals.theta(g, integrand(grid), grid)
    assert np.allclose(want, got, atol=1e-5)


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from(["1", "s", "exp(-s)", "1-2*s", "cos(3*s)"]),
    st.lists(st.tuples(st.floats(0, 1), st.floats(-2, 2)), max_size=3, unique_by=lambda x: x[0]),
    st.integers(0, 2**32 - 1),
)
def test_theta_fubini(density: str, atoms: list[tuple[float, float]], seed: int):
    grid = functionals.uniform_grid(0, 1, 400)
    g = LinearFunctional.new((0, 1), atoms=atoms, density=density)
    w = np.random.default_rng(seed).uniform(-5, 5, (401, 2))
    want = functionals.theta_direct(g, w, grid)
    got = functionals.theta(g, w, grid)
    assert np.max(np.abs(want - got)) <= 1e-8 * (1 + np.max(np.abs(w)))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=22, max_size=22),
    st.lists(st.floats(-3, 3), min_size=22, max_size=22),
    st.floats(-2, 2),
)
def test_gamma_apply_linear(first: list[float], second: list[float], scale: float):
    grid = functionals.uniform_grid(0, 1, 10)
    g = LinearFunctional.new((0, 1), atoms=[(0.25, 1.5)], density="1+s")
    u = SampledPath.new(grid, np.array(first).reshape(-1, 2))
    v = SampledPath.new(grid, np.array(second).reshape(-1, 2))
    want = functionals.gamma_apply(g, u) + scale * functionals.gamma_apply(g, v)
    got = functionals.gamma_apply(g, u.with_values(u.values + scale * v.values))
    assert np.allclose(want, got, atol=1e-12)


def test_gamma_apply_constant(grid: np.ndarray):
    g = LinearFunctional.new((0, 1), atoms=[(0.5, 2)], density="s")
    u = SampledPath.constant(grid, [1.0, -2.0])
    assert np.allclose([2.5, -5.0], functionals.gamma_apply(g, u))


def test_reflect_functional(grid: np.ndarray):
    g = LinearFunctional.new((0, 1), atoms=[(0.5, -2)], density="-1")
    reflected = functionals.reflect_functional(g, grid)
    assert np.isclose(3.0, functionals.gamma_mass(reflected, grid))
    with pytest.raises(functionals.ReflectionError):
        functionals.reflect_functional(reflected, grid)
