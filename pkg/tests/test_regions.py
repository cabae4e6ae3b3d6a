from typing import Any

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import regionsolve.regions as regions
from regionsolve.ast import parse_expression
from regionsolve.regions import Ball, Box, Halfspace, Intersection, Region, Sublevel


def example_region() -> Region:
    return Region(interval=(0, 1), dimension=2, shape=Ball(center=np.zeros(3), radius=2))


def tube_region() -> Region:
    return Region(interval=(0, 1), dimension=2, shape=Ball(center=np.zeros(2), radius=1, tube=True))


def box_region() -> Region:
    return Region(interval=(0, 1), dimension=2, shape=Box(lo=np.array([0, -1, -1.0]), hi=np.array([1, 1, 1.0])))


def capped_region() -> Region:
    shape = Intersection(
        parts=(
            Ball(center=np.zeros(2), radius=1.5, tube=True),
            Halfspace(normal=np.array([0, 1, 1.0]), offset=1),
        )
    )
    return Region(interval=(0, 1), dimension=2, shape=shape)


@pytest.mark.parametrize(
    "title,region,q,want",
    [
        ("ball outside", example_region(), [0, 3, 0], [0, 2, 0]),
        ("ball inside", example_region(), [0.5, 0, 0.5], [0.5, 0, 0.5]),
        ("box outside", box_region(), [0.5, 2, 0], [0.5, 1, 0]),
        ("box corner", box_region(), [0.5, 2, -3], [0.5, 1, -1]),
        ("tube beyond interval", tube_region(), [2, 0, 0], [1, 0, 0]),
        ("tube beyond interval and radius", tube_region(), [-1, 2, 0], [0, 1, 0]),
        ("halfspace cap", capped_region(), [0.5, 1, 1], [0.5, 0.5, 0.5]),
    ],
)
def test_project_convex(title: str, region: Region, q: list[float], want: list[float]):
    assert np.allclose(want, regions.project_convex(region, np.array(q, dtype=float)), atol=1e-8)


@pytest.mark.parametrize(
    "title,region,q,want",
    [
        ("ball outside", example_region(), [0, 3, 0], 1.0),
        ("ball inside", example_region(), [0, 1, 0], 0.0),
        ("box", box_region(), [0.5, 2, 0], 1.0),
        ("tube beyond interval", tube_region(), [3, 0, 0], 2.0),
    ],
)
def test_distance_to_region(title: str, region: Region, q: list[float], want: float):
    assert np.isclose(want, regions.distance_to_region(region, q), atol=1e-8)


def test_sublevel_distance():
    shape = Sublevel(h=parse_expression("x1^2+x2^2-1", 2), bound=2)
    region = Region(interval=(0, 1), dimension=2, shape=shape)
    assert np.isclose(1.0, regions.distance_to_region(region, [0.5, 2, 0]), atol=1e-4)
    assert 0.0 == regions.distance_to_region(region, [0.5, 0.5, 0])


@pytest.mark.parametrize(
    "title,build,exc",
    [
        (
            "unbounded",
            lambda: Region(interval=(0, 1), dimension=1, shape=Halfspace(normal=np.array([0, 1.0]), offset=0)),
            regions.RegionError,
        ),
        ("empty intersection", lambda: Intersection(parts=()), regions.RegionError),
        (
            "non-convex part",
            lambda: Intersection(parts=(Sublevel(h=parse_expression("x1", 1), bound=1),)),
            regions.NonConvexShapeError,
        ),
    ],
)
def test_region_error(title: str, build: Any, exc: Any):
    with pytest.raises(exc):
        build()


def test_projection_of_sublevel():
    shape = Sublevel(h=parse_expression("x1", 1), bound=1)
    with pytest.raises(regions.NonConvexShapeError):
        regions.project_convex(shape, np.zeros(2))


points = st.lists(st.floats(-5, 5), min_size=3, max_size=3).map(np.array)


@settings(max_examples=50, deadline=None)
@given(points, points)
def test_projection_properties(first: np.ndarray, second: np.ndarray):
    region = capped_region()
    p = regions.project_convex(region, first)
    q = regions.project_convex(region, second)
    assert region.contains(p[0], p[1:]) or np.isclose(0, regions.distance_to_region(region, p), atol=1e-8)
    assert np.allclose(p, regions.project_convex(region, p), atol=1e-8)
    assert np.linalg.norm(p - q) <= np.linalg.norm(first - second) + 1e-8


def test_reflect_region():
    region = box_region().reflect()
    assert region.contains(0.5, [0.5, -0.5])
    region = Region(interval=(0, 1), dimension=1, shape=Box(lo=np.array([0, 1.0]), hi=np.array([1, 2.0])))
    assert region.reflect().contains(0.5, [-1.5])
    assert not region.reflect().contains(0.5, [1.5])


def random_convex_region(rng: np.random.Generator, kind: int) -> Region:
    n = int(rng.integers(1, 4))
    match kind:
        case 0:
            shape: regions.Shape = Ball(center=rng.uniform(-1, 1, n), radius=float(rng.uniform(0.5, 2)), tube=True)
        case 1:
            lo = np.concatenate([[-1.0], rng.uniform(-2, 0, n)])
            hi = np.concatenate([[2.0], lo[1:] + rng.uniform(0.3, 2, n)])
            shape = Box(lo=lo, hi=hi)
        case 2:
            center = np.concatenate([[0.5], rng.uniform(-1, 1, n)])
            shape = Ball(center=center, radius=float(rng.uniform(1, 2)))
        case 3:
            center = rng.uniform(-1, 1, n)
            normal = np.concatenate([[0.0], rng.normal(size=n)])
            offset = float(normal[1:] @ center + rng.uniform(0, 0.5))
            ball = Ball(center=center, radius=float(rng.uniform(0.5, 2)), tube=True)
            shape = Intersection(parts=(ball, Halfspace(normal=normal, offset=offset)))
        case _:
            lo = np.concatenate([[-1.0], rng.uniform(-2, 0, n)])
            hi = np.concatenate([[2.0], lo[1:] + rng.uniform(0.5, 2, n)])
            center = np.concatenate([[0.5], (lo[1:] + hi[1:]) / 2])
            shape = Intersection(parts=(Box(lo=lo, hi=hi), Ball(center=center, radius=float(rng.uniform(1, 2)))))
    return Region(interval=(0, 1), dimension=n, shape=shape)


@pytest.mark.parametrize("seed", range(20))
def test_constructed_pair_membership(seed: int):
    region = random_convex_region(np.random.default_rng(seed), seed % 5)
    pair = regions.construct_admissible_pair(region, grid=np.linspace(0, 1, 11))
    regions.check_membership(region, pair, 1024, seed)
    t, x = pair.samples(512, seed)
    p1, p2 = pair.p(t, x)
    assert np.array_equal(t, p1)
    assert np.max(np.linalg.norm(p2, axis=-1)) <= pair.p2_bound + 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_constructed_pair_gradients(seed: int):
    region = random_convex_region(np.random.default_rng(seed), seed % 5)
    pair = regions.construct_admissible_pair(region, grid=np.linspace(0, 1, 11))
    t, x = pair.samples(512, seed)
    grad = pair.grad_x(t, x)
    _, p2 = pair.p(t, x)
    assert np.allclose(-np.sum(grad**2, axis=-1), np.sum(grad * (p2 - x), axis=-1), rtol=0, atol=1e-8)
    size = np.linalg.norm(x, axis=-1)
    away = (
        (np.abs(region.slice_margin(t, x)) > 1e-3)
        & (np.abs(size - pair.radius) > 1e-3)
        & (np.abs(size - pair.radius - 1) > 1e-3)
    )
    dt, dx = regions.central_difference(pair.h, t[away], x[away])
    assert np.max(np.abs(dx - grad[away]), initial=0.0) <= 1e-5
    assert np.max(np.abs(dt - pair.dh_dt(t[away], x[away])), initial=0.0) <= 1e-5


@pytest.mark.parametrize(
    "title,x,h,grad",
    [
        ("outside D", [3, 0], 0.5, [1, 0]),
        ("inside R", [1, 0], 0.0, [0, 0]),
        ("between C and D", [2.5, 0], 0.171875, None),
    ],
)
def test_constructed_pair_closed_form(title: str, x: list[float], h: float, grad: list[float] | None):
    pair = regions.construct_admissible_pair(example_region(), grid=np.linspace(0, 1, 5))
    x_ = np.array(x, dtype=float)
    assert np.isclose(h, pair.h(0.0, x_))
    if grad is not None:
        assert np.allclose(grad, pair.grad_x(0.0, x_))
        assert np.allclose(x_ - np.array(grad), pair.p2(0.0, x_))


def test_constructed_pair_gradient_matches_differences():
    pair = regions.construct_admissible_pair(example_region(), grid=np.linspace(0, 1, 5))
    t, x = pair.samples(256, 3)
    dt, dx = regions.central_difference(pair.h, t, x)
    assert np.allclose(dx, pair.grad_x(t, x), atol=1e-5)
    assert np.allclose(dt, pair.dh_dt(t, x), atol=1e-5)


def test_distance_pair_closed_form():
    pair = regions.pair_from_user(example_region(), "half_squared_distance", samples=512)
    assert np.isclose(0.5, pair.h(0.0, np.array([3.0, 0])))
    assert np.allclose([1, 0], pair.grad_x(0.0, np.array([3.0, 0])))
    p1, p2 = pair.p(0.0, np.array([3.0, 0]))
    assert np.isclose(0, p1)
    assert np.allclose([2, 0], p2)
    assert 2.0 == pair.p2_bound


def test_empty_slice():
    region = Region(interval=(0, 1), dimension=1, shape=Ball(center=np.zeros(2), radius=0.5))
    with pytest.raises(regions.EmptySliceError):
        regions.construct_admissible_pair(region, grid=np.linspace(0, 1, 3))


@pytest.mark.parametrize(
    "title,h,exc",
    [
        ("ignores time", "x1^2+x2^2-4", regions.PairConsistencyError),
        ("consistent", "t^2+x1^2+x2^2-4", None),
        ("not evaluable", "log(x1)", regions.PairConsistencyError),
    ],
)
def test_pair_from_user(title: str, h: str, exc: Any):
    region = example_region()
    e = parse_expression(h, 2)
    if exc is not None:
        with pytest.raises(exc):
            regions.pair_from_user(region, e, samples=2048)
        return
    pair = regions.pair_from_user(region, e, samples=2048)
    assert "user" == pair.provenance


def test_reflected_pair():
    pair = regions.pair_from_user(box_region(), "half_squared_distance", samples=256)
    reflected = regions.ReflectedPair(base=pair)
    x = np.array([[2.0, 0.5], [-3.0, 0.0]])
    assert np.allclose(pair.h(0.5, -x), reflected.h(0.5, x))
    assert np.allclose(-pair.grad_x(0.5, -x), reflected.grad_x(0.5, x))


def test_rescale_pair():
    pair = regions.pair_from_user(example_region(), "half_squared_distance", samples=256)
    with pytest.raises(regions.ScalingError):
        regions.rescale_pair(pair, regions.Scaling(value=lambda t: 1 - 2 * np.asarray(t), derivative=lambda t: -2))
    scaled = regions.rescale_pair(pair, regions.Scaling.constant(3))
    x = np.array([3.0, 0])
    assert np.isclose(1.5, scaled.h(0.0, x))
    assert np.allclose([3, 0], scaled.grad_x(0.0, x))


def test_sum_pairs():
    region = example_region()
    first = regions.pair_from_user(region, "half_squared_distance", samples=256)
    double = regions.sum_pairs(first, first)
    assert np.isclose(1.0, double.h(0.0, np.array([3.0, 0])))
    second = regions.construct_admissible_pair(region, grid=np.linspace(0, 1, 5))
    with pytest.raises(regions.PairConsistencyError):
        regions.sum_pairs(first, second)


def test_build_hhat():
    pair = regions.pair_from_user(example_region(), "half_squared_distance", samples=256)
    epsilon, delta, t0 = 0.1, 0.2, 0.5
    hhat = regions.build_hhat(pair, epsilon, delta, t0, count=1024)
    x = np.array([3.0, 0])
    assert np.isclose(pair.h(0.1, x), hhat.h(0.1, x))
    assert hhat.h(t0, x) > pair.h(t0, x)
    assert isinstance(hhat, regions.ScaledPair)
    grid = np.linspace(0, 1, 2001)
    assert np.max(np.abs(hhat.beta.derivative(grid))) * pair.sup_h(1024) < epsilon


def test_build_hhat_large_h():
    steep = regions.ExpressionPair(
        h_expression=parse_expression("1e7*(t^2+x1^2+x2^2-4)", 2), interval=(0, 1), dimension=2, radius=2
    )
    x = np.array([[3.0, 0], [0.5, 0.5]])
    hhat = regions.build_hhat(steep, 0.1, 0.2, 0.5, count=1024)
    assert np.array_equal(steep.h(0.0, x), hhat.h(0.0, x))
    assert np.array_equal(steep.h(1.0, x), hhat.h(1.0, x))
    bounded = regions.build_hhat(steep, 0.1, 0.2, 0.5, count=1024, bounded=True)
    scale = steep.sup_h(1024)
    assert np.allclose(steep.h(0.0, x) / scale, bounded.h(0.0, x))
    assert np.max(np.abs(bounded.h(0.0, x))) <= 1


@pytest.mark.parametrize(
    "title,epsilon,delta,t0",
    [
        ("window leaves the interval", 0.1, 0.5, 0.2),
        ("zero epsilon", 0, 0.1, 0.5),
        ("zero delta", 0.1, 0, 0.5),
    ],
)
def test_build_hhat_error(title: str, epsilon: float, delta: float, t0: float):
    pair = regions.pair_from_user(example_region(), "half_squared_distance", samples=256)
    with pytest.raises(regions.ScalingError):
        regions.build_hhat(pair, epsilon, delta, t0)
