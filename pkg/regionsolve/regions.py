"""
Provides compact regions R ⊂ I×ℝⁿ and their admissible pairs (h, p).

Points of I×ℝⁿ are arrays q = (t, x) with time on the first coordinate of the last axis.
Every evaluator is vectorized over the leading axes.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import numpy.typing as npt
from scipy.optimize import minimize
from scipy.stats import qmc

from regionsolve.ast import Expression
from regionsolve.eval import EvalError, eval_at

Array = npt.NDArray[np.float64]

CONTAINS_TOLERANCE = 1e-12
MEMBERSHIP_TOLERANCE = 1e-9
DYKSTRA_TOLERANCE = 1e-13
DYKSTRA_ITERATIONS = 20000
FD_STEP = 1e-6
MULTISTARTS = 20
WORKING_MARGIN = 3.0
INTERIOR_MARGIN = 1e-6
SHELL_WIDTH = 1e-3


class RegionError(Exception):
    """Raised when a region is malformed or unbounded."""


class NonConvexShapeError(RegionError):
    """Raised when a projection is requested on a non-convex shape."""


class EmptySliceError(RegionError):
    """Raised when a time slice R_t is empty."""


class PairConsistencyError(Exception):
    """Raised when h disagrees with region membership."""


class ScalingError(Exception):
    """Raised when a scaling function is not positive or a bump window does not fit."""


def join(t: Any, x: Any) -> Array:
    x = np.asarray(x, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    return np.concatenate([t[..., None], x], axis=-1)


def split(q: Array) -> tuple[Array, Array]:
    return q[..., 0], q[..., 1:]


def norm(x: Array) -> Array:
    return np.linalg.norm(x, axis=-1)


def ball_projection(center: Array, radius: float, q: Array) -> Array:
    """Nearest point of B[center, radius]."""
    y = q - center
    n = norm(y)
    scale = np.where(n <= radius, 1.0, radius / np.where(n > 0, n, 1.0))
    return center + y * scale[..., None]


def dykstra(projections: list[Callable[[Array], Array]], q: Array) -> Array:
    """Projection onto an intersection of convex sets from the projections onto each set."""
    x = np.array(q, dtype=float)
    increments = [np.zeros_like(x) for _ in projections]
    for i in range(DYKSTRA_ITERATIONS):
        previous = x
        for k, project in enumerate(projections):
            y = project(x + increments[k])
            increments[k] = x + increments[k] - y
            x = y
        if np.max(np.abs(x - previous), initial=0.0) <= DYKSTRA_TOLERANCE:
            logging.debug("[regions] dykstra converged after %d sweeps", i + 1)
            return x
    logging.warning("[regions] dykstra stopped after %d sweeps", DYKSTRA_ITERATIONS)
    return x


class Shape(ABC):
    """A closed subset of ℝ^{n+1}."""

    convex: bool = True

    @abstractmethod
    def contains(self, q: Array) -> npt.NDArray[np.bool_]:
        """Membership of points."""

    @abstractmethod
    def project(self, q: Array) -> Array:
        """Nearest points of the shape, convex shapes only."""

    @abstractmethod
    def slice_margin(self, t: Array, x: Array) -> Array:
        """Non-positive exactly on the slice at time `t`; minus the distance to the slice boundary inside for
        convex shapes."""

    @abstractmethod
    def state_bound(self, interval: tuple[float, float]) -> float | None:
        """Upper bound of ‖x‖ over the shape within the time interval, None when unbounded."""

    @abstractmethod
    def slice_hint(self, t: float, dimension: int) -> Array:
        """A state likely to be deep inside the slice at time `t`."""

    @abstractmethod
    def mirrored(self) -> "Shape":
        """The image under (t, x) -> (t, -x)."""


@dataclass(frozen=True, eq=False)
class Ball(Shape):
    """
    Closed ball.

    {"ball": {"center": [t, x1, .., xn], "radius": r}}  a space-time ball
    {"ball": {"center": [x1, .., xn], "radius": r}}     the tube I×B[center, r]
    """

    center: Array
    radius: float
    tube: bool = False

    def __axes(self, q: Array) -> Array:
        return q[..., 1:] if self.tube else q

    def contains(self, q: Array) -> npt.NDArray[np.bool_]:
        return norm(self.__axes(q) - self.center) <= self.radius + CONTAINS_TOLERANCE

    def project(self, q: Array) -> Array:
        if self.tube:
            t, x = split(q)
            return join(t, ball_projection(self.center, self.radius, x))
        return ball_projection(self.center, self.radius, q)

    def slice_radius(self, t: Array) -> Array:
        if self.tube:
            return np.full(np.shape(t), self.radius)
        squared = self.radius**2 - (np.asarray(t) - self.center[0]) ** 2
        return np.sqrt(np.maximum(squared, 0.0))

    def slice_margin(self, t: Array, x: Array) -> Array:
        cx = self.center if self.tube else self.center[1:]
        distance = norm(x - cx)
        if self.tube:
            return distance - self.radius
        gap = np.abs(np.asarray(t) - self.center[0]) - self.radius
        return np.where(gap > 0, gap + distance, distance - self.slice_radius(t))

    def state_bound(self, interval: tuple[float, float]) -> float | None:
        if self.tube:
            return float(np.linalg.norm(self.center) + self.radius)
        a, b = interval
        gap = max(0.0, a - self.center[0], self.center[0] - b)
        return float(np.linalg.norm(self.center[1:]) + np.sqrt(max(self.radius**2 - gap**2, 0.0)))

    def slice_hint(self, t: float, dimension: int) -> Array:
        return np.array(self.center if self.tube else self.center[1:], dtype=float)

    def mirrored(self) -> Shape:
        center = -self.center if self.tube else np.concatenate([self.center[:1], -self.center[1:]])
        return Ball(center=center, radius=self.radius, tube=self.tube)


@dataclass(frozen=True, eq=False)
class Box(Shape):
    """
    Closed box lo ≤ q ≤ hi.

    {"box": {"lo": [t, x1, .., xn], "hi": [t, x1, .., xn]}}
    """

    lo: Array
    hi: Array

    def contains(self, q: Array) -> npt.NDArray[np.bool_]:
        return np.all((q >= self.lo - CONTAINS_TOLERANCE) & (q <= self.hi + CONTAINS_TOLERANCE), axis=-1)

    def project(self, q: Array) -> Array:
        return np.clip(q, self.lo, self.hi)

    def slice_margin(self, t: Array, x: Array) -> Array:
        t = np.asarray(t)
        gap = np.maximum(self.lo[0] - t, t - self.hi[0])
        inside = np.max(np.maximum(self.lo[1:] - x, x - self.hi[1:]), axis=-1)
        return np.where(gap > 0, gap + np.maximum(inside, 0.0), inside)

    def state_bound(self, interval: tuple[float, float]) -> float | None:
        return float(np.linalg.norm(np.maximum(np.abs(self.lo[1:]), np.abs(self.hi[1:]))))

    def slice_hint(self, t: float, dimension: int) -> Array:
        return (self.lo[1:] + self.hi[1:]) / 2

    def mirrored(self) -> Shape:
        lo = np.concatenate([self.lo[:1], -self.hi[1:]])
        hi = np.concatenate([self.hi[:1], -self.lo[1:]])
        return Box(lo=lo, hi=hi)


@dataclass(frozen=True, eq=False)
class Halfspace(Shape):
    """
    Closed halfspace ⟨normal, q⟩ ≤ offset, only meaningful inside an intersection.

    {"halfspace": {"normal": [t, x1, .., xn], "offset": c}}
    """

    normal: Array
    offset: float

    def contains(self, q: Array) -> npt.NDArray[np.bool_]:
        return q @ self.normal <= self.offset + CONTAINS_TOLERANCE

    def project(self, q: Array) -> Array:
        excess = np.maximum(q @ self.normal - self.offset, 0.0) / (self.normal @ self.normal)
        return q - excess[..., None] * self.normal

    def slice_margin(self, t: Array, x: Array) -> Array:
        nx = self.normal[1:]
        value = x @ nx + self.normal[0] * np.asarray(t) - self.offset
        size = float(np.linalg.norm(nx))
        if size == 0:
            return np.where(value <= 0, -np.inf, np.inf)
        return value / size

    def state_bound(self, interval: tuple[float, float]) -> float | None:
        return None

    def slice_hint(self, t: float, dimension: int) -> Array:
        nx = self.normal[1:]
        size = nx @ nx
        excess = max(self.normal[0] * t - self.offset, 0.0)
        return -excess * nx / size if size > 0 else np.zeros(dimension)

    def mirrored(self) -> Shape:
        return Halfspace(normal=np.concatenate([self.normal[:1], -self.normal[1:]]), offset=self.offset)


@dataclass(frozen=True, eq=False)
class Intersection(Shape):
    """
    Intersection of convex shapes.

    {"intersection": [shape, shape, ...]}
    """

    parts: tuple[Shape, ...]

    def __post_init__(self):
        if not self.parts:
            raise RegionError("empty intersection")
        if not all(x.convex for x in self.parts):
            raise NonConvexShapeError("intersection parts must be convex")

    def contains(self, q: Array) -> npt.NDArray[np.bool_]:
        return np.all([x.contains(q) for x in self.parts], axis=0)

    def project(self, q: Array) -> Array:
        if len(self.parts) == 1:
            return self.parts[0].project(q)
        return dykstra([x.project for x in self.parts], q)

    def slice_margin(self, t: Array, x: Array) -> Array:
        return np.max([p.slice_margin(t, x) for p in self.parts], axis=0)

    def state_bound(self, interval: tuple[float, float]) -> float | None:
        bounds = [b for b in (x.state_bound(interval) for x in self.parts) if b is not None]
        return min(bounds) if bounds else None

    def slice_hint(self, t: float, dimension: int) -> Array:
        bounded = [x for x in self.parts if x.state_bound((t, t)) is not None] or list(self.parts)
        start = join(t, bounded[0].slice_hint(t, dimension))
        fix_time: Callable[[Array], Array] = lambda q: join(t, q[..., 1:])
        return dykstra([x.project for x in self.parts] + [fix_time], start)[1:]

    def mirrored(self) -> Shape:
        return Intersection(parts=tuple(x.mirrored() for x in self.parts))


@dataclass(frozen=True, eq=False)
class Sublevel(Shape):
    """
    Sublevel set {h ≤ 0} of an expression, cut to the declared ball ‖x‖ ≤ bound.

    {"sublevel": {"h": "<expression in t, x1 .. xn>", "bound": K}}
    """

    h: Expression
    bound: float
    convex = False

    def value(self, t: Any, x: Any) -> Array:
        return np.maximum(eval_at(self.h, t, x), norm(np.asarray(x)) - self.bound)

    def contains(self, q: Array) -> npt.NDArray[np.bool_]:
        t, x = split(q)
        return self.value(t, x) <= 0

    def project(self, q: Array) -> Array:
        raise NonConvexShapeError("sublevel shapes have no projection")

    def slice_margin(self, t: Array, x: Array) -> Array:
        return self.value(t, x)

    def state_bound(self, interval: tuple[float, float]) -> float | None:
        return self.bound

    def slice_hint(self, t: float, dimension: int) -> Array:
        points = sobol(dimension, 256, 0) * 2 - 1
        points = points[norm(points) <= 1] * self.bound
        return points[int(np.argmin(self.value(t, points)))]

    def mirrored(self) -> Shape:
        return Sublevel(h=self.h.reflected(), bound=self.bound)


def sobol(dimension: int, count: int, seed: int) -> Array:
    """At least `count` scrambled Sobol points in the unit cube."""
    m = max(int(np.ceil(np.log2(max(count, 2)))), 1)
    return qmc.Sobol(d=dimension, scramble=True, seed=seed).random_base2(m)


@dataclass(frozen=True, eq=False)
class Region:
    """Compact R = shape ∩ (I×ℝⁿ)."""

    interval: tuple[float, float]
    dimension: int
    shape: Shape

    def __post_init__(self):
        if self.shape.state_bound(self.interval) is None:
            raise RegionError("region is unbounded, declare a ball, a box or a bound")

    @property
    def convex(self) -> bool:
        return self.shape.convex

    def contains(self, t: Any, x: Any) -> npt.NDArray[np.bool_]:
        a, b = self.interval
        t = np.asarray(t, dtype=float)
        q = join(t, x)
        return (q[..., 0] >= a) & (q[..., 0] <= b) & self.shape.contains(q)

    def slab(self, q: Array) -> Array:
        return np.concatenate([np.clip(q[..., :1], *self.interval), q[..., 1:]], axis=-1)

    def project(self, t: Any, x: Any) -> tuple[Array, Array]:
        """P_R(t, x) split into time and state parts."""
        if not self.convex:
            raise NonConvexShapeError("projection needs a convex region")
        q = join(t, x)
        p = self.shape.project(q)
        a, b = self.interval
        outside = (p[..., 0] < a) | (p[..., 0] > b)
        if np.any(outside):
            p[outside] = dykstra([self.shape.project, self.slab], q[outside])
        return split(p)

    def distance(self, t: Any, x: Any) -> Array:
        if self.convex:
            pt, px = self.project(t, x)
            return norm(join(t, x) - join(pt, px))
        return sublevel_distance(self, join(t, x))

    def state_bound(self) -> float:
        """max ‖x‖ over π₂(R), exact for balls and boxes, an upper bound otherwise."""
        bound = self.shape.state_bound(self.interval)
        assert bound is not None
        return bound

    def slice_margin(self, t: Any, x: Any) -> Array:
        a, b = self.interval
        t = np.asarray(t, dtype=float)
        margin = self.shape.slice_margin(t, np.asarray(x, dtype=float))
        return np.where((t < a) | (t > b), np.inf, margin)

    def reflect(self) -> "Region":
        """Image under (t, x) -> (t, -x)."""
        return Region(interval=self.interval, dimension=self.dimension, shape=self.shape.mirrored())


def sublevel_distance(region: Region, q: Array) -> Array:
    """Upper bound of the distance to a non-convex region by multistart local minimization."""
    points = q.reshape(-1, q.shape[-1])
    starts = sobol(region.dimension, MULTISTARTS, 0)[:MULTISTARTS] * 2 - 1
    bound = region.state_bound()
    result = np.empty(len(points))
    for i, point in enumerate(points):
        if region.contains(point[0], point[1:]):
            result[i] = 0.0
            continue
        t0 = float(np.clip(point[0], *region.interval))
        best = np.inf
        for start in [point[1:]] + [s * bound for s in starts]:
            solution = minimize(
                lambda y: float(np.sum((y - point) ** 2)),
                join(t0, start),
                method="SLSQP",
                bounds=[region.interval] + [(-bound, bound)] * region.dimension,
                constraints=[{"type": "ineq", "fun": lambda y: -float(region.shape.slice_margin(y[0], y[1:]))}],
            )
            if region.contains(solution.x[0], solution.x[1:]):
                best = min(best, float(np.linalg.norm(solution.x - point)))
        result[i] = best
    return result.reshape(q.shape[:-1])


def distance_to_region(region: Region, q: Any) -> float | Array:
    """d_R(q) for q = (t, x); exact for convex shapes, a multistart upper bound for sublevel shapes."""
    q = np.asarray(q, dtype=float)
    d = region.distance(q[..., 0], q[..., 1:])
    return float(d) if np.ndim(d) == 0 else d


def project_convex(shape: Shape | Region, q: Any) -> Array:
    """Nearest point of a convex shape or region."""
    q = np.asarray(q, dtype=float)
    if isinstance(shape, Region):
        return join(*shape.project(q[..., 0], q[..., 1:]))
    if not shape.convex:
        raise NonConvexShapeError(f"{type(shape).__name__} is not convex")
    return shape.project(q)


def slice_point(region: Region, t: float, margin: float = -MEMBERSHIP_TOLERANCE) -> Array | None:
    """A state x with slice margin ≤ −margin at time t, None when the search fails."""

    def objective(x: Array) -> float:
        return float(region.slice_margin(t, x))

    best = region.shape.slice_hint(t, region.dimension)
    if objective(best) <= -margin:
        return best
    bound = region.state_bound()
    starts = [best] + list((sobol(region.dimension, MULTISTARTS, 0)[:MULTISTARTS] * 2 - 1) * bound)
    for start in starts:
        solution = minimize(objective, start, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
        if solution.fun < objective(best):
            best = solution.x
        if objective(best) <= -margin:
            return np.asarray(best)
    return None


def empty_slices(region: Region, grid: Array, margin: float = -MEMBERSHIP_TOLERANCE) -> list[float]:
    return [float(t) for t in grid if slice_point(region, float(t), margin) is None]


def box_samples(
    interval: tuple[float, float], dimension: int, radius: float, count: int, seed: int
) -> tuple[Array, Array]:
    """Low-discrepancy samples of I×B[0, radius]."""
    points = sobol(dimension + 1, 2 * count, seed)
    a, b = interval
    t = a + (b - a) * points[:, 0]
    x = (2 * points[:, 1:] - 1) * radius
    keep = norm(x) <= radius
    return t[keep][:count], x[keep][:count]


@dataclass(frozen=True)
class Samples:
    """Stratified samples of the working box: shell around ∂R, mid-range and far field."""

    t: Array
    x: Array
    stratum: npt.NDArray[np.str_]

    def select(self, mask: npt.NDArray[np.bool_]) -> "Samples":
        return Samples(t=self.t[mask], x=self.x[mask], stratum=self.stratum[mask])

    def __len__(self) -> int:
        return len(self.t)


def stratified_samples(region: Region, working_radius: float, count: int, seed: int) -> Samples:
    """
    Deterministic samples of I×B[0, working_radius].

    A quarter lies within 1e-3 of ∂R on both sides (found by bisection between slice points and outside
    samples), half in B[0, r+1] and a quarter up to the working radius.
    """
    r = region.state_bound()
    mid_t, mid_x = box_samples(region.interval, region.dimension, r + 1, count // 2, seed)
    far_t, far_x = box_samples(region.interval, region.dimension, working_radius, count // 4, seed + 1)
    t = np.concatenate([mid_t, far_t])
    x = np.concatenate([mid_x, far_x])
    stratum = np.array(["mid"] * len(mid_t) + ["far"] * len(far_t))

    shell_t, shell_x = shell_points(region, t, x, count - len(t))
    t = np.concatenate([t, shell_t])
    x = np.concatenate([x, shell_x])
    stratum = np.concatenate([stratum, np.array(["shell"] * len(shell_t))])
    return Samples(t=t, x=x, stratum=stratum)


def shell_points(region: Region, t: Array, x: Array, count: int) -> tuple[Array, Array]:
    outside = ~region.contains(t, x)
    t_out, x_out = t[outside][: max(count // 2, 0)], x[outside][: max(count // 2, 0)]
    if len(t_out) == 0:
        return np.empty(0), np.empty((0, region.dimension))
    hints = np.array([region.shape.slice_hint(float(s), region.dimension) for s in t_out])
    usable = region.contains(t_out, hints)
    t_out, x_out, hints = t_out[usable], x_out[usable], hints[usable]
    lo = np.zeros(len(t_out))
    hi = np.ones(len(t_out))
    for _ in range(50):
        mid = (lo + hi) / 2
        inside = region.contains(t_out, hints + mid[:, None] * (x_out - hints))
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    direction = x_out - hints
    direction /= np.maximum(norm(direction), 1e-300)[:, None]
    boundary = hints + lo[:, None] * (x_out - hints)
    inner = boundary - SHELL_WIDTH * direction
    outer = boundary + SHELL_WIDTH * direction
    return np.concatenate([t_out, t_out]), np.concatenate([inner, outer])


def central_difference(
    func: Callable[[Array, Array], Array], t: Array, x: Array
) -> tuple[Array, Array]:
    """∂/∂t and ∇ₓ of a scalar function by central differences, step 1e-6·(1+|coordinate|)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    step_t = FD_STEP * (1 + np.abs(t))
    dt = (func(t + step_t, x) - func(t - step_t, x)) / (2 * step_t)
    grads = []
    for k in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[k] = 1.0
        step = FD_STEP * (1 + np.abs(x[..., k]))
        shift = step[..., None] * e
        grads.append((func(t, x + shift) - func(t, x - shift)) / (2 * step))
    return dt, np.stack(grads, axis=-1)


class AdmissiblePair(ABC):
    """
    (h, p) with evaluators for h, ∂h/∂t, ∇ₓh and p = (p₁, p₂).

    Hypothesis checks and ‖h‖₀ estimates stay in the working box I×B[0, working_radius].
    """

    provenance: str
    interval: tuple[float, float]
    dimension: int
    p2_bound: float
    working_radius: float

    @abstractmethod
    def h(self, t: Any, x: Any) -> Array:
        """h(t, x)."""

    @abstractmethod
    def dh_dt(self, t: Any, x: Any) -> Array:
        """∂h/∂t(t, x)."""

    @abstractmethod
    def grad_x(self, t: Any, x: Any) -> Array:
        """∇ₓh(t, x)."""

    @abstractmethod
    def p(self, t: Any, x: Any) -> tuple[Array, Array]:
        """p(t, x) = (p₁, p₂)."""

    def p2(self, t: Any, x: Any) -> Array:
        return self.p(t, x)[1]

    def samples(self, count: int, seed: int) -> tuple[Array, Array]:
        return box_samples(self.interval, self.dimension, self.working_radius, count, seed)

    def sup_h(self, count: int = 4096, seed: int = 0) -> float:
        """‖h‖₀ sampled over the working box."""
        t, x = self.samples(count, seed)
        return float(np.max(np.abs(self.h(t, x))))


def sampled_p2_bound(pair: AdmissiblePair, radius: float, seed: int = 0) -> float:
    t, x = box_samples(pair.interval, pair.dimension, radius, 8192, seed)
    return float(np.max(norm(pair.p2(t, x)), initial=0.0))


@dataclass(eq=False)
class DistancePair(AdmissiblePair):
    """h = ½d_R², p = P_R, with the exact gradient ∇h = q − P_R(q) of a convex region."""

    region: Region
    provenance: str = "user"
    working_radius: float = 0.0
    p2_bound: float = field(init=False)

    def __post_init__(self):
        if not self.region.convex:
            raise NonConvexShapeError("½d² pairs need a convex region")
        self.interval = self.region.interval
        self.dimension = self.region.dimension
        if self.working_radius <= 0:
            self.working_radius = self.region.state_bound() + 1 + WORKING_MARGIN
        self.p2_bound = self.region.state_bound()

    def __residual(self, t: Any, x: Any) -> tuple[Array, Array]:
        pt, px = self.region.project(t, x)
        return np.asarray(t, dtype=float) - pt, np.asarray(x, dtype=float) - px

    def h(self, t: Any, x: Any) -> Array:
        dt, dx = self.__residual(t, x)
        return 0.5 * (dt**2 + np.sum(dx**2, axis=-1))

    def dh_dt(self, t: Any, x: Any) -> Array:
        return self.__residual(t, x)[0]

    def grad_x(self, t: Any, x: Any) -> Array:
        return self.__residual(t, x)[1]

    def p(self, t: Any, x: Any) -> tuple[Array, Array]:
        return self.region.project(t, x)


def cutoff(s: Array) -> Array:
    """C¹ smoothstep σ: 1 on (−∞, 0], 0 on [1, ∞)."""
    s = np.clip(s, 0.0, 1.0)
    return 1 - s**2 * (3 - 2 * s)


def cutoff_slope(s: Array) -> Array:
    s = np.asarray(s)
    return np.where((s > 0) & (s < 1), -6 * s * (1 - s), 0.0)


@dataclass(eq=False)
class ConstructedPair(AdmissiblePair):
    """
    The pair built from any admissible region.

    With C = B[0, r] ⊃ π₂(R), D = B(0, r+1) and φ = ψ·σ(d_C) where ψ = ½d_R² (½h₊² for sublevel shapes):

      h = φ                          on I×C
      h = (1 − d_C²)φ + ½d_C²        on I×(D∖C)
      h = ½d_C²                      outside D

    p = (t, x − ∇ₓh), so ⟨∇ₓh, p₂ − x⟩ = −‖∇ₓh‖².
    """

    region: Region
    radius: float
    provenance: str = "constructed"
    working_radius: float = 0.0
    p2_bound: float = field(init=False)

    def __post_init__(self):
        self.interval = self.region.interval
        self.dimension = self.region.dimension
        if self.working_radius <= 0:
            self.working_radius = self.radius + WORKING_MARGIN
        self.p2_bound = max(self.radius, 1.05 * sampled_p2_bound(self, self.radius + 1))

    def psi(self, t: Any, x: Any) -> tuple[Array, Array, Array]:
        """ψ with ∂ψ/∂t and ∇ₓψ."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.region.convex:
            pt, px = self.region.project(t, x)
            dt, dx = t - pt, x - px
            return 0.5 * (dt**2 + np.sum(dx**2, axis=-1)), dt, dx
        shape = self.region.shape
        assert isinstance(shape, Sublevel)
        positive = np.maximum(shape.value(t, x), 0.0)
        gt, gx = central_difference(shape.value, t, x)
        return 0.5 * positive**2, positive * gt, positive[..., None] * gx

    def __parts(self, x: Array) -> tuple[Array, Array, Array]:
        n = norm(x)
        d = np.maximum(n - self.radius, 0.0)
        unit = np.where(n[..., None] > 0, x / np.where(n > 0, n, 1.0)[..., None], 0.0)
        return n, d, unit

    def h(self, t: Any, x: Any) -> Array:
        x = np.asarray(x, dtype=float)
        _, d, _ = self.__parts(x)
        psi, _, _ = self.psi(t, x)
        phi = psi * cutoff(d)
        inner = phi
        blend = (1 - d**2) * phi + 0.5 * d**2
        outer = 0.5 * d**2
        return np.where(d == 0, inner, np.where(d < 1, blend, outer))

    def dh_dt(self, t: Any, x: Any) -> Array:
        x = np.asarray(x, dtype=float)
        _, d, _ = self.__parts(x)
        _, psi_t, _ = self.psi(t, x)
        return np.where(d < 1, (1 - d**2) * cutoff(d) * psi_t, 0.0)

    def grad_x(self, t: Any, x: Any) -> Array:
        x = np.asarray(x, dtype=float)
        _, d, unit = self.__parts(x)
        psi, _, psi_x = self.psi(t, x)
        sigma = cutoff(d)[..., None]
        slope = cutoff_slope(d)[..., None]
        d_ = d[..., None]
        phi = psi[..., None] * sigma
        grad_phi = sigma * psi_x + psi[..., None] * slope * unit
        blend = (1 - d_**2) * grad_phi - 2 * d_ * phi * unit + d_ * unit
        outer = d_ * unit
        return np.where(d_ == 0, psi_x, np.where(d_ < 1, blend, outer))

    def p(self, t: Any, x: Any) -> tuple[Array, Array]:
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        return np.array(t), x - self.grad_x(t, x)


@dataclass(eq=False)
class ExpressionPair(AdmissiblePair):
    """
    User h (and optionally p) given by expressions; derivatives by central differences.

    Without p: p = (t, x − ∇ₓh) inside D = B(0, r+1) and (t, P_C(x)) outside.
    """

    h_expression: Expression
    interval: tuple[float, float]
    dimension: int
    radius: float
    p_expressions: tuple[Expression, ...] | None = None
    provenance: str = "user"
    working_radius: float = 0.0
    p2_bound: float = field(init=False)

    def __post_init__(self):
        if self.working_radius <= 0:
            self.working_radius = self.radius + WORKING_MARGIN
        self.p2_bound = max(self.radius, sampled_p2_bound(self, self.working_radius))

    def h(self, t: Any, x: Any) -> Array:
        return eval_at(self.h_expression, t, x)

    def dh_dt(self, t: Any, x: Any) -> Array:
        return central_difference(self.h, t, x)[0]

    def grad_x(self, t: Any, x: Any) -> Array:
        return central_difference(self.h, t, x)[1]

    def p(self, t: Any, x: Any) -> tuple[Array, Array]:
        x = np.asarray(x, dtype=float)
        t = np.array(np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1]))
        if self.p_expressions is not None:
            first, *rest = (np.broadcast_to(eval_at(e, t, x), t.shape) for e in self.p_expressions)
            return np.array(first), np.stack(rest, axis=-1)
        outside = norm(x) >= self.radius + 1
        p2 = x - self.grad_x(t, x)
        p2 = np.where(outside[..., None], ball_projection(np.zeros(self.dimension), self.radius, x), p2)
        return t, p2


@dataclass(frozen=True)
class Scaling:
    """A positive C¹ scalar function β of time with its derivative."""

    value: Callable[[Any], Array]
    derivative: Callable[[Any], Array]

    @staticmethod
    def constant(k: float) -> "Scaling":
        return Scaling(value=lambda t: np.full(np.shape(t), float(k)), derivative=lambda t: np.zeros(np.shape(t)))

    @staticmethod
    def bump(eta: float, t0: float, delta: float) -> "Scaling":
        """β(t) = 1 + η(1 − ((t − t₀)/δ)²)² on [t₀ − δ, t₀ + δ], 1 elsewhere."""

        def value(t: Any) -> Array:
            s = (np.asarray(t, dtype=float) - t0) / delta
            return 1 + eta * np.where(np.abs(s) < 1, (1 - s**2) ** 2, 0.0)

        def derivative(t: Any) -> Array:
            s = (np.asarray(t, dtype=float) - t0) / delta
            return eta * np.where(np.abs(s) < 1, -4 * s * (1 - s**2), 0.0) / delta

        return Scaling(value=value, derivative=derivative)


@dataclass(eq=False)
class ScaledPair(AdmissiblePair):
    """(βh, p)."""

    base: AdmissiblePair
    beta: Scaling
    provenance: str = "scaled"

    def __post_init__(self):
        self.interval = self.base.interval
        self.dimension = self.base.dimension
        self.p2_bound = self.base.p2_bound
        self.working_radius = self.base.working_radius

    def __beta(self, t: Any, x: Any) -> Array:
        shape = np.shape(np.asarray(x))[:-1]
        return np.broadcast_to(self.beta.value(np.broadcast_to(np.asarray(t, dtype=float), shape)), shape)

    def h(self, t: Any, x: Any) -> Array:
        return self.__beta(t, x) * self.base.h(t, x)

    def dh_dt(self, t: Any, x: Any) -> Array:
        shape = np.shape(np.asarray(x))[:-1]
        slope = self.beta.derivative(np.broadcast_to(np.asarray(t, dtype=float), shape))
        return slope * self.base.h(t, x) + self.__beta(t, x) * self.base.dh_dt(t, x)

    def grad_x(self, t: Any, x: Any) -> Array:
        return self.__beta(t, x)[..., None] * self.base.grad_x(t, x)

    def p(self, t: Any, x: Any) -> tuple[Array, Array]:
        return self.base.p(t, x)


@dataclass(eq=False)
class SumPair(AdmissiblePair):
    """(h₁ + h₂, p) for pairs sharing p."""

    first: AdmissiblePair
    second: AdmissiblePair
    provenance: str = "sum"

    def __post_init__(self):
        self.interval = self.first.interval
        self.dimension = self.first.dimension
        self.p2_bound = self.first.p2_bound
        self.working_radius = min(self.first.working_radius, self.second.working_radius)

    def h(self, t: Any, x: Any) -> Array:
        return self.first.h(t, x) + self.second.h(t, x)

    def dh_dt(self, t: Any, x: Any) -> Array:
        return self.first.dh_dt(t, x) + self.second.dh_dt(t, x)

    def grad_x(self, t: Any, x: Any) -> Array:
        return self.first.grad_x(t, x) + self.second.grad_x(t, x)

    def p(self, t: Any, x: Any) -> tuple[Array, Array]:
        return self.first.p(t, x)


@dataclass(eq=False)
class ReflectedPair(AdmissiblePair):
    """Pair of the mirrored region: h̃(t, x) = h(t, −x), p̃ = (p₁(t, −x), −p₂(t, −x))."""

    base: AdmissiblePair
    provenance: str = "reflected"

    def __post_init__(self):
        self.interval = self.base.interval
        self.dimension = self.base.dimension
        self.p2_bound = self.base.p2_bound
        self.working_radius = self.base.working_radius

    def h(self, t: Any, x: Any) -> Array:
        return self.base.h(t, -np.asarray(x, dtype=float))

    def dh_dt(self, t: Any, x: Any) -> Array:
        return self.base.dh_dt(t, -np.asarray(x, dtype=float))

    def grad_x(self, t: Any, x: Any) -> Array:
        return -self.base.grad_x(t, -np.asarray(x, dtype=float))

    def p(self, t: Any, x: Any) -> tuple[Array, Array]:
        p1, p2 = self.base.p(t, -np.asarray(x, dtype=float))
        return p1, -p2


def check_membership(region: Region, pair: AdmissiblePair, count: int = 4096, seed: int = 0):
    """Raise `PairConsistencyError` when h ≤ 0 and membership disagree on samples."""
    samples = stratified_samples(region, pair.working_radius, count, seed)
    h = pair.h(samples.t, samples.x)
    member = region.contains(samples.t, samples.x)
    bad = (member & (h > MEMBERSHIP_TOLERANCE)) | (~member & (h <= 0))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise PairConsistencyError(
            f"h = {h[i]:.3e} at t = {samples.t[i]}, x = {samples.x[i]} but membership is {bool(member[i])}"
        )


def construct_admissible_pair(region: Region, grid: Array | None = None) -> ConstructedPair:
    """Build (h, p) for an admissible region, failing when some slice R_t is empty."""
    grid = np.linspace(*region.interval, 101) if grid is None else grid
    empty = empty_slices(region, grid)
    if empty:
        raise EmptySliceError(f"R_t is empty for t in {empty[:5]}")
    pair = ConstructedPair(region=region, radius=region.state_bound())
    logging.debug("[regions] constructed pair r = %s, ‖p₂‖₀ ≤ %s", pair.radius, pair.p2_bound)
    return pair


def pair_from_user(
    region: Region,
    h: Expression | str,
    p: tuple[Expression, ...] | None = None,
    samples: int = 4096,
    seed: int = 0,
) -> AdmissiblePair:
    """
    Wrap a user h.

    h = "half_squared_distance" selects ½d_R² with p = P_R and exact gradients; otherwise h is an expression
    differentiated numerically.
    """
    pair: AdmissiblePair
    if isinstance(h, str):
        if h != "half_squared_distance":
            raise ValueError(f"unknown closed form {h}")
        pair = DistancePair(region=region)
    else:
        if p is not None and len(p) != region.dimension + 1:
            raise ValueError(f"p needs {region.dimension + 1} components got {len(p)}")
        try:
            pair = ExpressionPair(
                h_expression=h,
                interval=region.interval,
                dimension=region.dimension,
                radius=region.state_bound(),
                p_expressions=p,
            )
        except EvalError as e:
            raise PairConsistencyError(f"h or p is not evaluable on the working box: {e}") from e
    check_membership(region, pair, samples, seed)
    return pair


def rescale_pair(pair: AdmissiblePair, beta: Scaling, grid: Array | None = None) -> ScaledPair:
    """(βh, p); β must be positive on the grid."""
    grid = np.linspace(*pair.interval, 401) if grid is None else grid
    values = beta.value(grid)
    if np.any(values <= 0):
        raise ScalingError(f"β ≤ 0 at t = {grid[int(np.argmin(values))]}")
    return ScaledPair(base=pair, beta=beta)


def sum_pairs(first: AdmissiblePair, second: AdmissiblePair, count: int = 1024, seed: int = 0) -> SumPair:
    """(h₁ + h₂, p); the pairs must share p."""
    if first is not second:
        t, x = first.samples(count, seed)
        p1, p2 = first.p(t, x)
        q1, q2 = second.p(t, x)
        if not (np.array_equal(p1, q1) and np.array_equal(p2, q2)):
            raise PairConsistencyError("pairs do not share p")
    return SumPair(first=first, second=second)


def bounded_pair(pair: AdmissiblePair, count: int = 4096, seed: int = 0) -> AdmissiblePair:
    """Rescale h by a constant so that its sampled sup over the working box is at most 1."""
    sup = pair.sup_h(count, seed)
    if sup <= 1:
        return pair
    return ScaledPair(base=pair, beta=Scaling.constant(1 / sup))


BUMP_SLOPE = 16 / (3 * np.sqrt(3))


def build_hhat(
    pair: AdmissiblePair,
    epsilon: float,
    delta: float,
    t0: float,
    count: int = 4096,
    seed: int = 0,
    bounded: bool = False,
) -> AdmissiblePair:
    """
    ĥ = βh with a bump β around t₀.

    β = 1 outside [t₀ − δ, t₀ + δ], β(t₀) = 1 + η and ‖β′‖₀·‖h‖₀ < ε for
    η = 0.9·ε·δ/(κ·‖h‖₀) with κ = 16/(3√3) ≥ max|bump′|.

    With `bounded` a sampled ‖h‖₀ above 1e6 is first rescaled by `bounded_pair`, then ĥ agrees with the
    rescaled h, not with h, outside the bump window.
    """
    a, b = pair.interval
    if epsilon <= 0 or delta <= 0:
        raise ScalingError(f"want ε > 0 and δ > 0 got {epsilon}, {delta}")
    if not (a < t0 - delta and t0 + delta < b):
        raise ScalingError(f"[{t0 - delta}, {t0 + delta}] is not inside ({a}, {b})")
    if bounded and pair.sup_h(count, seed) > 1e6:
        pair = bounded_pair(pair, count, seed)
    sup = pair.sup_h(count, seed)
    if sup == 0:
        logging.warning("[regions] sampled ‖h‖₀ vanishes, ĥ = h")
        return pair
    eta = 0.9 * epsilon * delta / (BUMP_SLOPE * sup)
    logging.debug("[regions] ĥ bump η = %e around %s ± %s", eta, t0, delta)
    return ScaledPair(base=pair, beta=Scaling.bump(eta, t0, delta), provenance="hhat")
