"""
Provides linear boundary functionals and sampled paths.

A functional is a finite set of atoms plus an integrable density,

  Γu = Σ w_i u(s_i) + ∫_a^b ρ(s) u(s) ds,

acting componentwise on paths. All quadratures are composite trapezoid rules
on the uniform grid of the path they are applied to.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import numpy.typing as npt
from scipy.integrate import cumulative_trapezoid, quad, trapezoid

from regionsolve.ast import Expression, parse_expression
from regionsolve.eval import eval_expression
from regionsolve.field import ReflectedField, VectorField

Array = npt.NDArray[np.float64]

DEGENERATE_MASS = 1e-12
DEFAULT_INTERVALS = 400
DENSITY_VARIABLE = "s"


class GridError(Exception):
    """Raised when a grid is not uniform or has fewer than 2 intervals."""


class DegenerateMassError(Exception):
    """Raised when Γ(1) vanishes."""


class IntervalMismatchError(Exception):
    """Raised when a path and a functional live on different intervals."""


class ReflectionError(Exception):
    """Raised when reflecting a functional of positive mass."""


def uniform_grid(a: float, b: float, intervals: int) -> Array:
    if intervals < 2:
        raise GridError(f"want at least 2 intervals got {intervals}")
    if not a < b:
        raise GridError(f"want a < b got [{a}, {b}]")
    return np.linspace(a, b, intervals + 1)


@dataclass(frozen=True, eq=False)
class SampledPath:
    """A path u on the uniform grid t_0 = a, ..., t_N = b, values[j] = u(t_j)."""

    grid: Array
    values: Array

    def __post_init__(self):
        if self.grid.ndim != 1 or len(self.grid) < 3:
            raise GridError(f"want at least 3 nodes got {self.grid.shape}")
        if self.values.ndim != 2 or self.values.shape[0] != len(self.grid):
            raise GridError(f"values {self.values.shape} do not match grid {self.grid.shape}")
        steps = np.diff(self.grid)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise GridError("grid is not uniform")

    @staticmethod
    def new(grid: Any, values: Any) -> "SampledPath":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        return SampledPath(grid=grid, values=values)

    @staticmethod
    def constant(grid: Any, x: Any) -> "SampledPath":
        grid = np.asarray(grid, dtype=float)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return SampledPath(grid=grid, values=np.tile(x, (len(grid), 1)))

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def intervals(self) -> int:
        return len(self.grid) - 1

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def norms(self) -> Array:
        return np.linalg.norm(self.values, axis=1)

    def sup_norm(self) -> float:
        """‖u‖₀, the maximum over nodes of the euclidean norm."""
        return float(np.max(self.norms()))

    def at(self, s: float) -> Array:
        """Linear interpolation between nodes."""
        return np.array([np.interp(s, self.grid, self.values[:, k]) for k in range(self.dimension)])

    def with_values(self, values: Any) -> "SampledPath":
        return SampledPath.new(self.grid, values)


@dataclass(frozen=True)
class Atom:
    location: float
    weight: float


@dataclass(frozen=True)
class LinearFunctional:
    """Γ as atoms plus a density ρ(s) on the interval [a, b]."""

    interval: tuple[float, float]
    atoms: tuple[Atom, ...] = field(default_factory=tuple)
    density: Expression | None = None

    def __post_init__(self):
        a, b = self.interval
        locations = [x.location for x in self.atoms]
        if any(s < a or s > b for s in locations):
            raise ValueError(f"atom locations {locations} outside [{a}, {b}]")
        if any(x >= y for x, y in zip(locations, locations[1:])):
            raise ValueError(f"atom locations {locations} are not strictly increasing")

    @staticmethod
    def new(
        interval: tuple[float, float],
        atoms: list[tuple[float, float]] | None = None,
        density: str | Expression | None = None,
    ) -> "LinearFunctional":
        if isinstance(density, str):
            density = parse_expression(density, 0, time_name=DENSITY_VARIABLE)
        return LinearFunctional(
            interval=(float(interval[0]), float(interval[1])),
            atoms=tuple(Atom(location=float(s), weight=float(w)) for s, w in sorted(atoms or [])),
            density=density,
        )

    @staticmethod
    def evaluation(interval: tuple[float, float], s: float, weight: float = 1.0) -> "LinearFunctional":
        """Γu = weight·u(s)."""
        return LinearFunctional.new(interval, atoms=[(s, weight)])

    @staticmethod
    def integral(interval: tuple[float, float]) -> "LinearFunctional":
        """Γu = ∫_a^b u."""
        return LinearFunctional.new(interval, density="1")

    @property
    def weights(self) -> Array:
        return np.array([x.weight for x in self.atoms], dtype=float)

    @property
    def locations(self) -> Array:
        return np.array([x.location for x in self.atoms], dtype=float)

    def density_on(self, grid: Array) -> Array:
        if self.density is None:
            return np.zeros_like(grid)
        value = eval_expression(self.density, {DENSITY_VARIABLE: grid})
        return np.array(np.broadcast_to(value, grid.shape), dtype=float)

    def density_function(self) -> Callable[[float], float]:
        density = self.density
        if density is None:
            return lambda s: 0.0
        return lambda s: float(eval_expression(density, {DENSITY_VARIABLE: s}))

    def quadrature_grid(self) -> Array:
        return uniform_grid(self.interval[0], self.interval[1], DEFAULT_INTERVALS)


def check_interval(g: LinearFunctional, grid: Array):
    a, b = g.interval
    if not (np.isclose(grid[0], a, rtol=0, atol=1e-12) and np.isclose(grid[-1], b, rtol=0, atol=1e-12)):
        raise IntervalMismatchError(f"functional on [{a}, {b}] path on [{grid[0]}, {grid[-1]}]")


def raw_mass(g: LinearFunctional, grid: Array | None = None) -> float:
    """Γ(1) without the degeneracy check."""
    grid = g.quadrature_grid() if grid is None else grid
    check_interval(g, grid)
    h = float(grid[1] - grid[0])
    return float(np.sum(g.weights) + trapezoid(g.density_on(grid), dx=h))


def gamma_mass(g: LinearFunctional, grid: Array | None = None) -> float:
    """
    M = Γ(1), the atom weights plus the trapezoid integral of the density.

    The integral uses `grid` when given, otherwise a uniform grid of 400 intervals.
    """
    m = raw_mass(g, grid)
    if abs(m) < DEGENERATE_MASS:
        raise DegenerateMassError(f"Γ(1) = {m} vanishes")
    return m


def atom_terms(g: LinearFunctional, path: SampledPath) -> Array:
    if not g.atoms:
        return np.zeros(path.dimension)
    at = np.array([path.at(s) for s in g.locations])
    return np.array([np.sum(g.weights * at[:, k]) for k in range(path.dimension)])


def gamma_apply(g: LinearFunctional, u: SampledPath) -> Array:
    """Γu: atoms by linear interpolation between nodes plus the trapezoid integral of ρu."""
    check_interval(g, u.grid)
    rho = g.density_on(u.grid)
    integral = np.array([trapezoid(rho * u.values[:, k], dx=u.step) for k in range(u.dimension)])
    return atom_terms(g, u) + integral


def cumulative_weight(g: LinearFunctional, s: float) -> float:
    """
    g(s) = Γ(t ↦ χ_[a,t](s)) = Σ_{s_i ≥ s} w_i + ∫_s^b ρ.

    May be negative for signed functionals.
    """
    a, b = g.interval
    if s < a or s > b:
        raise ValueError(f"{s} outside [{a}, {b}]")
    weight = float(sum(x.weight for x in g.atoms if x.location >= s))
    if g.density is not None and s < b:
        value, _ = quad(g.density_function(), s, b, limit=200)
        weight += value
    return weight


def density_weight(g: LinearFunctional, grid: Array) -> Array:
    """
    Discrete counterpart of ∫_s^b ρ at the nodes.

    These are the weights with Σ c_k w_k g_k = Σ c_j ρ_j W_j for trapezoid weights c and the cumulative
    trapezoid integral W of any w, so both forms of Θ agree up to rounding.
    """
    h = float(grid[1] - grid[0])
    c = np.full(len(grid), h)
    c[0] = c[-1] = h / 2
    q = g.density_on(grid) * c
    tail = np.cumsum(q[::-1])[::-1]
    weights = tail - q / 2
    weights[0] = tail[0] - q[0]
    weights[-1] = q[-1]
    return weights


def weight_on_grid(g: LinearFunctional, grid: Array) -> Array:
    atoms = np.array([sum(x.weight for x in g.atoms if x.location >= s) for s in grid], dtype=float)
    return atoms + density_weight(g, grid)


def weight_sign(g: LinearFunctional, grid: Array) -> float:
    """Minimum of the cumulative weight on the grid; warns when negative."""
    lowest = float(np.min(weight_on_grid(g, grid)))
    if lowest < 0:
        logging.warning("[functionals] cumulative weight reaches %e < 0, the functional is not positive", lowest)
    return lowest


def running_integral(integrand: Array, grid: Array) -> Array:
    """∫_a^t at every node by the cumulative trapezoid rule."""
    return cumulative_trapezoid(integrand, dx=float(grid[1] - grid[0]), axis=0, initial=0)


def theta(g: LinearFunctional, integrand: Array, grid: Array) -> Array:
    """
    Θ = Γ∫_a^t w = ∫_a^b w(s) g(s) ds.

    Density terms use the weighted quadrature with the cumulative weight, atoms act on the running integral.
    """
    check_interval(g, grid)
    path = SampledPath.new(grid, running_integral(integrand, grid))
    weighted = density_weight(g, grid)[:, None] * np.asarray(integrand, dtype=float).reshape(len(grid), -1)
    return atom_terms(g, path) + trapezoid(weighted, dx=path.step, axis=0)


def theta_direct(g: LinearFunctional, integrand: Array, grid: Array) -> Array:
    """Θ as Γ applied to the running trapezoid integral."""
    return gamma_apply(g, SampledPath.new(grid, running_integral(integrand, grid)))


def reflect_functional(g: LinearFunctional, grid: Array | None = None) -> LinearFunctional:
    """Γ̃ = −Γ, for functionals with Γ(1) < 0."""
    m = gamma_mass(g, grid)
    if m > 0:
        raise ReflectionError(f"Γ(1) = {m} is already positive")
    return LinearFunctional(
        interval=g.interval,
        atoms=tuple(Atom(location=x.location, weight=-x.weight) for x in g.atoms),
        density=None if g.density is None else g.density.negated(),
    )


def reflect_field(f: VectorField) -> VectorField:
    """f̃(t, x) = −f(t, −x)."""
    return ReflectedField(base=f)
