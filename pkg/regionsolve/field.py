"""Provides right-hand sides f(t, x) and the modified field f_R built from an admissible pair."""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np
import numpy.typing as npt

from regionsolve.ast import Expression
from regionsolve.eval import EvalError, eval_at
from regionsolve.regions import AdmissiblePair, norm, sobol

Array = npt.NDArray[np.float64]

C_SAMPLES = 2000
C_MARGIN = 1.1
IDENTITY_TOLERANCE = 1e-12


class FieldEvaluationError(Exception):
    """Raised when f is not finite where it is needed."""


class ProjectionIdentityError(Exception):
    """Raised when αP_D(x) and P_αD(αx) disagree beyond rounding."""


class VectorField(Protocol):
    """f: I×ℝⁿ → ℝⁿ, vectorized over leading axes of x."""

    dimension: int

    def __call__(self, t: Any, x: Any) -> Array:
        ...


@dataclass(frozen=True)
class ExpressionField:
    """f given by one expression per component."""

    components: tuple[Expression, ...]

    @property
    def dimension(self) -> int:
        return len(self.components)

    def __call__(self, t: Any, x: Any) -> Array:
        x = np.asarray(x, dtype=float)
        try:
            values = [np.broadcast_to(eval_at(e, t, x), x.shape[:-1]) for e in self.components]
        except EvalError as e:
            raise FieldEvaluationError(str(e)) from e
        return np.stack(values, axis=-1)

    def format(self) -> list[str]:
        return [e.format() for e in self.components]


@dataclass(frozen=True)
class CallableField:
    """f given by a numpy function of (t, x)."""

    function: Callable[[Any, Array], Array]
    dimension: int

    def __call__(self, t: Any, x: Any) -> Array:
        value = np.asarray(self.function(t, np.asarray(x, dtype=float)), dtype=float)
        if not np.all(np.isfinite(value)):
            raise FieldEvaluationError("non-finite field value")
        return value


@dataclass(frozen=True)
class ReflectedField:
    """f̃(t, x) = −f(t, −x)."""

    base: VectorField

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def __call__(self, t: Any, x: Any) -> Array:
        return -self.base(t, -np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Constants:
    """
    m = max ‖x‖ over π₂(R), C = max{m, 1 + ‖p₂‖₀}, K = C + 1.

    C is the radius of the target ball of the projection and the a-priori bound of solutions.
    """

    m: float
    C: float
    K: float

    @staticmethod
    def new(m: float, p2_bound: float) -> "Constants":
        C = max(m, 1 + p2_bound)
        return Constants(m=m, C=C, K=C + 1)

    def to_dict(self) -> dict[str, float]:
        return {"m": self.m, "C": self.C, "K": self.K}


def bound_c(
    f: VectorField, pair: AdmissiblePair, grid: Array, seed: int = 0, uniform: bool = False, samples: int = C_SAMPLES
) -> Array:
    """
    c(t) ≥ sup_{x ∈ ℝⁿ} |f(p(t, x))| on each node, estimated on the image of the working box under p.

    The sampled sup is inflated by 10% and increased by 1. With `uniform` every node gets the maximum.
    """
    x = (2 * sobol(pair.dimension, samples, seed) - 1) * pair.working_radius
    x = x[norm(x) <= pair.working_radius]
    c = np.empty(len(grid))
    for j, t in enumerate(grid):
        p1, p2 = pair.p(float(t), x)
        values = f(p1, p2)
        if not np.all(np.isfinite(values)):
            raise FieldEvaluationError(f"f(p(t, x)) is not finite at t = {t}")
        c[j] = C_MARGIN * float(np.max(norm(values))) + 1
    if uniform:
        c[:] = np.max(c)
    logging.debug("[field] c ranges over [%e, %e]", np.min(c), np.max(c))
    return c


def ball_projection(radius: float, x: Any) -> Array:
    """Radial projection of ℝⁿ onto B[0, radius]."""
    x = np.asarray(x, dtype=float)
    n = norm(x)
    scale = np.where(n <= radius, 1.0, radius / np.where(n > 0, n, 1.0))
    return x * scale[..., None]


def scaled_projection(radius: float, alpha: float, x: Any) -> Array:
    """
    P_D(x) for D = B[0, radius], checking αP_D(x) = P_{αD}(αx) for α ≥ 0.

    >>> scaled_projection(2.0, 2.0, [3.0, 0.0]).tolist()
    [2.0, 0.0]
    """
    if alpha < 0:
        raise ValueError(f"want α ≥ 0 got {alpha}")
    x = np.asarray(x, dtype=float)
    projected = ball_projection(radius, x)
    left = alpha * projected
    right = ball_projection(alpha * radius, alpha * x)
    drift = norm(left - right)
    if np.any(drift > IDENTITY_TOLERANCE * np.maximum(1, norm(alpha * x))):
        raise ProjectionIdentityError(f"αP_D(x) and P_αD(αx) differ by {np.max(drift):e}")
    return projected


@dataclass(frozen=True)
class ModifiedField:
    """
    f_R(t, x) = f(t, x)                             where h(t, x) ≤ 0
    f_R(t, x) = f(p(t, x)) + c(t)(p₂(t, x) − x)     otherwise

    c is piecewise constant on the grid nodes; f is only evaluated on the first branch.
    """

    base: VectorField
    pair: AdmissiblePair
    c: Array
    grid: Array

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def c_at(self, t: Any) -> Array:
        t = np.asarray(t, dtype=float)
        step = self.grid[1] - self.grid[0]
        index = np.clip(np.rint((t - self.grid[0]) / step).astype(int), 0, len(self.grid) - 1)
        return self.c[index]

    def __call__(self, t: Any, x: Any) -> Array:
        x = np.asarray(x, dtype=float)
        t = np.array(np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1]))
        inside = np.asarray(self.pair.h(t, x) <= 0)
        result = np.empty(x.shape)
        if np.any(inside):
            result[inside] = self.base(t[inside], x[inside])
        outside = ~inside
        if np.any(outside):
            to, xo = t[outside], x[outside]
            p1, p2 = self.pair.p(to, xo)
            result[outside] = self.base(p1, p2) + self.c_at(to)[..., None] * (p2 - xo)
        return result


def modified_field(f: VectorField, pair: AdmissiblePair, grid: Array, seed: int = 0, uniform: bool = False):
    return ModifiedField(base=f, pair=pair, c=bound_c(f, pair, grid, seed=seed, uniform=uniform), grid=grid)


def radial_rate(field: VectorField, t: Any, x: Any) -> Array:
    """⟨x/‖x‖, f(t, x)⟩, the growth rate of ‖x‖ along solutions."""
    x = np.asarray(x, dtype=float)
    return np.sum(x * field(t, x), axis=-1) / norm(x)
