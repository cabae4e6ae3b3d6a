"""Provides the assembled boundary value problem shared by the checks and the solver."""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np
import numpy.typing as npt

from regionsolve.field import Constants, ModifiedField, VectorField, modified_field
from regionsolve.functionals import (
    DEFAULT_INTERVALS,
    LinearFunctional,
    gamma_mass,
    reflect_field,
    reflect_functional,
    uniform_grid,
    weight_sign,
)
from regionsolve.regions import AdmissiblePair, ReflectedPair, Region

Array = npt.NDArray[np.float64]

DEFAULT_SCHEDULE = tuple(float(x) for x in np.round(np.linspace(0, 1, 11), 10))
DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 2000


class ProblemError(Exception):
    """Raised when the pieces of a problem do not fit together."""


class BoundaryKind(Enum):
    """
    Boundary conditions.

    cg:  Γ(u − u(a)) = r
    cg2: Γu = r
    ci:  u(a) = r, solved as cg2 with Γu = u(a)
    cp:  u(a) = u(b), solved as cg with Γu = u(b) and r = 0
    """

    CG = "cg"
    CG2 = "cg2"
    CI = "ci"
    CP = "cp"

    @staticmethod
    def new(name: str) -> "BoundaryKind":
        try:
            return BoundaryKind(name)
        except ValueError as e:
            raise ProblemError(f"unknown boundary kind {name}, want one of {[x.value for x in BoundaryKind]}") from e


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    u′ = f(t, u) on I with a boundary condition, posed on a region with its admissible pair.

    When Γ(1) < 0 the problem is stored for v = −u: Γ, f, R and (h, p) are reflected and `reflected` is set.
    """

    f: VectorField
    region: Region
    pair: AdmissiblePair
    functional: LinearFunctional
    r: Array
    kind: BoundaryKind
    encoded: BoundaryKind
    mass: float
    constants: Constants
    grid: Array
    modified: ModifiedField
    schedule: tuple[float, ...] = DEFAULT_SCHEDULE
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    seed: int = 0
    reflected: bool = False
    uniform_c: bool = False
    notes: list[str] = field(default_factory=list)

    @staticmethod
    def new(
        f: VectorField,
        region: Region,
        pair: AdmissiblePair,
        kind: BoundaryKind | str,
        r: Any = None,
        functional: LinearFunctional | None = None,
        intervals: int = DEFAULT_INTERVALS,
        schedule: tuple[float, ...] = DEFAULT_SCHEDULE,
        tolerance: float = DEFAULT_TOLERANCE,
        max_iterations: int = DEFAULT_MAX_ITERATIONS,
        seed: int = 0,
        uniform_c: bool = False,
        notes: list[str] | None = None,
    ) -> "ProblemSpec":
        kind = BoundaryKind.new(kind) if isinstance(kind, str) else kind
        n = region.dimension
        if f.dimension != n or pair.dimension != n:
            raise ProblemError(f"dimensions differ: field {f.dimension}, region {n}, pair {pair.dimension}")
        a, b = region.interval
        grid = uniform_grid(a, b, intervals)
        r = np.zeros(n) if r is None else np.atleast_1d(np.asarray(r, dtype=float))
        if r.shape != (n,):
            raise ProblemError(f"r has shape {r.shape}, want ({n},)")
        notes = [] if notes is None else list(notes)

        match kind:
            case BoundaryKind.CI:
                functional, encoded = LinearFunctional.evaluation((a, b), a), BoundaryKind.CG2
            case BoundaryKind.CP:
                functional, encoded, r = LinearFunctional.evaluation((a, b), b), BoundaryKind.CG, np.zeros(n)
            case _:
                if functional is None:
                    raise ProblemError(f"{kind.value} needs a functional")
                encoded = kind
        if functional.interval != (a, b):
            raise ProblemError(f"functional interval {functional.interval} differs from [{a}, {b}]")

        mass = gamma_mass(functional, grid)
        reflected = mass < 0
        if reflected:
            logging.info("[problem] Γ(1) = %s < 0, solving for v = −u", mass)
            functional = reflect_functional(functional, grid)
            f = reflect_field(f)
            region = region.reflect()
            pair = ReflectedPair(base=pair)
            mass = -mass
        if weight_sign(functional, grid) < 0:
            notes.append("the cumulative weight of Γ takes negative values, Γ is not a positive functional")

        constants = Constants.new(region.state_bound(), pair.p2_bound)
        logging.debug("[problem] M = %s, %s", mass, constants)
        return ProblemSpec(
            f=f,
            region=region,
            pair=pair,
            functional=functional,
            r=r,
            kind=kind,
            encoded=encoded,
            mass=mass,
            constants=constants,
            grid=grid,
            modified=modified_field(f, pair, grid, seed=seed, uniform=uniform_c),
            uniform_c=uniform_c,
            schedule=tuple(schedule),
            tolerance=tolerance,
            max_iterations=max_iterations,
            seed=seed,
            reflected=reflected,
            notes=notes,
        )

    @property
    def interval(self) -> tuple[float, float]:
        return self.region.interval

    @property
    def dimension(self) -> int:
        return self.region.dimension

    def with_pair(self, pair: AdmissiblePair) -> "ProblemSpec":
        """The same problem with another pair sharing p, so the constants and c still apply."""
        return replace(self, pair=pair, modified=replace(self.modified, pair=pair))

    def with_intervals(self, intervals: int) -> "ProblemSpec":
        grid = uniform_grid(*self.interval, intervals)
        return replace(
            self,
            grid=grid,
            modified=modified_field(self.f, self.pair, grid, seed=self.seed, uniform=self.uniform_c),
        )
