"""Non-learning hole-filling baselines behind one dispatch entry point.

Five methods share the (frame, mask) -> frame contract: a biharmonic
interpolant, fluid-style transport along isophotes, fast-marching weighted
averaging, randomized exemplar voting, and a global polynomial surface fit.
All of them leave unmasked pixels bit-identical and return values clamped
to [0, 1].
"""

from __future__ import annotations

import dataclasses
import enum

from .biharmonic import inpaint_biharmonic, solve_biharmonic
from .navier_stokes import inpaint_ns
from .patchmatch import (
    inpaint_patchmatch,
    nnf_search,
    source_centers,
    target_centers,
)
from .surface import (
    SurfaceModel,
    fit_polynomial_surface,
    inpaint_surface_fit,
    monomial_powers,
)
from .telea import inpaint_telea, march_distances

__all__ = [
    "InpaintMethod",
    "InpaintParams",
    "SurfaceModel",
    "fit_polynomial_surface",
    "inpaint",
    "inpaint_biharmonic",
    "inpaint_ns",
    "inpaint_patchmatch",
    "inpaint_surface_fit",
    "inpaint_telea",
    "march_distances",
    "monomial_powers",
    "nnf_search",
    "solve_biharmonic",
    "source_centers",
    "target_centers",
]


class InpaintMethod(enum.Enum):
    """Tags for the five baselines; values double as CLI spellings."""

    Biharmonic = "biharmonic"
    NavierStokes = "ns"
    Telea = "telea"
    PatchMatch = "patchmatch"
    SurfaceFit = "surface"


@dataclasses.dataclass(frozen=True)
class InpaintParams:
    """Method selector plus per-method knobs (unused ones are ignored)."""

    method: InpaintMethod = InpaintMethod.Biharmonic
    tol: float = 1e-8
    max_iter: int | None = None
    iters: int = 300
    dt: float = 0.1
    diffusion_every: int = 15
    radius: int = 5
    patch: int = 7
    nnf_iters: int = 5
    fill_passes: int = 4
    seed: int = 0
    degree: int = 2
    ring: int = 6

    def __post_init__(self):
        if not isinstance(self.method, InpaintMethod):
            object.__setattr__(self, "method", InpaintMethod(str(self.method)))
        if not (self.tol > 0):
            raise ValueError("tol must be positive")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        for name in ("iters", "diffusion_every", "radius", "patch",
                     "nnf_iters", "fill_passes", "ring"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")


def inpaint(frame, mask, params=None):
    """Dispatch to the method selected by `params` (biharmonic default)."""
    if params is None:
        params = InpaintParams()
    method = params.method
    if method is InpaintMethod.Biharmonic:
        return inpaint_biharmonic(frame, mask, tol=params.tol,
                                  max_iter=params.max_iter)
    if method is InpaintMethod.NavierStokes:
        return inpaint_ns(frame, mask, iters=params.iters, dt=params.dt,
                          diffusion_every=params.diffusion_every)
    if method is InpaintMethod.Telea:
        return inpaint_telea(frame, mask, radius=params.radius)
    if method is InpaintMethod.PatchMatch:
        return inpaint_patchmatch(frame, mask, patch=params.patch,
                                  nnf_iters=params.nnf_iters,
                                  fill_passes=params.fill_passes,
                                  seed=params.seed)
    if method is InpaintMethod.SurfaceFit:
        return inpaint_surface_fit(frame, mask, degree=params.degree,
                                   ring=params.ring)
    raise ValueError(f"unknown inpainting method {method!r}")
