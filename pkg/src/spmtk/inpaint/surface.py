"""Low-order polynomial surface fit over a boundary annulus.

A bivariate polynomial of bounded total degree is least-squares fitted to
the known pixels in a ring around the hole and then evaluated inside it.
Coordinates are mapped to [-1, 1] over the bounding box of ring plus hole
before building the design matrix, which keeps the normal equations well
conditioned at the degrees used here.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.ndimage import binary_dilation

from ..errors import InsufficientSupportError, RankDeficientError
from ._common import check_pair, put_result


def monomial_powers(degree):
    """(row_power, col_power) pairs of total degree <= degree.

    Ordered by total degree, row power descending within each block:
    (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
    """
    return tuple((total - i, i)
                 for total in range(degree + 1)
                 for i in range(total + 1))


@dataclasses.dataclass(frozen=True)
class SurfaceModel:
    """A fitted polynomial surface plus the grid-to-[-1,1] mapping."""

    degree: int
    powers: tuple
    coeffs: np.ndarray
    y0: float
    ys: float
    x0: float
    xs: float

    def evaluate(self, rows, cols):
        """Evaluate the surface at (row, col) grid positions."""
        ty = (np.asarray(rows, dtype=np.float64) - self.y0) * self.ys - 1.0
        tx = (np.asarray(cols, dtype=np.float64) - self.x0) * self.xs - 1.0
        out = np.zeros_like(ty)
        for (py, px), c in zip(self.powers, self.coeffs):
            out += c * ty ** py * tx ** px
        return out


def fit_polynomial_surface(frame, mask, degree=2, ring=6):
    """Fit a total-degree polynomial to the ring around the masked set.

    The ring is the `ring`-Chebyshev dilation of the mask minus the mask
    itself.  Raises InsufficientSupportError when the ring holds fewer than
    three known pixels per coefficient and RankDeficientError when the
    design matrix loses rank (e.g. degenerate geometry).
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if ring < 1:
        raise ValueError("ring width must be at least 1")
    pixels, bits = check_pair(frame, mask)
    size = 2 * ring + 1
    region = binary_dilation(bits, structure=np.ones((size, size), dtype=bool))
    annulus = region & ~bits

    powers = monomial_powers(degree)
    pts = np.argwhere(annulus)
    if len(pts) < 3 * len(powers):
        raise InsufficientSupportError(
            f"{len(pts)} ring pixels for {len(powers)} coefficients "
            f"(need {3 * len(powers)})"
        )

    rr, cc = np.nonzero(region)
    y0 = float(rr.min())
    x0 = float(cc.min())
    yspan = float(rr.max()) - y0
    xspan = float(cc.max()) - x0
    ys = 2.0 / yspan if yspan > 0 else 1.0
    xs = 2.0 / xspan if xspan > 0 else 1.0

    ty = (pts[:, 0].astype(np.float64) - y0) * ys - 1.0
    tx = (pts[:, 1].astype(np.float64) - x0) * xs - 1.0
    design = np.column_stack([ty ** py * tx ** px for py, px in powers])
    coeffs, _, rank, _ = np.linalg.lstsq(design, pixels[annulus], rcond=None)
    if rank < len(powers):
        raise RankDeficientError(
            f"design matrix rank {rank} below {len(powers)} coefficients"
        )
    return SurfaceModel(degree, powers, coeffs, y0, ys, x0, xs)


def inpaint_surface_fit(frame, mask, degree=2, ring=6):
    """Replace masked pixels with a fitted polynomial surface."""
    pixels, bits = check_pair(frame, mask)
    model = fit_polynomial_surface(frame, mask, degree=degree, ring=ring)
    rows, cols = np.nonzero(bits)
    grid = pixels.copy()
    grid[bits] = model.evaluate(rows, cols)
    return put_result(frame, bits, grid)
