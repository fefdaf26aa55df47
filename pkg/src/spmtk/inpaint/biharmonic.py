"""Biharmonic hole filling.

Masked pixels are chosen so that the squared five-point Laplacian (the
13-point biharmonic stencil in the interior) vanishes on every one of them,
with the surrounding known pixels acting as Dirichlet data.  Restricting the
squared Laplacian to the unknowns gives a symmetric positive definite system
-- the full operator is L^2 with L the symmetric replicate-edge Laplacian,
and a principal submatrix of L^2 is definite as soon as one known pixel
exists -- so it is solved by plain conjugate gradients, applied matrix-free
on the grid.
"""

from __future__ import annotations

import numpy as np

from ..errors import DidNotConvergeError
from ._common import check_pair, laplacian, put_result

# How often the recurrence residual is replaced by the true residual; guards
# against floating-point drift in long CG runs at negligible cost.
_REFRESH_EVERY = 50


def solve_biharmonic(pixels, bits, tol=1e-8, max_iter=None):
    """Solve the masked biharmonic system in float64.

    Returns a full float64 grid whose masked entries hold the solution and
    whose unmasked entries are copied from `pixels`.  Iteration starts from
    the values currently stored in the hole, so re-solving an
    already-consistent frame converges immediately.  Raises
    DidNotConvergeError when the residual maximum norm is still above `tol`
    after `max_iter` iterations (default 10 per unknown).
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    bits = np.asarray(bits, dtype=bool)
    count = int(bits.sum())
    if max_iter is None:
        max_iter = 10 * count

    def apply_op(vec):
        z = np.zeros_like(pixels)
        z[bits] = vec
        return laplacian(laplacian(z))[bits]

    known = np.where(bits, 0.0, pixels)
    rhs = -laplacian(laplacian(known))[bits]

    x = pixels[bits].copy()
    r = rhs - apply_op(x)
    d = r.copy()
    rs = float(r @ r)
    for it in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            break
        ad = apply_op(d)
        dad = float(d @ ad)
        if dad <= 0.0:
            raise DidNotConvergeError(
                "conjugate gradient broke down (operator not definite?)"
            )
        alpha = rs / dad
        x += alpha * d
        if (it + 1) % _REFRESH_EVERY == 0:
            r = rhs - apply_op(x)
        else:
            r -= alpha * ad
        rs_new = float(r @ r)
        d = r + (rs_new / rs) * d
        rs = rs_new
    if np.max(np.abs(r)) > tol:
        raise DidNotConvergeError(
            f"residual {np.max(np.abs(r)):.3e} above {tol:.3e} "
            f"after {max_iter} iterations"
        )
    out = pixels.copy()
    out[bits] = x
    return out


def inpaint_biharmonic(frame, mask, tol=1e-8, max_iter=None):
    """Fill masked pixels with the discrete biharmonic interpolant."""
    pixels, bits = check_pair(frame, mask)
    grid = solve_biharmonic(pixels, bits, tol=tol, max_iter=max_iter)
    return put_result(frame, bits, grid)
