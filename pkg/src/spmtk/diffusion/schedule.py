"""Forward-process noise schedule for the denoising diffusion model."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import BadTimestepError, ShapeMismatchError


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear variance schedule with cached cumulative products.

    betas rise linearly from beta_start to beta_end over T steps; alphas are
    1 - beta and alpha_bars their running product, which decreases strictly
    from just under 1 toward 0.
    """

    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    betas: np.ndarray = field(init=False, repr=False)
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("schedule needs at least two steps")
        betas = np.linspace(self.beta_start, self.beta_end, self.T)
        if betas[0] <= 0.0 or betas[-1] >= 1.0:
            raise ValueError("betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    def check_t(self, t):
        t = np.asarray(t)
        if t.ndim > 1 or not np.issubdtype(t.dtype, np.integer):
            raise BadTimestepError("timestep must be an integer or integer vector")
        if t.size == 0 or t.min() < 0 or t.max() >= self.T:
            raise BadTimestepError(
                "timestep out of range [0, %d): %r" % (self.T, t)
            )
        return t


def q_sample(x0, t, eps, schedule):
    """Diffuse x0 to noise level t: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps.

    t may be a scalar, or a vector with one entry per leading-axis sample
    of x0.  Pure numpy; used both for training targets and for re-noising
    known pixels during sampling.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeMismatchError("x0 and eps must have identical shapes")
    t = schedule.check_t(t)
    abar = schedule.alpha_bars[t]
    if t.ndim == 1:
        extra = x0.ndim - 1
        abar = abar.reshape((-1,) + (1,) * extra)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
