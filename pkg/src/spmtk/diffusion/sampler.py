"""Inpainting sampler: reverse diffusion constrained to the masked region.

The sampler denoises from pure noise, conditioning the branch on the masked
input frame.  After every reverse step the pixels outside the mask are
overwritten with a freshly noised copy of the known image at the new noise
level, so only masked content is actually synthesized; the final output
pastes the original unmasked pixels back verbatim.
"""

import numpy as np

from .. import autodiff as ad
from ..errors import MismatchedDimensionsError, UntrainedModelError
from ..imageio import MaskImage, ScanFrame
from .schedule import q_sample


def _timestep_path(T, stride):
    if stride < 1:
        raise ValueError("stride must be at least 1")
    ts = list(range(T - 1, -1, -stride))
    if ts[-1] != 0:
        ts.append(0)
    return ts


def sample_inpaint(model, frame, mask, schedule, seed=0, stride=1):
    """Fill the masked pixels of a frame by reverse diffusion.

    stride 1 walks every schedule step ancestrally; larger strides jump
    between noise levels through the model's clean-image estimate, trading
    fidelity for speed.  Unmasked pixels of the output are bit-identical to
    the input; an empty mask returns the input unchanged.  Deterministic in
    seed.
    """
    if not model.is_trained():
        raise UntrainedModelError("model head is still at its zero init")
    pixels = frame.pixels if isinstance(frame, ScanFrame) else np.asarray(frame)
    bits = mask.bits if isinstance(mask, MaskImage) else np.asarray(mask, dtype=bool)
    if pixels.shape != bits.shape:
        raise MismatchedDimensionsError("frame and mask sizes differ")
    if not bits.any():
        out = pixels.copy()
        return frame.with_pixels(out) if isinstance(frame, ScanFrame) else out

    h, w = pixels.shape
    known = 2.0 * pixels.astype(np.float64) - 1.0
    m = bits.astype(np.float64)[None, None]
    cond = (known * (1.0 - bits))[None, None]
    rng = np.random.default_rng(seed)

    x = rng.standard_normal((1, 1, h, w))
    x0_hat = np.zeros_like(x)
    path = _timestep_path(schedule.T, stride)
    for i, t in enumerate(path):
        with ad.no_grad():
            eps_hat = model.forward(x, np.array([t]), cond, m).data
        abar_t = schedule.alpha_bars[t]
        x0_hat = (x - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
        x0_hat = np.clip(x0_hat, -1.0, 1.0)
        if i + 1 == len(path):
            break
        t_next = path[i + 1]
        if t_next == t - 1:
            beta = schedule.betas[t]
            abar_prev = schedule.alpha_bars[t_next]
            mean = (x - beta / np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(
                schedule.alphas[t])
            if t_next > 0:
                var = beta * (1.0 - abar_prev) / (1.0 - abar_t)
                x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
            else:
                x = mean
        else:
            abar_next = schedule.alpha_bars[t_next]
            x = np.sqrt(abar_next) * x0_hat + np.sqrt(1.0 - abar_next) * eps_hat
        renoised = q_sample(known[None, None], np.array([t_next]),
                            rng.standard_normal(x.shape), schedule)
        x = m * x + (1.0 - m) * renoised

    filled = np.clip((x0_hat[0, 0] + 1.0) / 2.0, 0.0, 1.0).astype(np.float32)
    out = np.where(bits, filled, pixels.astype(np.float32))
    return frame.with_pixels(out) if isinstance(frame, ScanFrame) else out
