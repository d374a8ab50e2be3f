"""Procedural test content: smooth textures and clips with known motion.

Textures are blurred noise with periodic boundary statistics, so circularly
translated clips have no seams and their LR observations (with periodic blur
padding) are exactly consistent with the forward model.  Translation clips
come with their ground-truth flow fields, which makes them usable for fusion
experiments where motion must be exact.
"""

from __future__ import annotations

import numpy as np
import torch

from .operators import blur, make_gaussian_kernel


def smooth_texture(
    rng: np.random.Generator,
    height: int,
    width: int,
    channels: int = 3,
    smoothness: float = 3.0,
    dtype: torch.dtype = torch.float64,
) -> torch.Tensor:
    """Random texture in [0.1, 0.9], blurred to the given correlation length.

    Uses periodic blur, so the texture tiles seamlessly under circular shifts.
    """
    noise = torch.from_numpy(rng.random((channels, height, width))).to(dtype)
    k = make_gaussian_kernel(smoothness)
    if k.size > min(height, width):
        raise ValueError(f"smoothness {smoothness} too large for {(height, width)} texture")
    tex = blur(noise, k, padding="periodic")
    lo = tex.amin(dim=(-2, -1), keepdim=True)
    hi = tex.amax(dim=(-2, -1), keepdim=True)
    return 0.1 + 0.8 * (tex - lo) / (hi - lo + 1e-12)


def translating_clip(base: torch.Tensor, shift: tuple[int, int], frames: int) -> torch.Tensor:
    """Clip of circular translations: frame t is the base shifted by t * shift.

    ``shift`` is (dy, dx) in pixels; frame t satisfies
    x_t(i, j) = base(i - t*dy, j - t*dx) with wrap-around.
    """
    dy, dx = shift
    return torch.stack(
        [torch.roll(base, shifts=(t * dy, t * dx), dims=(-2, -1)) for t in range(frames)]
    )


def translation_flows_lr(
    shift: tuple[int, int], s: int, h_lr: int, w_lr: int, dtype: torch.dtype = torch.float64
) -> tuple[torch.Tensor, torch.Tensor]:
    """Ground-truth constant LR flows between consecutive frames of a
    translating clip.

    Returns ``(flow_prev_to_curr_lr, flow_curr_to_prev_lr)``: sampling the
    current frame at p + flow_curr_to_prev reproduces the previous frame, and
    vice versa.  Displacements are in LR pixels (HR shift / s).
    """
    dy, dx = shift
    flow_c2p = torch.empty(2, h_lr, w_lr, dtype=dtype)
    flow_c2p[0] = dx / s
    flow_c2p[1] = dy / s
    return -flow_c2p, flow_c2p


def translating_texture_clips(
    rng: np.random.Generator,
    count: int,
    frames: int,
    height: int,
    width: int,
    channels: int = 3,
    max_shift: int = 3,
    smoothness: float = 3.0,
    dtype: torch.dtype = torch.float32,
) -> list[torch.Tensor]:
    """A small dataset of translating-texture HR clips, one random integer
    shift per clip (never zero)."""
    clips = []
    for _ in range(count):
        base = smooth_texture(rng, height, width, channels, smoothness, dtype=torch.float64)
        shift = (0, 0)
        while shift == (0, 0):
            shift = (
                int(rng.integers(-max_shift, max_shift + 1)),
                int(rng.integers(-max_shift, max_shift + 1)),
            )
        clips.append(translating_clip(base, shift, frames).to(dtype))
    return clips
