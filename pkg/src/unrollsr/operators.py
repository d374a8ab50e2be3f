"""Differentiable imaging operators of the video formation model.

Every operator acts on torch tensors laid out as ``[..., C, H, W]`` (any
number of leading batch dimensions) and is linear in the image argument
(warping is linear for a fixed flow).  Flow fields are ``[..., 2, H, W]``
with channel 0 the horizontal displacement (du, along W) and channel 1 the
vertical displacement (dv, along H), measured in pixels of their own grid.

All functions are pure and dtype-preserving; the property tests run them in
double precision, training runs them in single precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

PADDING_MODES = ("replicate", "periodic")

# Either one kernel for the whole tensor or one kernel per leading batch entry.
KernelArg = Union["BlurKernel", Sequence["BlurKernel"]]


@dataclass(frozen=True)
class BlurKernel:
    """Normalized, flip-symmetric 2-D blur kernel with separable taps.

    ``taps`` is the odd-sized 2-D kernel (the outer product of ``taps_1d``
    with itself), ``taps_1d`` the 1-D factor used for separable application.
    Symmetry under horizontal/vertical flips makes the periodic-padding blur
    exactly self-adjoint.
    """

    taps: np.ndarray
    taps_1d: np.ndarray
    sigma: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        taps_1d = np.asarray(self.taps_1d, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1]:
            raise ValueError(f"kernel taps must be square 2-D, got shape {taps.shape}")
        if taps.shape[0] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {taps.shape[0]}")
        if abs(taps.sum() - 1.0) > 1e-12:
            raise ValueError(f"kernel taps must sum to 1, got {taps.sum()!r}")
        if not np.allclose(taps, taps[::-1, :], atol=1e-15) or not np.allclose(
            taps, taps[:, ::-1], atol=1e-15
        ):
            raise ValueError("kernel taps must be symmetric under horizontal/vertical flip")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "taps_1d", taps_1d)

    @property
    def size(self) -> int:
        return self.taps.shape[0]

    @property
    def radius(self) -> int:
        return self.taps.shape[0] // 2


def make_gaussian_kernel(sigma: float, radius: int | None = None) -> BlurKernel:
    """Sampled, normalized Gaussian kernel with support radius ceil(3*sigma).

    Pass ``radius`` to override the default truncation policy; ``radius=0``
    yields the 1x1 delta kernel.  Raises ValueError for non-positive sigma.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius is None:
        radius = math.ceil(3.0 * sigma)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    taps_1d = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    taps_1d /= taps_1d.sum()
    return BlurKernel(taps=np.outer(taps_1d, taps_1d), taps_1d=taps_1d, sigma=float(sigma))


def _spatial(x: torch.Tensor) -> tuple[int, int]:
    if x.ndim < 3:
        raise ValueError(f"expected [..., C, H, W] tensor, got shape {tuple(x.shape)}")
    return x.shape[-2], x.shape[-1]


def _check_scale(s: int) -> int:
    if not isinstance(s, int) or isinstance(s, bool) or s < 1:
        raise ValueError(f"scale factor must be an integer >= 1, got {s!r}")
    return s


def _conv_separable(x: torch.Tensor, taps: torch.Tensor, mode: str) -> torch.Tensor:
    # x: [N, G, H, W] convolved per channel group; taps: [G, k]
    g, k = taps.shape
    r = k // 2
    if r == 0:
        return x * taps.reshape(1, g, 1, 1)
    w_v = taps.reshape(g, 1, k, 1)
    w_h = taps.reshape(g, 1, 1, k)
    x = F.pad(x, (0, 0, r, r), mode=mode)
    x = F.conv2d(x, w_v, groups=g)
    x = F.pad(x, (r, r, 0, 0), mode=mode)
    x = F.conv2d(x, w_h, groups=g)
    return x


def blur(x: torch.Tensor, kernel: KernelArg, padding: str = "replicate") -> torch.Tensor:
    """Space-invariant separable blur.

    ``padding`` is "replicate" (reconstruction default) or "periodic"
    (circular; makes the blur exactly self-adjoint).  ``kernel`` may be a
    single BlurKernel or a sequence with one kernel per entry of the leading
    batch dimension of a 4-D input; smaller kernels in a batch are zero-padded
    to the common support.
    """
    if padding not in PADDING_MODES:
        raise ValueError(f"padding must be one of {PADDING_MODES}, got {padding!r}")
    mode = "circular" if padding == "periodic" else "replicate"
    h, w = _spatial(x)

    if isinstance(kernel, BlurKernel):
        if kernel.size > min(h, w):
            raise ValueError(f"kernel size {kernel.size} exceeds image dims {(h, w)}")
        taps = torch.as_tensor(kernel.taps_1d, dtype=x.dtype, device=x.device)
        flat = x.reshape(-1, 1, h, w)
        out = _conv_separable(flat, taps.reshape(1, -1), mode)
        return out.reshape(x.shape)

    kernels = list(kernel)
    if x.ndim != 4:
        raise ValueError("per-sample kernels require a [B, C, H, W] input")
    b, c = x.shape[0], x.shape[1]
    if len(kernels) != b:
        raise ValueError(f"got {len(kernels)} kernels for batch of {b}")
    size = max(k.size for k in kernels)
    if size > min(h, w):
        raise ValueError(f"kernel size {size} exceeds image dims {(h, w)}")
    taps = np.zeros((b, size), dtype=np.float64)
    for i, k in enumerate(kernels):
        off = (size - k.size) // 2
        taps[i, off : off + k.size] = k.taps_1d
    taps_t = torch.as_tensor(taps, dtype=x.dtype, device=x.device)
    taps_t = taps_t.repeat_interleave(c, dim=0)  # [B*C, size]
    flat = x.reshape(1, b * c, h, w)
    out = _conv_separable(flat, taps_t, mode)
    return out.reshape(x.shape)


def downsample(x: torch.Tensor, s: int) -> torch.Tensor:
    """Decimate by sampling every s-th pixel in each dimension (phase 0)."""
    _check_scale(s)
    h, w = _spatial(x)
    if h % s or w % s:
        raise ValueError(f"image dims {(h, w)} not divisible by scale {s}")
    return x[..., ::s, ::s]


def upsample_zeros(y: torch.Tensor, s: int) -> torch.Tensor:
    """Insert zeros between samples; the exact adjoint of `downsample`."""
    _check_scale(s)
    h, w = _spatial(y)
    out = y.new_zeros(*y.shape[:-2], h * s, w * s)
    out[..., ::s, ::s] = y
    return out


def bilinear_fill(z: torch.Tensor, s: int) -> torch.Tensor:
    """Replace the zeros of a zero-inserted image by bilinear interpolation.

    Retained samples (at indices {0, s, 2s, ...}) pass through unchanged;
    positions beyond the last retained sample hold its value (replicate).
    """
    _check_scale(s)
    if s == 1:
        return z
    h, w = _spatial(z)
    if h % s or w % s:
        raise ValueError(f"dims {(h, w)} not produced by zero-insertion at scale {s}")

    def fill_axis(t: torch.Tensor, size: int, dim: int) -> torch.Tensor:
        idx = torch.arange(size, device=t.device)
        i0 = idx.div(s, rounding_mode="floor") * s
        i1 = torch.clamp(i0 + s, max=s * (size // s - 1))
        f = (idx - i0).to(t.dtype) / s
        if dim == -2:
            f = f.reshape(-1, 1)
        a = torch.index_select(t, dim, i0)
        b = torch.index_select(t, dim, i1)
        return (1.0 - f) * a + f * b

    z = fill_axis(z, h, -2)
    z = fill_axis(z, w, -1)
    return z


def backproject(y: torch.Tensor, kernel: KernelArg, s: int, padding: str = "replicate") -> torch.Tensor:
    """Map an LR observation to HR space: blur the bilinear-filled zero-upsampling.

    Serves both as the solver initialization and as the approximate adjoint of
    blur-then-decimate inside the data steps.
    """
    return blur(bilinear_fill(upsample_zeros(y, s), s), kernel, padding)


def space_to_depth(x: torch.Tensor, s: int) -> torch.Tensor:
    """Rearrange an image into s^2-fold channels at 1/s resolution.

    Pure pixel shuffle, no arithmetic.  Output channel ``c*s*s + dy*s + dx``
    holds input channel ``c`` at sub-pixel offset ``(dy, dx)`` (row-major
    within each input channel).  Exact inverse of `depth_to_space`.
    """
    _check_scale(s)
    h, w = _spatial(x)
    if h % s or w % s:
        raise ValueError(f"image dims {(h, w)} not divisible by scale {s}")
    if s == 1:
        return x
    return F.pixel_unshuffle(x, s)


def depth_to_space(x: torch.Tensor, s: int) -> torch.Tensor:
    """Inverse of `space_to_depth`."""
    _check_scale(s)
    if x.shape[-3] % (s * s):
        raise ValueError(f"channel count {x.shape[-3]} not divisible by s^2 = {s * s}")
    if s == 1:
        return x
    return F.pixel_shuffle(x, s)


def _warp_geometry(flow: torch.Tensor):
    n, _, h, w = flow.shape
    dtype, device = flow.dtype, flow.device
    jj = torch.arange(w, dtype=dtype, device=device).reshape(1, 1, w)
    ii = torch.arange(h, dtype=dtype, device=device).reshape(1, h, 1)
    px = torch.clamp(jj + flow[:, 0], 0.0, w - 1.0)
    py = torch.clamp(ii + flow[:, 1], 0.0, h - 1.0)
    x0 = px.floor()
    y0 = py.floor()
    fx = px - x0
    fy = py - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = torch.clamp(x0 + 1, max=w - 1)
    y1 = torch.clamp(y0 + 1, max=h - 1)
    weights = (
        (1.0 - fy) * (1.0 - fx),
        (1.0 - fy) * fx,
        fy * (1.0 - fx),
        fy * fx,
    )
    indices = (
        (y0 * w + x0),
        (y0 * w + x1),
        (y1 * w + x0),
        (y1 * w + x1),
    )
    return weights, indices


def _check_flow(x: torch.Tensor, flow: torch.Tensor):
    if flow.ndim < 3 or flow.shape[-3] != 2:
        raise ValueError(f"flow must be [..., 2, H, W], got shape {tuple(flow.shape)}")
    if x.shape[:-3] != flow.shape[:-3] or x.shape[-2:] != flow.shape[-2:]:
        raise ValueError(
            f"image shape {tuple(x.shape)} and flow shape {tuple(flow.shape)} do not match"
        )


def warp(x: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp: bilinear sample of x at p + flow(p), clamped to the border.

    Differentiable in both the image and the flow.  Zero flow is the identity
    bitwise; integer in-range flows reduce to exact gathers.
    """
    _check_flow(x, flow)
    h, w = _spatial(x)
    lead = x.shape[:-3]
    c = x.shape[-3]
    xf = x.reshape(-1, c, h * w)
    ff = flow.reshape(-1, 2, h, w)
    weights, indices = _warp_geometry(ff)
    n = xf.shape[0]
    out = None
    for wgt, idx in zip(weights, indices):
        vals = xf.gather(2, idx.reshape(n, 1, h * w).expand(n, c, h * w))
        term = wgt.reshape(n, 1, h * w) * vals
        out = term if out is None else out + term
    return out.reshape(*lead, c, h, w)


def warp_adjoint(r: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Exact transpose of `warp` for the same flow (bilinear scatter-add).

    Satisfies <warp(x, u), r> = <x, warp_adjoint(r, u)> for all x, r.
    """
    _check_flow(r, flow)
    h, w = _spatial(r)
    lead = r.shape[:-3]
    c = r.shape[-3]
    rf = r.reshape(-1, c, h * w)
    ff = flow.reshape(-1, 2, h, w)
    weights, indices = _warp_geometry(ff)
    n = rf.shape[0]
    out = rf.new_zeros(n, c, h * w)
    for wgt, idx in zip(weights, indices):
        out = out.scatter_add(
            2,
            idx.reshape(n, 1, h * w).expand(n, c, h * w),
            wgt.reshape(n, 1, h * w) * rf,
        )
    return out.reshape(*lead, c, h, w)


def upsample_flow(flow_lr: torch.Tensor, s: int) -> torch.Tensor:
    """Upsample an LR flow field to the HR grid.

    Each displacement channel is bilinear-fill upsampled and the values are
    multiplied by s: displacements are measured in pixels of their own grid,
    and the HR grid is s times denser.
    """
    if flow_lr.ndim < 3 or flow_lr.shape[-3] != 2:
        raise ValueError(f"flow must be [..., 2, H, W], got shape {tuple(flow_lr.shape)}")
    _check_scale(s)
    if s == 1:
        return flow_lr
    return bilinear_fill(upsample_zeros(flow_lr, s), s) * s
