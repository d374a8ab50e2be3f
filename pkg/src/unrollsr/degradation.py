"""HR-to-LR data synthesis and blur-kernel PCA encoding.

The observation model is blur-then-decimate with a Gaussian kernel; no noise
is added.  The blur width is either fixed for the whole dataset or drawn
uniformly once per sequence.  For conditioning a multi-degradation model on
its kernel, kernels are flattened on a common support and compressed to a
10-dimensional PCA code.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass

import numpy as np
import torch

from .operators import BlurKernel, blur, downsample, make_gaussian_kernel

KERNEL_CODE_DIM = 10

SIGMA_FIXED = 1.6
SIGMA_RANGE = (0.375, 2.825)


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of the forward model mapping an HR frame to its LR observation."""

    sigma: float = SIGMA_FIXED
    scale: int = 4
    noise_variance: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not isinstance(self.scale, int) or isinstance(self.scale, bool) or self.scale < 1:
            raise ValueError(f"scale must be an integer >= 1, got {self.scale!r}")
        if self.noise_variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.noise_variance}")


@dataclass(frozen=True)
class SigmaSampler:
    """Blur-width policy: a fixed value or one uniform draw per sequence."""

    mode: str = "fixed"
    fixed_value: float = SIGMA_FIXED
    low: float = SIGMA_RANGE[0]
    high: float = SIGMA_RANGE[1]

    def __post_init__(self):
        if self.mode not in ("fixed", "uniform"):
            raise ValueError(f"mode must be 'fixed' or 'uniform', got {self.mode!r}")
        if self.mode == "fixed" and self.fixed_value <= 0:
            raise ValueError(f"fixed_value must be positive, got {self.fixed_value}")
        if self.mode == "uniform" and not (0 < self.low < self.high):
            raise ValueError(f"need 0 < low < high, got [{self.low}, {self.high}]")


def sample_sigma(sampler: SigmaSampler, rng: np.random.Generator) -> float:
    """Draw the blur width for one sequence."""
    if sampler.mode == "fixed":
        return float(sampler.fixed_value)
    return float(rng.uniform(sampler.low, sampler.high))


def center_crop_to_multiple(frames: torch.Tensor, s: int) -> torch.Tensor:
    """Center-crop the spatial dims down to the nearest multiple of s."""
    h, w = frames.shape[-2], frames.shape[-1]
    th, tw = (h // s) * s, (w // s) * s
    if th == 0 or tw == 0:
        raise ValueError(f"dims {(h, w)} too small to crop to a multiple of {s}")
    i0, j0 = (h - th) // 2, (w - tw) // 2
    return frames[..., i0 : i0 + th, j0 : j0 + tw]


def degrade_sequence(
    hr_frames: torch.Tensor, spec: DegradationSpec, padding: str = "replicate"
) -> torch.Tensor:
    """Blur every frame with a Gaussian of width ``spec.sigma``, then decimate.

    ``hr_frames`` is [T, C, H, W] with H and W divisible by ``spec.scale``
    (crop with `center_crop_to_multiple` first if needed).  Frames are
    degraded independently, so the result for frame t never depends on the
    other frames.
    """
    if hr_frames.ndim != 4:
        raise ValueError(f"expected [T, C, H, W] frames, got shape {tuple(hr_frames.shape)}")
    h, w = hr_frames.shape[-2], hr_frames.shape[-1]
    if h % spec.scale or w % spec.scale:
        raise ValueError(f"frame dims {(h, w)} not divisible by scale {spec.scale}")
    if spec.noise_variance != 0:
        raise ValueError("noise injection is out of scope; noise_variance must be 0")
    kernel = make_gaussian_kernel(spec.sigma)
    return downsample(blur(hr_frames, kernel, padding), spec.scale)


# ---------------------------------------------------------------------------
# Kernel PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaBasis:
    """Top principal components of a flattened, zero-padded kernel family."""

    mean: np.ndarray  # [support * support]
    components: np.ndarray  # [dim, support * support], orthonormal rows
    support: int
    basis_id: str


@dataclass(frozen=True)
class KernelCode:
    """A blur kernel projected onto a fitted PCA basis."""

    coeffs: np.ndarray
    basis_id: str

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.shape != (KERNEL_CODE_DIM,):
            raise ValueError(
                f"kernel code must have exactly {KERNEL_CODE_DIM} coefficients, "
                f"got shape {coeffs.shape}"
            )
        object.__setattr__(self, "coeffs", coeffs)


def _flatten_padded(kernel: BlurKernel, support: int) -> np.ndarray:
    if kernel.size > support:
        raise ValueError(f"kernel size {kernel.size} exceeds basis support {support}")
    full = np.zeros((support, support), dtype=np.float64)
    off = (support - kernel.size) // 2
    full[off : off + kernel.size, off : off + kernel.size] = kernel.taps
    return full.ravel()


def pca_fit(kernels: list[BlurKernel], dim: int = KERNEL_CODE_DIM) -> PcaBasis:
    """Fit a PCA basis to a kernel family.

    All kernels are zero-padded to the largest support in the family and
    flattened; the basis holds the mean and the top ``dim`` right-singular
    vectors of the centered stack.
    """
    if len(kernels) < dim:
        raise ValueError(f"need at least {dim} kernels to fit a {dim}-dim basis, got {len(kernels)}")
    support = max(k.size for k in kernels)
    stack = np.stack([_flatten_padded(k, support) for k in kernels])
    mean = stack.mean(axis=0)
    _, _, vt = np.linalg.svd(stack - mean, full_matrices=False)
    return PcaBasis(
        mean=mean, components=vt[:dim].copy(), support=support, basis_id=uuid.uuid4().hex
    )


def pca_encode(kernel: BlurKernel, basis: PcaBasis) -> KernelCode:
    """Project a (zero-padded, centered) kernel onto the basis."""
    flat = _flatten_padded(kernel, basis.support)
    return KernelCode(coeffs=basis.components @ (flat - basis.mean), basis_id=basis.basis_id)


def pca_decode(code: KernelCode, basis: PcaBasis) -> np.ndarray:
    """Reconstruct the 2-D kernel approximation encoded by ``code``."""
    if code.basis_id != basis.basis_id:
        raise ValueError("kernel code was produced by a different basis")
    flat = basis.mean + code.coeffs @ basis.components
    return flat.reshape(basis.support, basis.support)


def gaussian_kernel_family(
    low: float = SIGMA_RANGE[0], high: float = SIGMA_RANGE[1], num: int = 50
) -> list[BlurKernel]:
    """Gaussian kernels on a uniform blur-width grid, e.g. for fitting a basis."""
    if num < 2:
        raise ValueError(f"need at least 2 grid points, got {num}")
    return [make_gaussian_kernel(float(s)) for s in np.linspace(low, high, num)]
