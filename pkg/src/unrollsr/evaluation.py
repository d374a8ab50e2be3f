"""Measurement protocol: luma PSNR/SSIM with exclusions, runtime, reports.

Both metrics are computed on the BT.601 studio-swing luma channel after
quantizing inputs to the 8-bit grid (matching file-based evaluation), and
exclude the first/last two frames of a sequence and an 8-pixel border.
PSNR aggregates the MSE over all retained pixels of the sequence; SSIM is
averaged over the retained frames.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.signal import convolve2d

from .unrolled import RecurrentState, initial_state, uvsr_frame

FRAME_EXCLUSION = 2  # frames dropped at each end of a sequence
BORDER_EXCLUSION = 8  # pixels dropped at each image edge
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PEAK = 255.0

# BT.601 studio-swing luma coefficients (8-bit offset 16, range 16-235).
_LUMA_WEIGHTS = (65.481, 128.553, 24.966)
_LUMA_OFFSET = 16.0


def rgb_to_y(x):
    """BT.601 studio-swing luma of an RGB image in [0, 1].

    Accepts ``[..., 3, H, W]`` tensors or arrays; returns the same kind with
    a single channel, with values in [16/255, 235/255] for inputs in [0, 1].
    """
    if x.shape[-3] != 3:
        raise ValueError(f"expected 3 channels, got {x.shape[-3]}")
    r, g, b = x[..., 0:1, :, :], x[..., 1:2, :, :], x[..., 2:3, :, :]
    wr, wg, wb = _LUMA_WEIGHTS
    return (wr * r + wg * g + wb * b + _LUMA_OFFSET) / 255.0


def quantize_to_8bit(x: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and snap to the 8-bit integer grid, returning 0..255."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0)


def _to_numpy(frames) -> np.ndarray:
    if isinstance(frames, torch.Tensor):
        frames = frames.detach().cpu().numpy()
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4:
        raise ValueError(f"expected [T, C, H, W] frames, got shape {frames.shape}")
    return frames


def _retained_luma(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Shared protocol front-end: luma, 8-bit grid, frame/border exclusion."""
    pred = _to_numpy(pred)
    gt = _to_numpy(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    t_len, c = pred.shape[0], pred.shape[1]
    if t_len < 2 * FRAME_EXCLUSION + 1:
        raise ValueError(f"need at least {2 * FRAME_EXCLUSION + 1} frames, got {t_len}")
    if c == 3:
        pred, gt = rgb_to_y(pred), rgb_to_y(gt)
    elif c != 1:
        raise ValueError(f"expected 1 (luma) or 3 (RGB) channels, got {c}")
    h, w = pred.shape[-2], pred.shape[-1]
    if h <= 2 * BORDER_EXCLUSION or w <= 2 * BORDER_EXCLUSION:
        raise ValueError(f"frames of {(h, w)} are fully excluded by the border rule")
    pred = quantize_to_8bit(pred)
    gt = quantize_to_8bit(gt)
    keep = slice(FRAME_EXCLUSION, t_len - FRAME_EXCLUSION)
    border = slice(BORDER_EXCLUSION, -BORDER_EXCLUSION)
    return pred[keep, :, border, border], gt[keep, :, border, border]


def psnr_video(pred, gt) -> float:
    """Sequence PSNR in dB from one aggregate MSE over all retained pixels."""
    pred_y, gt_y = _retained_luma(pred, gt)
    mse = np.mean((pred_y - gt_y) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _ssim_frame(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM of two single-channel frames on the 0..255 scale."""
    coords = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * SSIM_SIGMA**2))
    window = np.outer(g, g)
    window /= window.sum()
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_a = convolve2d(a, window, mode="valid")
    mu_b = convolve2d(b, window, mode="valid")
    var_a = convolve2d(a * a, window, mode="valid") - mu_a * mu_a
    var_b = convolve2d(b * b, window, mode="valid") - mu_b * mu_b
    cov = convolve2d(a * b, window, mode="valid") - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_video(pred, gt) -> float:
    """Mean SSIM over retained frames (border cropped before windowing)."""
    pred_y, gt_y = _retained_luma(pred, gt)
    h, w = pred_y.shape[-2], pred_y.shape[-1]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"retained area {(h, w)} smaller than the {SSIM_WINDOW}px SSIM window")
    scores = [_ssim_frame(pred_y[t, 0], gt_y[t, 0]) for t in range(pred_y.shape[0])]
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


@dataclass
class SequenceResult:
    name: str
    psnr_db: float
    ssim: float

    def __post_init__(self):
        if not (self.psnr_db >= 0.0 or math.isinf(self.psnr_db)):
            raise ValueError(f"PSNR must be >= 0 or infinite, got {self.psnr_db}")
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"SSIM must lie in [-1, 1], got {self.ssim}")


@dataclass
class EvalReport:
    sequences: list[SequenceResult] = field(default_factory=list)
    runtime_ms: float | None = None
    parameter_count: int | None = None

    @property
    def mean_psnr_db(self) -> float:
        return float(np.mean([s.psnr_db for s in self.sequences]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.sequences]))

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sequence", "psnr_db", "ssim"])
            for s in self.sequences:
                writer.writerow([s.name, f"{s.psnr_db:.6f}", f"{s.ssim:.6f}"])
            writer.writerow(["average", f"{self.mean_psnr_db:.6f}", f"{self.mean_ssim:.6f}"])

    def summary(self) -> str:
        lines = [f"{s.name}: {s.psnr_db:.2f} dB / {s.ssim:.4f}" for s in self.sequences]
        lines.append(f"average: {self.mean_psnr_db:.2f} dB / {self.mean_ssim:.4f}")
        if self.runtime_ms is not None:
            lines.append(f"runtime: {self.runtime_ms:.1f} ms/frame")
        if self.parameter_count is not None:
            lines.append(f"parameters: {self.parameter_count:,}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Runtime benchmark
# ---------------------------------------------------------------------------


def benchmark_runtime(
    model,
    kernel,
    config,
    lr_size: tuple[int, int] = (270, 480),
    runs: int = 20,
    warmup: int = 3,
    seed: int = 0,
) -> float:
    """Median wall time (ms) to reconstruct one HR frame from one LR frame.

    Defaults measure a 1920x1080 output from a 480x270 input.  The model is
    warmed up before timing; ``model=None`` benchmarks the classical mode.
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    torch.manual_seed(seed)
    h, w = lr_size
    y_t = torch.rand(1, config.channels, h, w)
    y_prev = torch.rand(1, config.channels, h, w)
    times = []
    with torch.no_grad():
        state = initial_state(y_prev, kernel, config)
        for i in range(warmup + runs):
            start = time.perf_counter()
            x, _, _ = uvsr_frame(y_t, y_prev, state, kernel, config, model=model)
            elapsed = (time.perf_counter() - start) * 1000.0
            if i >= warmup:
                times.append(elapsed)
    return float(np.median(times))


def temporal_profile(frames, row: int | None = None) -> np.ndarray:
    """Fixed-row luma slice per frame, stacked into a [T, W] strip.

    Visualizes temporal consistency: smooth columns indicate stable
    reconstructions, jitter shows up as vertical noise.
    """
    frames = _to_numpy(frames)
    if frames.shape[1] == 3:
        frames = rgb_to_y(frames)
    if row is None:
        row = frames.shape[-2] // 2
    if not 0 <= row < frames.shape[-2]:
        raise ValueError(f"row {row} outside image height {frames.shape[-2]}")
    return frames[:, 0, row, :]
