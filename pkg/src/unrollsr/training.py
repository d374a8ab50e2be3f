"""End-to-end training of the recurrent unrolled model.

Each step samples HR clips, crops and flips them, draws one blur width per
clip, synthesizes the LR observations, reconstructs the whole clip with the
recurrence, and backpropagates the composite loss through every frame (full
through-time gradient by default).  The loss couples the reconstruction error
with a self-supervised photometric loss on both flow directions.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .degradation import SigmaSampler, sample_sigma
from .networks import UnrolledVSR, save_checkpoint
from .operators import blur, downsample, make_gaussian_kernel, warp
from .unrolled import UnrolledConfig, uvsr_sequence


@dataclass(frozen=True)
class ClipBatch:
    """Paired HR/LR training clips with the per-clip blur widths."""

    hr: torch.Tensor  # [B, T, C, H, W]
    lr: torch.Tensor  # [B, T, C, H/s, W/s]
    sigmas: tuple[float, ...]

    def __post_init__(self):
        if self.hr.ndim != 5 or self.lr.ndim != 5:
            raise ValueError("clips must be [B, T, C, H, W]")
        if self.hr.shape[:3] != self.lr.shape[:3]:
            raise ValueError(
                f"HR/LR batch layout mismatch: {tuple(self.hr.shape)} vs {tuple(self.lr.shape)}"
            )
        if self.hr.shape[-2] % self.lr.shape[-2] or self.hr.shape[-1] % self.lr.shape[-1]:
            raise ValueError("HR dims must be an integer multiple of LR dims")
        if len(self.sigmas) != self.hr.shape[0]:
            raise ValueError(f"need one sigma per clip, got {len(self.sigmas)}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.  Defaults target a full-size training run
    (10-frame clips, 256-pixel HR crops); scale them down for smoke runs."""

    steps: int = 1000
    batch_size: int = 4
    learning_rate: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_decay_at: tuple[float, ...] = (0.6, 0.85)  # fractions of total steps
    clip_length: int = 10
    crop_size: int = 256  # HR pixels
    sigma: SigmaSampler = field(default_factory=SigmaSampler)
    augment: bool = True  # random horizontal/vertical flips
    detach_state: bool = False
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 0  # 0: only at the end

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_length < 1:
            raise ValueError(f"clip_length must be >= 1, got {self.clip_length}")


def compute_loss(
    x_hat: torch.Tensor,
    x_gt: torch.Tensor,
    flows_lr: tuple[torch.Tensor, torch.Tensor],
    y_t: torch.Tensor,
    y_prev: torch.Tensor,
) -> tuple[torch.Tensor, dict]:
    """Per-frame composite loss.

    Mean squared reconstruction error plus the two photometric flow terms:
    the previous LR frame warped forward must match the current one, and the
    current frame warped backward must match the previous one.  All three
    terms are means over pixels (and batch).  ``flows_lr`` is
    ``(flow_prev_to_curr_lr, flow_curr_to_prev_lr)``.
    """
    if x_hat.shape != x_gt.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x_gt.shape)}")
    if y_t.shape != y_prev.shape:
        raise ValueError(f"shape mismatch: {tuple(y_t.shape)} vs {tuple(y_prev.shape)}")
    flow_p2c, flow_c2p = flows_lr
    sr = ((x_hat - x_gt) ** 2).mean()
    flow_forward = ((warp(y_prev, flow_p2c) - y_t) ** 2).mean()
    flow_backward = ((warp(y_t, flow_c2p) - y_prev) ** 2).mean()
    total = sr + flow_forward + flow_backward
    return total, {
        "sr": sr.item(),
        "flow_forward": flow_forward.item(),
        "flow_backward": flow_backward.item(),
    }


def clip_loss(
    xs: torch.Tensor,
    flows_p2c: torch.Tensor,
    flows_c2p: torch.Tensor,
    hr: torch.Tensor,
    lr: torch.Tensor,
) -> tuple[torch.Tensor, dict]:
    """Sum of per-frame losses over a clip.

    The first frame has no predecessor, so it contributes only its
    reconstruction term; every later frame adds all three terms.
    """
    total = ((xs[:, 0] - hr[:, 0]) ** 2).mean()
    comps = {"sr": total.item(), "flow_forward": 0.0, "flow_backward": 0.0}
    for t in range(1, xs.shape[1]):
        frame_total, frame_comps = compute_loss(
            xs[:, t], hr[:, t], (flows_p2c[:, t], flows_c2p[:, t]), lr[:, t], lr[:, t - 1]
        )
        total = total + frame_total
        for key in comps:
            comps[key] += frame_comps[key]
    return total, comps


def sample_clip_batch(
    clips: list[torch.Tensor],
    config: TrainConfig,
    scale: int,
    rng: np.random.Generator,
    padding: str = "replicate",
) -> ClipBatch:
    """Crop, flip, and degrade a random batch of training clips."""
    hr_list, sigmas = [], []
    for _ in range(config.batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        t_len, _, h, w = clip.shape
        if t_len < config.clip_length or h < config.crop_size or w < config.crop_size:
            raise ValueError(
                f"clip {tuple(clip.shape)} smaller than {config.clip_length} frames "
                f"of {config.crop_size} px"
            )
        t0 = int(rng.integers(t_len - config.clip_length + 1))
        i0 = int(rng.integers(h - config.crop_size + 1))
        j0 = int(rng.integers(w - config.crop_size + 1))
        crop = clip[
            t0 : t0 + config.clip_length, :, i0 : i0 + config.crop_size, j0 : j0 + config.crop_size
        ]
        if config.augment:
            if rng.random() < 0.5:
                crop = torch.flip(crop, dims=[-1])
            if rng.random() < 0.5:
                crop = torch.flip(crop, dims=[-2])
        hr_list.append(crop)
        sigmas.append(sample_sigma(config.sigma, rng))
    hr = torch.stack(hr_list)
    b, t_len = hr.shape[0], hr.shape[1]
    kernels = [make_gaussian_kernel(s) for s in sigmas]
    frame_kernels = [k for k in kernels for _ in range(t_len)]
    flat = hr.reshape(b * t_len, *hr.shape[2:])
    lr = downsample(blur(flat, frame_kernels, padding), scale)
    lr = lr.reshape(b, t_len, *lr.shape[1:])
    return ClipBatch(hr=hr, lr=lr, sigmas=tuple(sigmas))


def train(
    clips: list[torch.Tensor],
    config: TrainConfig,
    solver_config: UnrolledConfig,
    model: UnrolledVSR | None = None,
    out_dir: Path | str | None = None,
    device: str = "cpu",
) -> tuple[UnrolledVSR, list[dict]]:
    """Optimize a model on HR clips; returns it with the loss history.

    ``clips`` is a list of [T, C, H, W] HR tensors.  When ``out_dir`` is
    given, a CSV log (step, losses, learning rate) and checkpoints are
    written there.  Deterministic for a fixed seed, dataset, and device.
    """
    if not clips:
        raise ValueError("training requires at least one clip")
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    if model is None:
        model = UnrolledVSR(solver_config)
    model = model.to(device).train()
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    milestones = sorted({max(1, int(f * config.steps)) for f in config.lr_decay_at})
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        opt, milestones=milestones, gamma=config.lr_decay_factor
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    log_rows: list[dict] = []
    for step in range(1, config.steps + 1):
        batch = sample_clip_batch(clips, config, solver_config.scale, rng, solver_config.padding)
        kernels = [make_gaussian_kernel(s) for s in batch.sigmas]
        lr_clips = batch.lr.to(device)
        hr_clips = batch.hr.to(device)
        opt.zero_grad()
        xs, flows_p2c, flows_c2p = uvsr_sequence(
            lr_clips, kernels, solver_config, model=model, detach_state=config.detach_state
        )
        total, comps = clip_loss(xs, flows_p2c, flows_c2p, hr_clips, lr_clips)
        total.backward()
        opt.step()
        scheduler.step()

        if step == 1 or step == config.steps or step % config.log_every == 0:
            log_rows.append(
                {
                    "step": step,
                    "total": total.item(),
                    **comps,
                    "learning_rate": opt.param_groups[0]["lr"],
                }
            )
        if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_{step:06d}.pt", model, _manifest(config, step))

    model.eval()
    if out_dir:
        with open(out_dir / "train_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(
                fh,
                fieldnames=["step", "total", "sr", "flow_forward", "flow_backward", "learning_rate"],
            )
            writer.writeheader()
            writer.writerows(log_rows)
        save_checkpoint(out_dir / "checkpoint_final.pt", model, _manifest(config, config.steps))
    return model, log_rows


def _manifest(config: TrainConfig, step: int) -> dict:
    return {
        "train_config": dataclasses.asdict(config),
        "sigma_mode": config.sigma.mode,
        "steps_completed": step,
    }
