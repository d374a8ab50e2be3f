"""Trainable components: per-block prior CNNs, the flow estimator, and the
full recurrent model bundling them with the per-block step sizes."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .unrolled import UnrolledConfig, initial_step_sizes


def _init_conv(conv: nn.Conv2d, zero: bool = False, leaky_slope: float | None = None):
    if zero:
        nn.init.zeros_(conv.weight)
        nn.init.zeros_(conv.bias)
    else:
        nonlinearity = "leaky_relu" if leaky_slope is not None else "relu"
        nn.init.kaiming_normal_(conv.weight, a=leaky_slope or 0.0, nonlinearity=nonlinearity)
        nn.init.zeros_(conv.bias)


class PriorNet(nn.Module):
    """Prior step of one unrolled block, operating in depth-packed LR space.

    A plain stack of ``depth`` 3x3, stride-1, dimension-preserving
    convolutions with rectification between them (none after the last).
    Input: the depth-packed current iterate concatenated with the depth-packed
    warped previous estimate (2 * s^2 * C channels); output: the additive
    increment for the iterate (s^2 * C channels).  The final layer starts at
    zero so an untrained block is a pure data-step refinement.
    """

    def __init__(self, scale: int = 4, channels: int = 3, depth: int = 7, filters: int = 128):
        super().__init__()
        if depth < 2:
            raise ValueError(f"depth must be >= 2, got {depth}")
        self.packed_channels = scale * scale * channels
        layers = [nn.Conv2d(2 * self.packed_channels, filters, 3, padding=1), nn.ReLU(inplace=True)]
        for _ in range(depth - 2):
            layers += [nn.Conv2d(filters, filters, 3, padding=1), nn.ReLU(inplace=True)]
        layers.append(nn.Conv2d(filters, self.packed_channels, 3, padding=1))
        self.stack = nn.Sequential(*layers)
        for m in self.stack[:-1]:
            if isinstance(m, nn.Conv2d):
                _init_conv(m)
        _init_conv(self.stack[-1], zero=True)

    def forward(self, current_lr: torch.Tensor, warped_prev_lr: torch.Tensor) -> torch.Tensor:
        if current_lr.shape != warped_prev_lr.shape:
            raise ValueError(
                f"inputs must match, got {tuple(current_lr.shape)} vs {tuple(warped_prev_lr.shape)}"
            )
        if current_lr.shape[-3] != self.packed_channels:
            raise ValueError(
                f"expected {self.packed_channels} channels, got {current_lr.shape[-3]}"
            )
        return self.stack(torch.cat([current_lr, warped_prev_lr], dim=-3))


class _ConvPair(nn.Module):
    """Two 3x3 convolutions with leaky rectification after each."""

    def __init__(self, in_ch: int, out_ch: int, slope: float = 0.2):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.slope = slope
        _init_conv(self.conv1, leaky_slope=slope)
        _init_conv(self.conv2, leaky_slope=slope)

    def forward(self, x):
        x = F.leaky_relu(self.conv1(x), self.slope)
        return F.leaky_relu(self.conv2(x), self.slope)


class FlowNet(nn.Module):
    """Flow estimator between two same-size frames.

    Encoder-decoder over the concatenated frame pair: three strided-pooling
    stages (32, 64, 128 channels), a 256-channel bottleneck, three bilinear
    upsampling stages (128, 64), then 32 -> 2 channels and a bounded
    activation scaling displacements to ``max_flow`` pixels.  Inputs are
    replicate-padded to a multiple of 8 and the flow is cropped back, so any
    spatial size is accepted.  ``forward(a, b)`` estimates the flow ``u``
    for which sampling ``b`` at ``p + u(p)`` reproduces ``a``.
    """

    def __init__(self, channels: int = 3, max_flow: float = 24.0):
        super().__init__()
        if max_flow <= 0:
            raise ValueError(f"max_flow must be positive, got {max_flow}")
        self.max_flow = float(max_flow)
        self.enc1 = _ConvPair(2 * channels, 32)
        self.enc2 = _ConvPair(32, 64)
        self.enc3 = _ConvPair(64, 128)
        self.dec1 = _ConvPair(128, 256)
        self.dec2 = _ConvPair(256, 128)
        self.dec3 = _ConvPair(128, 64)
        self.head1 = nn.Conv2d(64, 32, 3, padding=1)
        self.head2 = nn.Conv2d(32, 2, 3, padding=1)
        _init_conv(self.head1, leaky_slope=0.2)
        # Start at exactly zero flow (identity warp): an untrained estimator
        # must not inject motion into the reconstruction.
        _init_conv(self.head2, zero=True)

    def forward(self, frame_a: torch.Tensor, frame_b: torch.Tensor) -> torch.Tensor:
        if frame_a.shape != frame_b.shape:
            raise ValueError(
                f"frames must match, got {tuple(frame_a.shape)} vs {tuple(frame_b.shape)}"
            )
        if frame_a.ndim != 4:
            raise ValueError(f"expected [B, C, h, w] frames, got shape {tuple(frame_a.shape)}")
        h, w = frame_a.shape[-2], frame_a.shape[-1]
        ph = (-h) % 8
        pw = (-w) % 8
        x = torch.cat([frame_a, frame_b], dim=1)
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        x = self.enc1(x)
        x = self.enc2(F.max_pool2d(x, 2))
        x = self.enc3(F.max_pool2d(x, 2))
        x = self.dec1(F.max_pool2d(x, 2))
        x = self.dec2(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))
        x = self.dec3(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.leaky_relu(self.head1(x), 0.2)
        flow = torch.tanh(self.head2(x)) * self.max_flow
        return flow[..., :h, :w]


class UnrolledVSR(nn.Module):
    """The full recurrent model: flow estimator, per-block priors, step sizes.

    Step sizes are unconstrained trainable scalars initialized exactly to
    2^-k for block k.
    """

    def __init__(self, config: UnrolledConfig):
        super().__init__()
        self.config = config
        self.fnet = FlowNet(channels=config.channels, max_flow=config.max_flow)
        self.priors = nn.ModuleList(
            PriorNet(
                scale=config.scale,
                channels=config.channels,
                depth=config.prior_depth,
                filters=config.prior_filters,
            )
            for _ in range(config.iterations)
        )
        self.alpha = nn.Parameter(initial_step_sizes(config.iterations))
        self.beta = nn.Parameter(initial_step_sizes(config.iterations))


def count_parameters(module: nn.Module) -> int:
    """Total trainable scalar count."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def conv_stack_param_count(depth: int, filters: int, in_ch: int, out_ch: int) -> int:
    """Closed-form parameter count of a 3x3 convolution stack with biases."""
    if depth == 1:
        return 9 * in_ch * out_ch + out_ch
    count = 9 * in_ch * filters + filters
    count += (depth - 2) * (9 * filters * filters + filters)
    count += 9 * filters * out_ch + out_ch
    return count


def save_checkpoint(path, model: UnrolledVSR, metadata: dict | None = None) -> None:
    """Serialize parameters plus a manifest (solver config and caller metadata)."""
    payload = {
        "state_dict": model.state_dict(),
        "config": dataclasses.asdict(model.config),
        "metadata": dict(metadata or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[UnrolledVSR, dict]:
    """Rebuild a model from a checkpoint; returns (model, metadata)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = UnrolledVSR(UnrolledConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    return model, payload.get("metadata", {})
