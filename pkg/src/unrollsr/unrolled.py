"""Unrolled gradient-descent reconstruction: the iterative core.

The solver alternates a learned prior step (a CNN proposes an additive
increment ``z``) with an analytic data step that pushes the iterate toward
consistency with the LR observations under the blur-then-decimate forward
model.  The single-image variant refines against one frame; the video variant
adds a second, motion-compensated data term against the previous frame and
threads the previous HR estimate through time.

A "classical" mode skips the prior increment entirely, turning each block
into plain gradient descent on the data terms with the approximate adjoint;
it requires no trained weights and is used for structural verification and
untrained baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch

from .operators import (
    BlurKernel,
    KernelArg,
    PADDING_MODES,
    backproject,
    bilinear_fill,
    blur,
    depth_to_space,
    downsample,
    space_to_depth,
    upsample_flow,
    upsample_zeros,
    warp,
    warp_adjoint,
)


@dataclass(frozen=True)
class UnrolledConfig:
    """Static hyper-parameters of the unrolled solver and its networks."""

    scale: int = 4
    channels: int = 3
    iterations: int = 3
    prior_depth: int = 7
    prior_filters: int = 128
    classical_mode: bool = False
    max_flow: float = 24.0
    padding: str = "replicate"

    def __post_init__(self):
        if not isinstance(self.scale, int) or isinstance(self.scale, bool) or self.scale < 1:
            raise ValueError(f"scale must be an integer >= 1, got {self.scale!r}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.prior_depth < 2:
            raise ValueError(f"prior_depth must be >= 2, got {self.prior_depth}")
        if self.prior_filters < 1:
            raise ValueError(f"prior_filters must be >= 1, got {self.prior_filters}")
        if self.max_flow <= 0:
            raise ValueError(f"max_flow must be positive, got {self.max_flow}")
        if self.padding not in PADDING_MODES:
            raise ValueError(f"padding must be one of {PADDING_MODES}, got {self.padding!r}")


@dataclass
class RecurrentState:
    """State threaded across frames: the previous HR estimate."""

    prev_hr: torch.Tensor


def initial_step_sizes(iterations: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Per-block step sizes at construction time: 2^-k for block k."""
    if iterations < 0:
        raise ValueError(f"iterations must be >= 0, got {iterations}")
    return torch.tensor([2.0**-k for k in range(iterations)], dtype=dtype)


def _check_same_shape(name_a, a, name_b, b):
    if a.shape != b.shape:
        raise ValueError(
            f"{name_a} shape {tuple(a.shape)} does not match {name_b} shape {tuple(b.shape)}"
        )


# ---------------------------------------------------------------------------
# Single-image solver
# ---------------------------------------------------------------------------


def sisr_data_step(
    x_k: torch.Tensor,
    z_k: torch.Tensor | None,
    x0: torch.Tensor,
    alpha_k,
    kernel: KernelArg,
    s: int,
    padding: str = "replicate",
) -> torch.Tensor:
    """One single-image refinement: x + z - alpha * A'(A x) + alpha * x0.

    ``A`` is blur-then-decimate and ``A'`` its approximate adjoint
    (backprojection); ``x0`` is the backprojected observation, so the last two
    terms together equal ``-alpha * A'(A x - y)``.  ``z_k`` may be None to
    skip the prior increment (classical mode).
    """
    _check_same_shape("x_k", x_k, "x0", x0)
    if z_k is not None:
        _check_same_shape("z_k", z_k, "x_k", x_k)
    descent = backproject(downsample(blur(x_k, kernel, padding), s), kernel, s, padding)
    out = x_k - alpha_k * descent + alpha_k * x0
    if z_k is not None:
        out = out + z_k
    return out


def sisr_solve(
    y: torch.Tensor,
    kernel: KernelArg,
    config: UnrolledConfig,
    priors: Sequence[Callable[[torch.Tensor], torch.Tensor]] | None = None,
    alphas: Sequence | None = None,
) -> torch.Tensor:
    """Unrolled single-image super-resolution.

    Starts from the backprojection of ``y`` and runs ``config.iterations``
    blocks of prior step + data step.  In classical mode the prior increment
    is skipped; otherwise ``priors`` must supply one callable per block
    mapping the HR iterate to its additive increment.  ``alphas`` overrides
    the per-block step sizes (default: the 2^-k initialization policy).
    """
    if not config.classical_mode and priors is None:
        raise RuntimeError("learned mode needs per-block priors; pass priors or use classical_mode")
    if priors is not None and len(priors) < config.iterations:
        raise ValueError(f"need {config.iterations} priors, got {len(priors)}")
    if alphas is None:
        alphas = initial_step_sizes(config.iterations, dtype=torch.float64)
    elif len(alphas) < config.iterations:
        raise ValueError(f"need {config.iterations} step sizes, got {len(alphas)}")
    s, padding = config.scale, config.padding
    x0 = backproject(y, kernel, s, padding)
    x = x0
    for k in range(config.iterations):
        z = None if config.classical_mode else priors[k](x)
        x = sisr_data_step(x, z, x0, alphas[k], kernel, s, padding)
    return x


# ---------------------------------------------------------------------------
# Video solver
# ---------------------------------------------------------------------------


def uvsr_data_step(
    x_k: torch.Tensor,
    z_k: torch.Tensor | None,
    y_t: torch.Tensor,
    y_prev: torch.Tensor,
    flow_to_prev: torch.Tensor,
    flow_to_curr: torch.Tensor,
    alpha_k,
    beta_k,
    kernel: KernelArg,
    s: int,
    padding: str = "replicate",
) -> torch.Tensor:
    """One video refinement with two data-consistency terms.

    The current-frame term backprojects the LR residual of ``x_k`` against
    ``y_t``.  The previous-frame term aligns ``x_k`` to the previous frame
    with ``flow_to_prev``, backprojects its residual against ``y_prev``, and
    carries the correction back with ``flow_to_curr``.  Both HR flows live on
    the HR grid of ``x_k``.
    """
    _check_same_shape("y_t", y_t, "y_prev", y_prev)
    if z_k is not None:
        _check_same_shape("z_k", z_k, "x_k", x_k)
    resid_t = downsample(blur(x_k, kernel, padding), s) - y_t
    term_t = backproject(resid_t, kernel, s, padding)
    resid_prev = downsample(blur(warp(x_k, flow_to_prev), kernel, padding), s) - y_prev
    term_prev = warp(backproject(resid_prev, kernel, s, padding), flow_to_curr)
    out = x_k - alpha_k * term_t - beta_k * term_prev
    if z_k is not None:
        out = out + z_k
    return out


def initial_state(y0: torch.Tensor, kernel: KernelArg, config: UnrolledConfig) -> RecurrentState:
    """Recurrence start: the previous HR estimate is the backprojected first frame."""
    return RecurrentState(prev_hr=backproject(y0, kernel, config.scale, config.padding))


def uvsr_frame(
    y_t: torch.Tensor,
    y_prev: torch.Tensor,
    state: RecurrentState,
    kernel: KernelArg,
    config: UnrolledConfig,
    model=None,
    flows_lr: tuple[torch.Tensor, torch.Tensor] | None = None,
    step_sizes: tuple[Sequence, Sequence] | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Reconstruct one HR frame from the current/previous LR frames and state.

    Workflow: backproject ``y_t`` as the initial iterate; estimate both LR
    flow directions (two passes of ``model.fnet``, or ``flows_lr`` when
    forced); upsample the flows to the HR grid; warp the previous HR estimate
    toward the current frame; then run ``config.iterations`` blocks of
    {prior CNN on the depth-packed iterate and warped previous estimate,
    unpack, two-term data step}.

    Returns ``(x_t, flow_prev_to_curr_lr, flow_curr_to_prev_lr)``.

    ``flows_lr`` is ``(flow_prev_to_curr_lr, flow_curr_to_prev_lr)`` where
    "prev to curr" warps the previous frame onto the current one.  In
    classical mode with no model and no forced flows, zero flows are used
    (static-scene assumption).
    """
    if state is None:
        raise RuntimeError("missing recurrent state; build one with initial_state()")
    _check_same_shape("y_t", y_t, "y_prev", y_prev)
    squeeze = y_t.ndim == 3
    if squeeze:
        y_t, y_prev = y_t.unsqueeze(0), y_prev.unsqueeze(0)
    prev_hr = state.prev_hr
    if prev_hr.ndim == 3:
        prev_hr = prev_hr.unsqueeze(0)
    s, padding = config.scale, config.padding
    h, w = y_t.shape[-2], y_t.shape[-1]
    if prev_hr.shape[-2:] != (s * h, s * w) or prev_hr.shape[:-2] != y_t.shape[:-2]:
        raise ValueError(
            f"previous HR estimate shape {tuple(prev_hr.shape)} does not match "
            f"{tuple(y_t.shape[:-2]) + (s * h, s * w)}"
        )

    if flows_lr is not None:
        flow_p2c_lr, flow_c2p_lr = flows_lr
        if squeeze and flow_p2c_lr.ndim == 3:
            flow_p2c_lr = flow_p2c_lr.unsqueeze(0)
            flow_c2p_lr = flow_c2p_lr.unsqueeze(0)
    elif model is not None:
        flow_c2p_lr = model.fnet(y_prev, y_t)
        flow_p2c_lr = model.fnet(y_t, y_prev)
    elif config.classical_mode:
        flow_p2c_lr = y_t.new_zeros(y_t.shape[0], 2, h, w)
        flow_c2p_lr = y_t.new_zeros(y_t.shape[0], 2, h, w)
    else:
        raise RuntimeError("learned mode needs a model; pass model= or force flows_lr=")

    if step_sizes is not None:
        alphas, betas = step_sizes
    elif model is not None:
        alphas, betas = model.alpha, model.beta
    else:
        init = initial_step_sizes(config.iterations, dtype=torch.float64)
        alphas, betas = init, init

    flow_to_prev = upsample_flow(flow_c2p_lr, s)
    flow_to_curr = upsample_flow(flow_p2c_lr, s)
    warped_prev = warp(prev_hr, flow_to_curr)
    warped_prev_lr = space_to_depth(warped_prev, s)

    x = backproject(y_t, kernel, s, padding)
    for k in range(config.iterations):
        if config.classical_mode:
            z = None
        else:
            if model is None:
                raise RuntimeError("learned mode needs a model with per-block priors")
            x_lr = space_to_depth(x, s)
            z = depth_to_space(model.priors[k](x_lr, warped_prev_lr), s)
        x = uvsr_data_step(
            x, z, y_t, y_prev, flow_to_prev, flow_to_curr, alphas[k], betas[k], kernel, s, padding
        )

    if squeeze:
        return x.squeeze(0), flow_p2c_lr.squeeze(0), flow_c2p_lr.squeeze(0)
    return x, flow_p2c_lr, flow_c2p_lr


def uvsr_sequence(
    y: torch.Tensor,
    kernel: KernelArg,
    config: UnrolledConfig,
    model=None,
    detach_state: bool = False,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Reconstruct a whole clip by threading the recurrence over frames.

    ``y`` is ``[T, C, h, w]`` or ``[B, T, C, h, w]``.  The first frame uses
    the recurrence-start policy (backprojected first frame as previous
    estimate, zero flows).  Returns stacked HR frames and both LR flow
    sequences, with zeros in the first frame's flow slots.  With
    ``detach_state`` the previous estimate is cut from the autograd graph
    between frames; the default backpropagates through the full clip.
    """
    if y.ndim == 4:
        xs, f_p2c, f_c2p = uvsr_sequence(y.unsqueeze(0), kernel, config, model, detach_state)
        return xs.squeeze(0), f_p2c.squeeze(0), f_c2p.squeeze(0)
    if y.ndim != 5:
        raise ValueError(f"expected [B, T, C, h, w] or [T, C, h, w], got shape {tuple(y.shape)}")
    if y.shape[1] == 0:
        raise ValueError("need at least one frame")

    b, t_len, _, h, w = y.shape
    state = initial_state(y[:, 0], kernel, config)
    zero_flows = (
        y.new_zeros(b, 2, h, w),
        y.new_zeros(b, 2, h, w),
    )
    xs, flows_p2c, flows_c2p = [], [], []
    for t in range(t_len):
        flows = zero_flows if t == 0 else None
        y_prev = y[:, 0] if t == 0 else y[:, t - 1]
        x_t, f_p2c, f_c2p = uvsr_frame(
            y[:, t], y_prev, state, kernel, config, model=model, flows_lr=flows
        )
        xs.append(x_t)
        flows_p2c.append(f_p2c)
        flows_c2p.append(f_c2p)
        state = RecurrentState(prev_hr=x_t.detach() if detach_state else x_t)
    return torch.stack(xs, dim=1), torch.stack(flows_p2c, dim=1), torch.stack(flows_c2p, dim=1)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def data_step_gradient_check(
    x: torch.Tensor,
    y_t: torch.Tensor,
    y_prev: torch.Tensor,
    flows: tuple[torch.Tensor, torch.Tensor],
    kernel: BlurKernel,
    s: int,
    eps: float = 1e-5,
) -> dict:
    """Compare both data-step directions against central finite differences.

    Uses the exact-adjoint regime: periodic blur (self-adjoint), plain
    zero-insertion as the decimation transpose, and the exact warp transpose.
    The energies are 0.5 * sum of squared LR residuals of the current-frame
    and previous-frame terms.  Also evaluates the reconstruction-time
    approximate directions (bilinear fill, reverse-flow warp) against the
    same finite differences; those deviations are reported, not asserted.

    ``flows`` is ``(flow_to_curr, flow_to_prev)`` on the HR grid.  Returns
    a dict with per-term max relative deviations.
    """
    if x.dtype != torch.float64:
        raise ValueError("finite-difference check requires float64 inputs")
    flow_to_curr, flow_to_prev = flows

    def energy_t(v):
        r = downsample(blur(v, kernel, "periodic"), s) - y_t
        return 0.5 * (r * r).sum()

    def energy_prev(v):
        r = downsample(blur(warp(v, flow_to_prev), kernel, "periodic"), s) - y_prev
        return 0.5 * (r * r).sum()

    def fd_gradient(energy):
        base = x.clone()
        flat = base.reshape(-1)  # view of the contiguous clone
        g = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            e_plus = energy(base).item()
            flat[i] = orig - eps
            e_minus = energy(base).item()
            flat[i] = orig
            g[i] = (e_plus - e_minus) / (2.0 * eps)
        return g.reshape(x.shape)

    resid_t = downsample(blur(x, kernel, "periodic"), s) - y_t
    exact_t = blur(upsample_zeros(resid_t, s), kernel, "periodic")
    approx_t = blur(bilinear_fill(upsample_zeros(resid_t, s), s), kernel, "periodic")

    resid_prev = downsample(blur(warp(x, flow_to_prev), kernel, "periodic"), s) - y_prev
    back_prev_exact = blur(upsample_zeros(resid_prev, s), kernel, "periodic")
    exact_prev = warp_adjoint(back_prev_exact, flow_to_prev)
    back_prev_approx = blur(bilinear_fill(upsample_zeros(resid_prev, s), s), kernel, "periodic")
    approx_prev = warp(back_prev_approx, flow_to_curr)

    def max_rel_dev(g, fd):
        scale = max(fd.abs().max().item(), 1e-300)
        return (g - fd).abs().max().item() / scale

    fd_t = fd_gradient(energy_t)
    fd_prev = fd_gradient(energy_prev)
    return {
        "current_term": {
            "exact_max_rel_dev": max_rel_dev(exact_t, fd_t),
            "approx_max_rel_dev": max_rel_dev(approx_t, fd_t),
        },
        "previous_term": {
            "exact_max_rel_dev": max_rel_dev(exact_prev, fd_prev),
            "approx_max_rel_dev": max_rel_dev(approx_prev, fd_prev),
        },
    }
