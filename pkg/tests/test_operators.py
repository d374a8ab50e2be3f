"""Unit and property tests for the imaging operators."""

import math

import numpy as np
import pytest
import torch

from oracles import blur_reference, fill_reference, gaussian_taps_2d, warp_reference
from unrollsr import operators as ops


def inner(a, b):
    return (a * b).sum().item()


def rel_diff(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def rand_image(rng, shape):
    return torch.from_numpy(rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# Gaussian kernels
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "sigma, size",
    [(1.6, 11), (2.825, 19), (0.375, 5), (1.0, 7)],
)
def test_gaussian_kernel_support(sigma, size):
    k = ops.make_gaussian_kernel(sigma)
    assert k.size == size
    assert k.radius == math.ceil(3 * sigma)


def test_gaussian_kernel_matches_direct_formula(rng):
    for sigma in (0.5, 1.6, 2.825):
        k = ops.make_gaussian_kernel(sigma)
        expected = gaussian_taps_2d(sigma, k.radius)
        assert np.abs(k.taps - expected).max() < 1e-14


def test_gaussian_kernel_normalized_and_symmetric():
    k = ops.make_gaussian_kernel(1.6)
    assert abs(k.taps.sum() - 1.0) < 1e-12
    assert np.array_equal(k.taps, k.taps[::-1, :])
    assert np.array_equal(k.taps, k.taps[:, ::-1])
    assert k.taps.argmax() == (k.size * k.size) // 2


def test_gaussian_kernel_rejects_bad_sigma():
    with pytest.raises(ValueError):
        ops.make_gaussian_kernel(0.0)
    with pytest.raises(ValueError):
        ops.make_gaussian_kernel(-1.6)


def test_blur_kernel_validates_taps():
    good = ops.make_gaussian_kernel(1.0)
    with pytest.raises(ValueError):
        ops.BlurKernel(taps=good.taps * 2.0, taps_1d=good.taps_1d, sigma=1.0)
    with pytest.raises(ValueError):
        ops.BlurKernel(taps=np.ones((4, 4)) / 16.0, taps_1d=np.ones(4) / 4.0, sigma=1.0)
    lopsided = good.taps.copy()
    lopsided[0, 0] += 0.1
    lopsided[-1, -1] -= 0.1
    with pytest.raises(ValueError):
        ops.BlurKernel(taps=lopsided, taps_1d=good.taps_1d, sigma=1.0)


# ---------------------------------------------------------------------------
# Blur
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("padding", ["replicate", "periodic"])
def test_blur_matches_full_2d_reference(rng, padding):
    x = rand_image(rng, (3, 12, 16))
    for sigma in (0.6, 1.1):
        k = ops.make_gaussian_kernel(sigma)
        got = ops.blur(x, k, padding=padding).numpy()
        want = blur_reference(x.numpy(), k.taps, padding)
        assert np.abs(got - want).max() < 1e-12


def test_blur_identity_for_delta_kernel(rng):
    x = rand_image(rng, (2, 3, 8, 8))
    k = ops.make_gaussian_kernel(1.0, radius=0)
    assert torch.equal(ops.blur(x, k), x)


@pytest.mark.parametrize("padding", ["replicate", "periodic"])
def test_blur_preserves_constants(padding):
    x = torch.full((1, 3, 16, 16), 0.7, dtype=torch.float64)
    out = ops.blur(x, ops.make_gaussian_kernel(1.6), padding=padding)
    assert (out - 0.7).abs().max().item() <= 1e-12


def test_blur_periodic_is_self_adjoint(rng):
    k = ops.make_gaussian_kernel(1.6)
    for _ in range(5):
        x = rand_image(rng, (1, 3, 16, 16))
        y = rand_image(rng, (1, 3, 16, 16))
        lhs = inner(ops.blur(x, k, padding="periodic"), y)
        rhs = inner(x, ops.blur(y, k, padding="periodic"))
        assert rel_diff(lhs, rhs) <= 1e-12


def test_blur_per_sample_kernels_match_individual_calls(rng):
    x = rand_image(rng, (3, 2, 12, 12))
    kernels = [ops.make_gaussian_kernel(s) for s in (0.5, 1.0, 1.6)]
    batched = ops.blur(x, kernels)
    for i, k in enumerate(kernels):
        single = ops.blur(x[i : i + 1], k)
        assert (batched[i : i + 1] - single).abs().max().item() < 1e-12


def test_blur_rejects_oversized_kernel_and_bad_padding(rng):
    x = rand_image(rng, (1, 1, 8, 8))
    with pytest.raises(ValueError):
        ops.blur(x, ops.make_gaussian_kernel(1.6))  # 11x11 taps on 8x8 image
    with pytest.raises(ValueError):
        ops.blur(x, ops.make_gaussian_kernel(0.5), padding="reflect")
    with pytest.raises(ValueError):
        ops.blur(x, [ops.make_gaussian_kernel(0.5)] * 3)  # batch is 1, not 3


# ---------------------------------------------------------------------------
# Decimation / zero-insertion
# ---------------------------------------------------------------------------


def test_downsample_keeps_phase_zero_samples(rng):
    x = rand_image(rng, (1, 1, 8, 8))
    y = ops.downsample(x, 2)
    assert y.shape == (1, 1, 4, 4)
    assert torch.equal(y[0, 0], x[0, 0][::2, ::2])


def test_downsample_requires_divisible_dims(rng):
    with pytest.raises(ValueError):
        ops.downsample(rand_image(rng, (1, 1, 9, 8)), 2)
    with pytest.raises(ValueError):
        ops.downsample(rand_image(rng, (1, 1, 8, 8)), 3)
    with pytest.raises(ValueError):
        ops.downsample(rand_image(rng, (1, 1, 8, 8)), 0)


def test_downsample_of_zero_insertion_is_identity(rng):
    for s in (1, 2, 4):
        y = rand_image(rng, (2, 3, 6, 8))
        assert torch.equal(ops.downsample(ops.upsample_zeros(y, s), s), y)


def test_zero_insertion_is_exact_adjoint_of_decimation(rng):
    for s in (2, 4):
        for _ in range(5):
            x = rand_image(rng, (1, 3, 8 * s, 6 * s))
            y = rand_image(rng, (1, 3, 8, 6))
            lhs = inner(ops.downsample(x, s), y)
            rhs = inner(x, ops.upsample_zeros(y, s))
            assert rel_diff(lhs, rhs) <= 1e-12


def test_upsample_zeros_places_samples_on_coarse_lattice(rng):
    y = rand_image(rng, (1, 1, 3, 3))
    z = ops.upsample_zeros(y, 2)
    assert z.shape == (1, 1, 6, 6)
    assert torch.equal(z[..., ::2, ::2], y)
    mask = torch.ones(6, 6, dtype=torch.bool)
    mask[::2, ::2] = False
    assert (z[0, 0][mask] == 0).all()


# ---------------------------------------------------------------------------
# Bilinear fill
# ---------------------------------------------------------------------------


def test_bilinear_fill_1d_closed_form():
    # Zero-inserted 1x2 image at s = 2: each row becomes [a, (a+b)/2, b, b]
    # and the single coarse row replicates downward.
    z = torch.tensor([[[3.0, 0.0, 7.0, 0.0], [0.0, 0.0, 0.0, 0.0]]], dtype=torch.float64)
    out = ops.bilinear_fill(z, 2)
    want = torch.tensor([[[3.0, 5.0, 7.0, 7.0], [3.0, 5.0, 7.0, 7.0]]], dtype=torch.float64)
    assert torch.equal(out, want)


def test_bilinear_fill_matches_loop_reference(rng):
    for s in (2, 3, 4):
        y = rand_image(rng, (2, 3, 4))
        z = ops.upsample_zeros(y, s)
        got = ops.bilinear_fill(z, s).numpy()
        want = fill_reference(z.numpy(), s)
        assert np.abs(got - want).max() < 1e-14


def test_bilinear_fill_keeps_retained_samples(rng):
    y = rand_image(rng, (1, 2, 5, 4))
    for s in (2, 4):
        out = ops.bilinear_fill(ops.upsample_zeros(y, s), s)
        assert torch.equal(out[..., ::s, ::s], y)


def test_bilinear_fill_is_exact_on_linear_ramps():
    # A plane a*i + b*j + c restricted to the coarse lattice interpolates back
    # exactly everywhere before the replicate tail.
    s = 4
    h = w = 16
    ii, jj = torch.meshgrid(
        torch.arange(h, dtype=torch.float64),
        torch.arange(w, dtype=torch.float64),
        indexing="ij",
    )
    plane = (0.25 * ii - 0.5 * jj + 3.0).unsqueeze(0)
    out = ops.bilinear_fill(ops.upsample_zeros(plane[..., ::s, ::s], s), s)
    interior = out[..., : s * (h // s - 1) + 1, : s * (w // s - 1) + 1]
    want = plane[..., : s * (h // s - 1) + 1, : s * (w // s - 1) + 1]
    assert (interior - want).abs().max().item() < 1e-12


def test_bilinear_fill_s1_is_identity(rng):
    z = rand_image(rng, (1, 1, 5, 5))
    assert torch.equal(ops.bilinear_fill(z, 1), z)


# ---------------------------------------------------------------------------
# Backprojection
# ---------------------------------------------------------------------------


def test_backproject_composition_and_shape(rng):
    y = rand_image(rng, (1, 3, 6, 8))
    k = ops.make_gaussian_kernel(0.8)
    got = ops.backproject(y, k, 4)
    want = ops.blur(ops.bilinear_fill(ops.upsample_zeros(y, 4), 4), k)
    assert torch.equal(got, want)
    assert got.shape == (1, 3, 24, 32)


def test_backproject_preserves_constants():
    y = torch.full((1, 3, 8, 8), 0.25, dtype=torch.float64)
    out = ops.backproject(y, ops.make_gaussian_kernel(1.6), 4)
    assert (out - 0.25).abs().max().item() <= 1e-12


# ---------------------------------------------------------------------------
# Space-to-depth
# ---------------------------------------------------------------------------


def test_space_to_depth_channel_order():
    x = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = ops.space_to_depth(x, 2)
    assert out.shape == (1, 4, 1, 1)
    assert torch.equal(out.flatten(), torch.tensor([1.0, 2.0, 3.0, 4.0]))


def test_space_to_depth_roundtrip(rng):
    for s in (1, 2, 4):
        x = rand_image(rng, (2, 3, 8, 8))
        packed = ops.space_to_depth(x, s)
        assert packed.shape == (2, 3 * s * s, 8 // s, 8 // s)
        assert torch.equal(ops.depth_to_space(packed, s), x)


def test_space_to_depth_rejects_bad_dims(rng):
    with pytest.raises(ValueError):
        ops.space_to_depth(rand_image(rng, (1, 1, 6, 6)), 4)
    with pytest.raises(ValueError):
        ops.depth_to_space(rand_image(rng, (1, 6, 4, 4)), 2)


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------


def test_warp_zero_flow_is_bitwise_identity(rng):
    x = rand_image(rng, (2, 3, 7, 9))
    flow = torch.zeros(2, 2, 7, 9, dtype=torch.float64)
    assert torch.equal(ops.warp(x, flow), x)


def test_warp_integer_flow_is_exact_shift(rng):
    x = rand_image(rng, (1, 1, 6, 8))
    flow = torch.zeros(1, 2, 6, 8, dtype=torch.float64)
    flow[:, 0] = 2.0  # sample from 2 columns to the right
    out = ops.warp(x, flow)
    assert torch.equal(out[..., :, :-2], x[..., :, 2:])
    assert torch.equal(out[..., :, -2:], x[..., :, -1:].expand(1, 1, 6, 2))


def test_warp_matches_loop_reference(rng):
    x = rand_image(rng, (3, 10, 11))
    for scale in (0.5, 3.0, 20.0):  # includes flows that leave the frame
        flow = torch.from_numpy(rng.standard_normal((2, 10, 11)) * scale)
        got = ops.warp(x, flow).numpy()
        want = warp_reference(x.numpy(), flow.numpy())
        assert np.abs(got - want).max() < 1e-12


def test_warp_shape_validation(rng):
    x = rand_image(rng, (1, 3, 8, 8))
    with pytest.raises(ValueError):
        ops.warp(x, torch.zeros(1, 3, 8, 8, dtype=torch.float64))
    with pytest.raises(ValueError):
        ops.warp(x, torch.zeros(1, 2, 4, 4, dtype=torch.float64))


def test_warp_adjoint_identity(rng):
    for _ in range(5):
        x = rand_image(rng, (1, 3, 9, 9))
        r = rand_image(rng, (1, 3, 9, 9))
        flow = torch.from_numpy(rng.standard_normal((1, 2, 9, 9)) * 2.5)
        lhs = inner(ops.warp(x, flow), r)
        rhs = inner(x, ops.warp_adjoint(r, flow))
        assert rel_diff(lhs, rhs) <= 1e-12


def test_warp_adjoint_of_flip_flow_is_flip(rng):
    # u(i, j) = (w - 1 - 2j, 0) permutes columns; the permutation is an
    # involution so the adjoint equals the warp itself.
    x = rand_image(rng, (1, 1, 4, 6))
    jj = torch.arange(6, dtype=torch.float64)
    flow = torch.zeros(1, 2, 4, 6, dtype=torch.float64)
    flow[:, 0] = (6 - 1 - 2 * jj).reshape(1, 1, 6)
    flipped = ops.warp(x, flow)
    assert torch.equal(flipped, torch.flip(x, dims=[-1]))
    assert torch.equal(ops.warp_adjoint(x, flow), flipped)


def test_warp_is_differentiable_in_image_and_flow(rng):
    x = rand_image(rng, (1, 1, 5, 5)).requires_grad_(True)
    flow = (torch.from_numpy(rng.uniform(-0.8, 0.8, (1, 2, 5, 5))) + 0.1).requires_grad_(True)
    assert torch.autograd.gradcheck(ops.warp, (x, flow), atol=1e-8)


# ---------------------------------------------------------------------------
# Flow upsampling
# ---------------------------------------------------------------------------


def test_upsample_flow_scales_displacements():
    flow = torch.zeros(1, 2, 3, 3, dtype=torch.float64)
    flow[:, 0] = 1.5
    flow[:, 1] = -0.5
    out = ops.upsample_flow(flow, 4)
    assert out.shape == (1, 2, 12, 12)
    assert (out[:, 0] - 6.0).abs().max().item() < 1e-12
    assert (out[:, 1] + 2.0).abs().max().item() < 1e-12


def test_upsample_flow_of_matching_ramp_is_exact():
    # LR horizontal displacement u(j) = j maps to HR displacement J on the
    # interpolated region: values scale by s and the grid refines by s.
    s = 2
    w = 6
    flow = torch.zeros(1, 2, 4, w, dtype=torch.float64)
    flow[:, 0] = torch.arange(w, dtype=torch.float64).reshape(1, 1, w)
    out = ops.upsample_flow(flow, s)
    hr_j = torch.arange(s * (w - 1) + 1, dtype=torch.float64)
    assert (out[0, 0, 0, : s * (w - 1) + 1] - hr_j).abs().max().item() < 1e-12


def test_upsample_flow_s1_identity(rng):
    flow = torch.from_numpy(rng.standard_normal((1, 2, 4, 4)))
    assert torch.equal(ops.upsample_flow(flow, 1), flow)
