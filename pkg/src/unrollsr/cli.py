"""Command-line front end.

Subcommands:

* ``degrade``  -- render a low-resolution copy of a high-resolution dataset,
  recording the blur width drawn for every sequence in a manifest.
* ``train``    -- fit the unrolled model on a directory of HR sequences.
* ``infer``    -- reconstruct an LR sequence with a checkpoint (or with the
  learning-free solver via ``--classical``).
* ``eval``     -- score reconstructed sequences against ground truth.
* ``selftest`` -- run fast numerical property checks; nonzero exit on failure.

Every command that produces files writes the resolved configuration as
``config.json`` next to its outputs.  The compute device is taken from the
``UNROLLSR_DEVICE`` environment variable (default ``cpu``).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import dataio, evaluation
from .degradation import (
    DegradationSpec,
    SigmaSampler,
    center_crop_to_multiple,
    degrade_sequence,
    sample_sigma,
)
from .networks import count_parameters, load_checkpoint
from .operators import (
    blur,
    bilinear_fill,
    depth_to_space,
    downsample,
    make_gaussian_kernel,
    space_to_depth,
    upsample_zeros,
    warp,
    warp_adjoint,
)
from .training import TrainConfig, train
from .unrolled import UnrolledConfig, data_step_gradient_check, uvsr_sequence

DEVICE_ENV_VAR = "UNROLLSR_DEVICE"


class CommandError(Exception):
    """Operational failure with a message for stderr and exit code 1."""


def _device() -> str:
    return os.environ.get(DEVICE_ENV_VAR, "cpu")


def _sigma_sampler(args) -> SigmaSampler:
    if args.sigma_range is not None:
        low, high = args.sigma_range
        return SigmaSampler(mode="uniform", low=low, high=high)
    return SigmaSampler(mode="fixed", fixed_value=args.sigma)


def _resolved_config(args) -> dict:
    """The effective settings of this run, JSON-ready."""
    payload = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "config"):
            continue
        if isinstance(value, Path):
            value = str(value)
        payload[key] = value
    payload["device"] = _device()
    return payload


def _write_run_config(out_dir, args) -> None:
    dataio.write_json(Path(out_dir) / "config.json", _resolved_config(args))


# ---------------------------------------------------------------------------
# degrade


def cmd_degrade(args) -> int:
    rng = np.random.default_rng(args.seed)
    sampler = _sigma_sampler(args)
    out_dir = Path(args.out)
    entries = []
    for name, seq_dir in dataio.discover_sequences(args.input):
        hr = center_crop_to_multiple(dataio.load_sequence(seq_dir), args.scale)
        sigma = sample_sigma(sampler, rng)
        lr = degrade_sequence(hr, DegradationSpec(sigma=sigma, scale=args.scale))
        dataio.save_sequence(out_dir / name, lr)
        entries.append(
            {
                "name": name,
                "source": str(seq_dir),
                "frames": int(lr.shape[0]),
                "scale": args.scale,
                "sigma": sigma,
            }
        )
        print(f"degraded {name}: {lr.shape[0]} frames, sigma={sigma:.4f}")
    dataio.write_json(out_dir / "manifest.json", {"seed": args.seed, "sequences": entries})
    _write_run_config(out_dir, args)
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    clips = [dataio.load_sequence(d) for _, d in dataio.discover_sequences(args.data)]
    solver_config = UnrolledConfig(
        scale=args.scale,
        channels=clips[0].shape[1],
        iterations=args.iterations,
        prior_depth=args.prior_depth,
        prior_filters=args.prior_filters,
    )
    train_config = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        clip_length=args.clip_length,
        crop_size=args.crop_size,
        sigma=_sigma_sampler(args),
        augment=not args.no_augment,
        detach_state=args.detach_state,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    model, log_rows = train(clips, train_config, solver_config, out_dir=out_dir, device=_device())
    print(
        f"trained {args.steps} steps on {len(clips)} clips "
        f"({count_parameters(model)} parameters); final loss {log_rows[-1]['total']:.6f}"
    )
    return 0


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args) -> int:
    if args.checkpoint is None and not args.classical:
        raise CommandError("inference needs --checkpoint unless --classical is given")
    device = _device()
    if args.classical:
        model = None
        config = UnrolledConfig(
            scale=args.scale, iterations=args.iterations, classical_mode=True
        )
    else:
        try:
            model, _ = load_checkpoint(args.checkpoint)
        except FileNotFoundError as exc:
            raise CommandError(str(exc)) from exc
        model = model.to(device).eval()
        config = model.config
    kernel = make_gaussian_kernel(args.sigma)
    out_dir = Path(args.out)
    for name, seq_dir in dataio.discover_sequences(args.input):
        y = dataio.load_sequence(seq_dir).to(device)
        if model is not None and y.shape[1] != config.channels:
            raise CommandError(
                f"{name}: {y.shape[1]} channels, model expects {config.channels}"
            )
        start = time.perf_counter()
        with torch.no_grad():
            xs, _, _ = uvsr_sequence(y, kernel, config, model=model)
        elapsed = time.perf_counter() - start
        dataio.save_sequence(out_dir / name, xs.clamp(0.0, 1.0).cpu())
        print(f"reconstructed {name}: {xs.shape[0]} frames in {elapsed:.2f}s")
    _write_run_config(out_dir, args)
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    preds = dict(dataio.discover_sequences(args.pred))
    gts = dict(dataio.discover_sequences(args.gt))
    if set(preds) != set(gts):
        raise CommandError(
            f"sequence names differ: predictions {sorted(preds)} vs ground truth {sorted(gts)}"
        )
    results = []
    for name in sorted(preds):
        pred = dataio.load_sequence(preds[name])
        gt = dataio.load_sequence(gts[name])
        results.append(
            evaluation.SequenceResult(
                name=name,
                psnr_db=evaluation.psnr_video(pred, gt),
                ssim=evaluation.ssim_video(pred, gt),
            )
        )
    report = evaluation.EvalReport(sequences=tuple(results))
    print(report.summary())
    if args.out is not None:
        out_dir = Path(args.out)
        _write_run_config(out_dir, args)
        report.write_csv(out_dir / "report.csv")
    return 0


# ---------------------------------------------------------------------------
# selftest


def _selftest_checks(seed: int):
    """Yield (name, passed, detail) for each fast numerical property."""
    gen = torch.Generator().manual_seed(seed)

    def rand(*shape):
        return torch.rand(*shape, generator=gen, dtype=torch.float64)

    for s in (2, 4):
        x = rand(2, 3, 8 * s, 6 * s)
        y = rand(2, 3, 8, 6)
        lhs = (downsample(x, s) * y).sum()
        rhs = (x * upsample_zeros(y, s)).sum()
        rel = abs((lhs - rhs).item()) / max(abs(lhs.item()), 1e-30)
        yield f"sampling adjoint (scale {s})", rel <= 1e-12, f"rel dev {rel:.3e}"

    kernel = make_gaussian_kernel(1.6)
    a, b = rand(1, 3, 32, 32), rand(1, 3, 32, 32)
    lhs = (blur(a, kernel, padding="periodic") * b).sum()
    rhs = (a * blur(b, kernel, padding="periodic")).sum()
    rel = abs((lhs - rhs).item()) / abs(lhs.item())
    yield "periodic blur self-adjoint", rel <= 1e-12, f"rel dev {rel:.3e}"

    x = rand(1, 3, 12, 16)
    ramp = torch.arange(16, dtype=torch.float64).expand(1, 1, 12, 16)
    filled = bilinear_fill(upsample_zeros(downsample(ramp, 2), 2), 2)
    dev = (filled[..., :14] - ramp[..., :14]).abs().max().item()
    yield "interpolated fill on linear ramp", dev == 0.0, f"max dev {dev:.3e}"

    packed = depth_to_space(space_to_depth(x, 2), 2)
    yield "pixel shuffle round trip", torch.equal(packed, x), "bitwise"

    flow = (rand(1, 2, 12, 16) - 0.5) * 4
    r = rand(1, 3, 12, 16)
    lhs = (warp(x, flow) * r).sum()
    rhs = (x * warp_adjoint(r, flow)).sum()
    rel = abs((lhs - rhs).item()) / abs(lhs.item())
    yield "warp adjoint", rel <= 1e-12, f"rel dev {rel:.3e}"

    zero = torch.zeros(1, 2, 12, 16, dtype=torch.float64)
    yield "zero-flow warp identity", torch.equal(warp(x, zero), x), "bitwise"

    s = 2
    report = data_step_gradient_check(
        x=rand(1, 3, 8, 8),
        y_t=rand(1, 3, 4, 4),
        y_prev=rand(1, 3, 4, 4),
        flows=((rand(1, 2, 8, 8) - 0.5) * 2, (rand(1, 2, 8, 8) - 0.5) * 2),
        kernel=make_gaussian_kernel(0.8),
        s=s,
    )
    for term in ("current_term", "previous_term"):
        dev = report[term]["exact_max_rel_dev"]
        yield f"data step gradient ({term})", dev < 1e-5, f"max rel dev {dev:.3e}"


def cmd_selftest(args) -> int:
    failures = 0
    for name, passed, detail in _selftest_checks(args.seed):
        status = "PASS" if passed else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failures += 0 if passed else 1
    print(f"selftest: {failures} failure(s)")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# parser


def _add_sigma_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sigma", type=float, default=1.6, help="fixed blur width")
    parser.add_argument(
        "--sigma-range",
        type=float,
        nargs=2,
        metavar=("LO", "HI"),
        default=None,
        help="draw blur width uniformly per sequence instead of --sigma",
    )


def _build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="unrollsr", description="Unrolled video super-resolution toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = sub.add_parser("degrade", help="render an LR copy of an HR dataset")
    p.add_argument("--input", type=Path, required=True, help="HR dataset directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None, help="JSON file of defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=4)
    _add_sigma_flags(p)
    p.set_defaults(func=cmd_degrade)
    commands["degrade"] = p

    p = sub.add_parser("train", help="fit the model on HR sequences")
    p.add_argument("--data", type=Path, required=True, help="HR dataset directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None, help="JSON file of defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=4)
    _add_sigma_flags(p)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--clip-length", type=int, default=10)
    p.add_argument("--crop-size", type=int, default=256, help="HR crop edge in pixels")
    p.add_argument("--iterations", type=int, default=3, help="unrolled block count")
    p.add_argument("--prior-depth", type=int, default=7)
    p.add_argument("--prior-filters", type=int, default=128)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--no-augment", action="store_true", help="disable flip augmentation")
    p.add_argument(
        "--detach-state", action="store_true", help="cut gradients between frames"
    )
    p.set_defaults(func=cmd_train)
    commands["train"] = p

    p = sub.add_parser("infer", help="reconstruct LR sequences")
    p.add_argument("--input", type=Path, required=True, help="LR dataset directory")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None, help="JSON file of defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument(
        "--classical", action="store_true", help="learning-free solver, no checkpoint"
    )
    p.add_argument("--scale", type=int, default=4, help="used with --classical")
    p.add_argument("--iterations", type=int, default=3, help="used with --classical")
    p.add_argument("--sigma", type=float, default=1.6, help="blur width of the data term")
    p.set_defaults(func=cmd_infer)
    commands["infer"] = p

    p = sub.add_parser("eval", help="score reconstructions against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="where to write report.csv")
    p.add_argument("--config", type=Path, default=None, help="JSON file of defaults")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    commands["eval"] = p

    p = sub.add_parser("selftest", help="fast numerical property checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, default=None, help="JSON file of defaults")
    p.set_defaults(func=cmd_selftest)
    commands["selftest"] = p

    return parser, commands


def _parse_args(argv) -> argparse.Namespace:
    parser, commands = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is not None:
        try:
            overrides = dataio.read_json(args.config)
        except FileNotFoundError as exc:
            raise CommandError(f"no such config file: {args.config}") from exc
        except ValueError as exc:
            raise CommandError(f"malformed config file {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise CommandError(f"config file {args.config} must hold a JSON object")
        known = set(vars(args)) - {"func", "command", "config"}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise CommandError(f"unknown config keys {unknown}; valid: {sorted(known)}")
        # File values become the subcommand's defaults; explicit flags still win.
        commands[args.command].set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = _parse_args(argv)
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
