"""PNG sequence I/O and small JSON manifests.

Frames live on disk as lossless 8-bit PNG files named ``000000.png``,
``000001.png``, ... inside one directory per sequence.  In memory they are
float tensors in [0, 1] laid out ``[C, H, W]`` (or ``[T, C, H, W]`` for a
sequence); quantization happens only at the file boundary.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

FRAME_PATTERN = "{:06d}.png"


def save_image(path, image: torch.Tensor) -> None:
    """Write a [C, H, W] float image in [0, 1] as an 8-bit PNG (C = 1 or 3)."""
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ValueError(f"expected [1|3, H, W] image, got shape {tuple(image.shape)}")
    array = image.detach().cpu().numpy()
    array = np.rint(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)
    array = np.moveaxis(array, 0, -1)
    if array.shape[-1] == 1:
        array = array[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)


def load_image(path) -> torch.Tensor:
    """Read a PNG as a [C, H, W] float32 tensor in [0, 1]."""
    with Image.open(path) as img:
        img = img.convert("RGB") if img.mode not in ("L", "RGB") else img
        array = np.asarray(img, dtype=np.float32) / 255.0
    if array.ndim == 2:
        array = array[None]
    else:
        array = np.moveaxis(array, -1, 0)
    return torch.from_numpy(array.copy())


def save_sequence(directory, frames: torch.Tensor) -> list[Path]:
    """Write [T, C, H, W] frames as numbered PNGs; returns the paths."""
    if frames.ndim != 4:
        raise ValueError(f"expected [T, C, H, W] frames, got shape {tuple(frames.shape)}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(frames.shape[0]):
        path = directory / FRAME_PATTERN.format(t)
        save_image(path, frames[t])
        paths.append(path)
    return paths


def load_sequence(directory) -> torch.Tensor:
    """Read every PNG in a directory (sorted by name) as [T, C, H, W]."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = [load_image(p) for p in paths]
    shapes = {tuple(f.shape) for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent frame shapes in {directory}: {sorted(shapes)}")
    return torch.stack(frames)


def discover_sequences(root) -> list[tuple[str, Path]]:
    """Sequence directories under a dataset root.

    A root that itself contains PNGs is a single sequence named after the
    directory; otherwise every immediate subdirectory containing PNGs is one
    sequence.
    """
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"no such dataset directory: {root}")
    if any(root.glob("*.png")):
        return [(root.name, root)]
    found = [
        (sub.name, sub) for sub in sorted(root.iterdir()) if sub.is_dir() and any(sub.glob("*.png"))
    ]
    if not found:
        raise FileNotFoundError(f"no PNG sequences under {root}")
    return found


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
