"""Round trips and directory discovery for PNG sequence storage."""

import numpy as np
import pytest
import torch

from unrollsr import dataio


def _grid_image(rng, channels=3, h=10, w=12) -> torch.Tensor:
    """An image whose values sit exactly on the 8-bit grid."""
    levels = rng.integers(0, 256, size=(channels, h, w))
    return torch.from_numpy(levels.astype(np.float32) / 255.0)


def test_image_roundtrip_is_exact_on_the_8bit_grid(tmp_path, rng):
    image = _grid_image(rng)
    dataio.save_image(tmp_path / "a.png", image)
    back = dataio.load_image(tmp_path / "a.png")
    assert back.dtype == torch.float32
    assert torch.equal(back, image)


def test_grayscale_roundtrip(tmp_path, rng):
    image = _grid_image(rng, channels=1)
    dataio.save_image(tmp_path / "g.png", image)
    back = dataio.load_image(tmp_path / "g.png")
    assert back.shape == (1, 10, 12)
    assert torch.equal(back, image)


def test_save_image_quantizes_to_nearest_level(tmp_path):
    # 100.4/255 rounds down, 100.6/255 rounds up.
    image = torch.tensor([[[100.4 / 255.0, 100.6 / 255.0]]])
    dataio.save_image(tmp_path / "q.png", image)
    back = dataio.load_image(tmp_path / "q.png")
    assert torch.equal(back * 255.0, torch.tensor([[[100.0, 101.0]]]))


def test_save_image_clips_out_of_range(tmp_path):
    image = torch.tensor([[[-0.5, 1.5]]])
    dataio.save_image(tmp_path / "c.png", image)
    back = dataio.load_image(tmp_path / "c.png")
    assert torch.equal(back, torch.tensor([[[0.0, 1.0]]]))


def test_save_image_rejects_bad_shapes(tmp_path):
    with pytest.raises(ValueError):
        dataio.save_image(tmp_path / "x.png", torch.zeros(2, 4, 4))
    with pytest.raises(ValueError):
        dataio.save_image(tmp_path / "x.png", torch.zeros(4, 4))


def test_sequence_roundtrip_preserves_frame_order(tmp_path, rng):
    frames = torch.stack([_grid_image(rng) for _ in range(12)])
    paths = dataio.save_sequence(tmp_path / "seq", frames)
    assert [p.name for p in paths] == [f"{t:06d}.png" for t in range(12)]
    back = dataio.load_sequence(tmp_path / "seq")
    assert torch.equal(back, frames)


def test_load_sequence_requires_frames_and_consistent_shapes(tmp_path, rng):
    with pytest.raises(FileNotFoundError):
        dataio.load_sequence(tmp_path)
    dataio.save_image(tmp_path / "000000.png", _grid_image(rng, h=8, w=8))
    dataio.save_image(tmp_path / "000001.png", _grid_image(rng, h=8, w=10))
    with pytest.raises(ValueError):
        dataio.load_sequence(tmp_path)


def test_discover_sequences_flat_and_nested(tmp_path, rng):
    frames = torch.stack([_grid_image(rng) for _ in range(2)])
    dataio.save_sequence(tmp_path / "nested" / "b_seq", frames)
    dataio.save_sequence(tmp_path / "nested" / "a_seq", frames)
    found = dataio.discover_sequences(tmp_path / "nested")
    assert [name for name, _ in found] == ["a_seq", "b_seq"]
    # A directory that holds PNGs directly is one sequence named after itself.
    flat = dataio.discover_sequences(tmp_path / "nested" / "a_seq")
    assert flat == [("a_seq", tmp_path / "nested" / "a_seq")]


def test_discover_sequences_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        dataio.discover_sequences(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        dataio.discover_sequences(tmp_path / "empty")


def test_json_roundtrip(tmp_path):
    payload = {"sigma": 1.6, "names": ["a", "b"], "nested": {"scale": 4}}
    dataio.write_json(tmp_path / "deep" / "m.json", payload)
    assert dataio.read_json(tmp_path / "deep" / "m.json") == payload
