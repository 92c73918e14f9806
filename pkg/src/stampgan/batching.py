"""Numpy training examples -> torch batch dictionaries."""

from __future__ import annotations

import numpy as np
import torch

from stampgan.data import TrainingExample


def _chw(stack: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(stack.transpose(0, 3, 1, 2))).float()


def to_torch_batch(examples: list[TrainingExample], indices,
                   device: str | torch.device = "cpu") -> dict:
    sel = [examples[int(k)] for k in indices]
    batch = {
        "image": _chw(np.stack([e.image.data for e in sel])),
        "image_boxcut": _chw(np.stack([e.image_boxcut.data for e in sel])),
        "image_maskcut": _chw(np.stack([e.image_maskcut.data for e in sel])),
        "foreground": _chw(np.stack([e.foreground.data for e in sel])),
        "mask": torch.from_numpy(np.stack([e.mask.data for e in sel])).float()[:, None],
        "bbox_raster": torch.from_numpy(
            np.stack([e.bbox.raster.data for e in sel])).float()[:, None],
        "bbox_vec": torch.tensor([list(e.bbox.vec) for e in sel], dtype=torch.float32),
    }
    return {k: v.to(device) for k, v in batch.items()}
