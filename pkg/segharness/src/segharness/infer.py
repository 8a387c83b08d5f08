"""Multi-view sliding-window inference with per-voxel majority voting."""

from __future__ import annotations

import numpy as np
import torch

from .model import N_CLASSES, UNet2D
from .patches import PATCH, VIEWS, _SLICE_AXIS, _window, standardize


def infer(volume: np.ndarray, model: UNet2D, stride: int = 32, batch_size: int = 128) -> np.ndarray:
    """Segment `volume`: overlapping 64x64 patches from all three
    orientations (centers on a `stride` lattice wherever the volume has
    signal), pixelwise argmax per patch, then per-voxel majority vote over
    all covering patches. Ties resolve to the lowest class index; voxels no
    patch covers stay background."""
    foreground = volume > max(1e-12, 0.05 * float(volume.max()))
    votes = np.zeros((*volume.shape, N_CLASSES), dtype=np.int32)
    model.eval()
    for view in VIEWS:
        axis = _SLICE_AXIS[view]
        plane_axes = tuple(a for a in range(3) if a != axis)
        plane_dims = (volume.shape[plane_axes[0]], volume.shape[plane_axes[1]])
        jobs = []  # (slice index, r0, c0, patch)
        for index in range(volume.shape[axis]):
            fg_plane = np.take(foreground, index, axis=axis)
            if not fg_plane.any():
                continue
            img_plane = np.take(volume, index, axis=axis)
            for r in range(stride // 2, plane_dims[0], stride):
                for c in range(stride // 2, plane_dims[1], stride):
                    if not fg_plane[r, c]:
                        continue
                    r0, c0 = r - PATCH // 2, c - PATCH // 2
                    jobs.append((index, r0, c0, standardize(_window(img_plane, r0, c0))))
        for start in range(0, len(jobs), batch_size):
            chunk = jobs[start : start + batch_size]
            x = torch.from_numpy(np.stack([j[3] for j in chunk])).unsqueeze(1)
            with torch.no_grad():
                pred = model.probabilities(x).argmax(dim=1).numpy().astype(np.uint8)
            for (index, r0, c0, _), classes in zip(chunk, pred):
                _scatter_votes(votes, view, index, r0, c0, classes)
    return majority_from_votes(votes)


def majority_from_votes(votes: np.ndarray) -> np.ndarray:
    """Per-voxel majority over the (..., C) vote counts; ties pick the lowest
    class; zero votes mean background. Invariant to vote accumulation order."""
    flat = votes.reshape(-1, votes.shape[-1])
    out = np.argmax(flat, axis=1).astype(np.uint8)  # first max = lowest class
    out[flat.sum(axis=1) == 0] = 0
    return out.reshape(votes.shape[:-1])


def _scatter_votes(votes, view, index, r0, c0, classes) -> None:
    axis = _SLICE_AXIS[view]
    plane_axes = tuple(a for a in range(3) if a != axis)
    shape = votes.shape
    rows = np.arange(max(r0, 0), min(r0 + PATCH, shape[plane_axes[0]]))
    cols = np.arange(max(c0, 0), min(c0 + PATCH, shape[plane_axes[1]]))
    if rows.size == 0 or cols.size == 0:
        return
    sub = classes[rows[0] - r0 : rows[-1] - r0 + 1, cols[0] - c0 : cols[-1] - c0 + 1]
    idx = [None, None, None]
    idx[axis] = index
    idx[plane_axes[0]] = rows[:, None]
    idx[plane_axes[1]] = cols[None, :]
    view_block = votes[idx[0], idx[1], idx[2]]  # (len(rows), len(cols), C)
    one_hot = np.eye(N_CLASSES, dtype=np.int32)[sub]
    votes[idx[0], idx[1], idx[2]] = view_block + one_hot
