"""Patch pipeline: multi-view extraction around intracranial voxels,
per-patch intensity standardization, and geometric + noise augmentation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

PATCH = 64
VIEWS = ("axial", "coronal", "sagittal")
_SLICE_AXIS = {"axial": 2, "coronal": 1, "sagittal": 0}

log = logging.getLogger("segharness")


@dataclass(frozen=True)
class PatchSample:
    """One 64x64 training sample. Intensities are standardized to mean 0 /
    SD 1 (constant patches become all zeros); the label patch shares the
    geometry and is never noised."""

    image: np.ndarray  # (64, 64) float32, standardized
    labels: np.ndarray  # (64, 64) uint8
    view: str
    subject: str
    slice_index: int
    origin: tuple[int, int]  # top-left corner in slice coordinates


def standardize(patch: np.ndarray) -> np.ndarray:
    patch = patch.astype(np.float32)
    sd = float(patch.std())
    if sd < 1e-8:
        return np.zeros_like(patch)
    return (patch - patch.mean()) / sd


def _slice_2d(volume: np.ndarray, view: str, index: int) -> np.ndarray:
    axis = _SLICE_AXIS[view]
    return np.take(volume, index, axis=axis)


def _window(plane: np.ndarray, r0: int, c0: int, fill=0):
    """64x64 window at (r0, c0), zero-padded where it leaves the plane."""
    out = np.full((PATCH, PATCH), fill, dtype=plane.dtype)
    r1, c1 = r0 + PATCH, c0 + PATCH
    src = plane[max(r0, 0) : max(r1, 0), max(c0, 0) : max(c1, 0)]
    out[max(-r0, 0) : max(-r0, 0) + src.shape[0], max(-c0, 0) : max(-c0, 0) + src.shape[1]] = src
    return out


def extract_patches(
    volume: np.ndarray,
    labels: np.ndarray,
    view: str,
    stride: int = 32,
    subject: str = "",
) -> Iterator[PatchSample]:
    """Yield standardized patches whose center voxel is intracranial
    (label != 0), centers on a `stride` lattice (offset stride/2, so patch
    windows tile the volume interior) in every slice of `view`. Volumes
    narrower than 64 in-plane are zero-padded (with a warning)."""
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r} (have {VIEWS})")
    if volume.shape != labels.shape:
        raise ValueError(f"volume {volume.shape} and labels {labels.shape} must share a grid")
    axis = _SLICE_AXIS[view]
    plane_dims = tuple(d for a, d in enumerate(volume.shape) if a != axis)
    if any(d < PATCH for d in plane_dims):
        warnings.warn(
            f"in-plane dims {plane_dims} smaller than {PATCH}; padding with zeros", stacklevel=2
        )
    for index in range(volume.shape[axis]):
        lab_plane = _slice_2d(labels, view, index)
        if not lab_plane.any():
            continue
        img_plane = _slice_2d(volume, view, index)
        for r in range(stride // 2, plane_dims[0], stride):
            for c in range(stride // 2, plane_dims[1], stride):
                if lab_plane[r, c] == 0:
                    continue
                r0, c0 = r - PATCH // 2, c - PATCH // 2
                yield PatchSample(
                    image=standardize(_window(img_plane, r0, c0)),
                    labels=_window(lab_plane, r0, c0).astype(np.uint8),
                    view=view,
                    subject=subject,
                    slice_index=index,
                    origin=(r0, c0),
                )


def extract_all_views(volume, labels, stride=32, subject="") -> list[PatchSample]:
    out = []
    for view in VIEWS:
        out.extend(extract_patches(volume, labels, view, stride, subject))
    return out


def geometric_transform(arr: np.ndarray, quarter_turns: int, flip_rows: bool, flip_cols: bool):
    out = np.rot90(arr, quarter_turns)
    if flip_rows:
        out = out[::-1, :]
    if flip_cols:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(sample: PatchSample, seed: int, max_sigma: float = 0.1) -> PatchSample:
    """Randomly composed quarter-turn rotation, flips, and additive Gaussian
    noise (sigma <= `max_sigma` post-standardization). The label patch gets
    the identical geometric transform and no noise; the image is
    re-standardized after noising."""
    rng = np.random.default_rng(seed)
    quarter_turns = int(rng.integers(0, 4))
    flip_rows = bool(rng.integers(0, 2))
    flip_cols = bool(rng.integers(0, 2))
    add_noise = bool(rng.integers(0, 2))

    image = geometric_transform(sample.image, quarter_turns, flip_rows, flip_cols)
    labels = geometric_transform(sample.labels, quarter_turns, flip_rows, flip_cols)
    if add_noise:
        sigma = float(rng.uniform(0.0, max_sigma))
        image = standardize(image + rng.normal(0.0, sigma, image.shape).astype(np.float32))
    return replace(sample, image=image, labels=labels)
