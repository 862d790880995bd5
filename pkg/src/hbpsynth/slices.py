"""Axial-slice extraction with symmetric pad/center-crop to a square size."""

from __future__ import annotations

import numpy as np

from .errors import DomainError


def pad_or_crop(slice2d: np.ndarray, size: int) -> np.ndarray:
    """Symmetric zero-pad or center-crop a 2D array to (size, size)."""
    if slice2d.ndim != 2:
        raise DomainError(f"expected 2D slice, got ndim={slice2d.ndim}")
    out = slice2d
    for axis in range(2):
        n = out.shape[axis]
        if n < size:
            before = (size - n) // 2
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, size - n - before)
            out = np.pad(out, pad)
        elif n > size:
            start = (n - size) // 2
            sl = [slice(None), slice(None)]
            sl[axis] = slice(start, start + size)
            out = out[tuple(sl)]
    return out


def undo_pad_or_crop(slice2d: np.ndarray, original_shape: tuple[int, int]) -> np.ndarray:
    """Inverse placement of pad_or_crop back onto the original 2D shape.

    Regions that were cropped away come back as zeros.
    """
    out = np.zeros(original_shape, dtype=slice2d.dtype)
    size = slice2d.shape
    views = []
    for axis, (n, s) in enumerate(zip(original_shape, size)):
        if n <= s:  # was padded
            before = (s - n) // 2
            views.append((slice(0, n), slice(before, before + n)))
        else:  # was cropped
            start = (n - s) // 2
            views.append((slice(start, start + s), slice(0, s)))
    dst = (views[0][0], views[1][0])
    src = (views[0][1], views[1][1])
    out[dst] = slice2d[src]
    return out


def study_slice_stack(study, z: int, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """(input stack [2, R, R], target [1, R, R]) for one axial index."""
    pre = study.phase("precontrast").data[:, :, z]
    trans = study.phase("transitional").data[:, :, z]
    hbp = study.phase("hbp").data[:, :, z]
    stack = np.stack(
        [pad_or_crop(pre, resolution), pad_or_crop(trans, resolution)]
    ).astype(np.float32)
    target = pad_or_crop(hbp, resolution)[None].astype(np.float32)
    return stack, target
