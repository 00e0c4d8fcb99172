"""Dense 3D scalar fields with physical voxel spacing, and the elementwise
and differential primitives the rest of the library builds on.

Conventions fixed here and relied on everywhere else:

* arrays are float64 (or bool for masks), shape ``(nx, ny, nz)``;
* the canonical linear order is x-fastest (flat index ``i`` maps to voxel
  ``(i % nx, (i // nx) % ny, i // (nx*ny))``), i.e. Fortran ravel order —
  file I/O in :mod:`segtta.fileio` serializes in this order;
* spatial differences use a replicate boundary: the final slab of a forward
  difference along any axis is zero, so nothing penalizes the volume border;
* thresholds are strict (``value > t``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

Spacing = tuple[float, float, float]


class EmptyRegionError(ValueError):
    """A statistic was requested over a mask with zero foreground voxels."""


def _canonical_spacing(spacing) -> Spacing:
    s = tuple(float(x) for x in spacing)
    if len(s) != 3 or any(not np.isfinite(x) or x <= 0.0 for x in s):
        raise ValueError(f"spacing must be three positive finite numbers, got {spacing!r}")
    return s


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """A ``(nx, ny, nz)`` float64 grid with voxel spacing in mm."""

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"volume data must be a 3D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("volume data must be finite (no NaN/Inf)")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "spacing", _canonical_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def nvox(self) -> int:
        return int(self.data.size)

    def with_data(self, data: np.ndarray) -> "Volume":
        """New volume on the same grid."""
        return Volume(data, self.spacing)


@dataclass(frozen=True, eq=False)
class Mask:
    """A boolean grid on the same layout/spacing conventions as Volume."""

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.bool_:
            raise ValueError(f"mask data must be boolean, got dtype {arr.dtype}")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"mask data must be a 3D array, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))
        object.__setattr__(self, "spacing", _canonical_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def nvox(self) -> int:
        return int(self.data.size)

    @property
    def count(self) -> int:
        """Number of foreground voxels."""
        return int(np.count_nonzero(self.data))

    def with_data(self, data: np.ndarray) -> "Mask":
        return Mask(data, self.spacing)


def same_grid(a, b) -> bool:
    return a.dims == b.dims and a.spacing == b.spacing


def require_same_grid(a, b, what: str = "operands") -> None:
    if not same_grid(a, b):
        raise ValueError(
            f"dimension/spacing mismatch between {what}: "
            f"{a.dims}@{a.spacing} vs {b.dims}@{b.spacing}"
        )


@dataclass(frozen=True, eq=False)
class Case:
    """One test sample: >=1 image channels plus the initial logits, all on one grid."""

    image: tuple[Volume, ...]
    logits0: Volume
    case_id: str = ""

    def __post_init__(self):
        channels = tuple(self.image)
        if len(channels) < 1:
            raise ValueError("a case needs at least one image channel")
        for i, ch in enumerate(channels):
            require_same_grid(ch, self.logits0, f"image channel {i} and logits0")
        object.__setattr__(self, "image", channels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.logits0.dims

    @property
    def spacing(self) -> Spacing:
        return self.logits0.spacing


class MaskStats(NamedTuple):
    mean: float
    std: float
    count: int


def sigmoid(z: Volume) -> Volume:
    """P = 1 / (1 + exp(-z)), numerically stable at large |z|."""
    return z.with_data(expit(z.data))


def logit(p: Volume) -> Volume:
    """Inverse of :func:`sigmoid`; requires values strictly inside (0, 1)."""
    arr = p.data
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise ValueError("logit requires values strictly inside (0, 1)")
    return p.with_data(np.log(arr / (1.0 - arr)))


def forward_diff(v: Volume, axis: int) -> Volume:
    """out[i] = v[i+1] - v[i] along ``axis``; the final slab is zero."""
    return v.with_data(forward_diff_array(v.data, axis))


def forward_diff_array(arr: np.ndarray, axis: int) -> np.ndarray:
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    out = np.zeros_like(arr)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    src[axis] = slice(1, None)
    dst[axis] = slice(None, -1)
    out[tuple(dst)] = arr[tuple(src)] - arr[tuple(dst)]
    return out


def threshold(v: Volume, t: float) -> Mask:
    """Strict threshold: mask is true exactly where v > t."""
    return Mask(v.data > float(t), v.spacing)


def mask_stats(image_channel: Volume, m: Mask) -> MaskStats:
    """Mean / population std / count of intensities under the mask.

    Raises EmptyRegionError on an empty mask; the caller decides policy.
    """
    require_same_grid(image_channel, m, "image channel and mask")
    vals = image_channel.data[m.data]
    if vals.size == 0:
        raise EmptyRegionError("mask selects no voxels")
    return MaskStats(float(vals.mean()), float(vals.std()), int(vals.size))
