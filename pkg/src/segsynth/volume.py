"""Dense 3D containers plus resampling and the canonical center crop/pad."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .geometry import Geometry, GeometryError

__all__ = [
    "ScalarVolume",
    "LabelMap",
    "InvalidModeError",
    "resample",
    "center_crop_pad",
]


class InvalidModeError(ValueError):
    """Interpolation mode not valid for the volume type."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """A floating-point grid sharing a Geometry. Values must be finite.

    The array is made read-only on construction; volumes are safe to share
    across threads.
    """

    geometry: Geometry
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        values = np.ascontiguousarray(values)
        if values.shape != self.geometry.shape:
            raise GeometryError(
                f"values shape {values.shape} != geometry shape {self.geometry.shape}"
            )
        # min/max propagate NaN and infinities, so two scans replace a full
        # isfinite mask.
        if values.size and not (
            np.isfinite(values.min()) and np.isfinite(values.max())
        ):
            raise ValueError("scalar volume contains non-finite values")
        object.__setattr__(self, "values", _freeze(values))

    def astype(self, dtype) -> "ScalarVolume":
        return ScalarVolume(self.geometry, self.values.astype(dtype))


@dataclass(frozen=True, eq=False)
class LabelMap:
    """An integer-labeled grid sharing a Geometry; label 0 is background."""

    geometry: Geometry
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.dtype.kind not in "iu":
            raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
        if labels.size and int(labels.min()) < 0:
            raise ValueError("labels must be non-negative")
        if labels.dtype != np.int32:
            if labels.size == 0 or int(labels.max()) <= np.iinfo(np.int32).max:
                labels = labels.astype(np.int32)
            else:
                labels = labels.astype(np.int64)
        labels = np.ascontiguousarray(labels)
        if labels.shape != self.geometry.shape:
            raise GeometryError(
                f"labels shape {labels.shape} != geometry shape {self.geometry.shape}"
            )
        object.__setattr__(self, "labels", _freeze(labels))

    def label_ids(self) -> np.ndarray:
        """Sorted unique labels present in the map."""
        return np.unique(self.labels)

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.labels))


def resample(volume, target: Geometry, mode: str | None = None):
    """Pull ``volume`` onto ``target``'s grid through world coordinates.

    Each target voxel center is mapped to world mm and back into the source
    grid; positions outside the source grid read as background (0). Label
    maps only support nearest-neighbor; requesting trilinear on one raises
    InvalidModeError.
    """
    is_labels = isinstance(volume, LabelMap)
    if mode is None:
        mode = "nearest" if is_labels else "trilinear"
    if mode not in ("nearest", "trilinear"):
        raise InvalidModeError(f"unknown mode {mode!r}")
    if is_labels and mode == "trilinear":
        raise InvalidModeError("trilinear interpolation is invalid for label maps")

    src_geom = volume.geometry
    try:
        inv = np.linalg.inv(src_geom.affine)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("source affine is not invertible") from exc
    combined = inv @ target.affine
    mat = np.ascontiguousarray(combined[:3, :3])
    off = np.ascontiguousarray(combined[:3, 3])

    if is_labels:
        pulled = backend.pull_affine_nearest(volume.labels, mat, off, target.shape)
        return LabelMap(target, pulled)
    pulled = backend.pull_affine_linear(volume.values, mat, off, target.shape)
    return ScalarVolume(target, pulled)


def _crop_pad_bounds(n_in: int, n_out: int):
    # Returns (src_lo, src_hi, dst_lo). Crops take the extra voxel from the
    # high side; pads put the extra voxel on the high side.
    if n_in >= n_out:
        lo = (n_in - n_out) // 2
        return lo, lo + n_out, 0
    lo = (n_out - n_in) // 2
    return 0, n_in, lo


def center_crop_pad(volume, target_shape):
    """Symmetrically crop or zero-pad each axis to ``target_shape``.

    Spacing is preserved and the affine is translated so retained voxels keep
    their world positions. Works for both LabelMap and ScalarVolume.
    """
    target_shape = tuple(int(s) for s in target_shape)
    if len(target_shape) != 3 or any(s < 1 for s in target_shape):
        raise ValueError(f"target shape must be 3 positive integers, got {target_shape}")
    geom = volume.geometry
    is_labels = isinstance(volume, LabelMap)
    data = volume.labels if is_labels else volume.values

    bounds = [_crop_pad_bounds(geom.shape[a], target_shape[a]) for a in range(3)]
    out = np.zeros(target_shape, dtype=data.dtype)
    src = tuple(slice(lo, hi) for lo, hi, _ in bounds)
    dst = tuple(
        slice(dlo, dlo + (hi - lo)) for (lo, hi, dlo) in bounds
    )
    out[dst] = data[src]

    # New index i maps to old index i + shift, so the origin moves by
    # affine_linear @ shift.
    shift = np.array([b[0] - b[2] for b in bounds], dtype=np.float64)
    affine = np.array(geom.affine)
    affine[:3, 3] = affine[:3, 3] + affine[:3, :3] @ shift
    new_geom = Geometry(target_shape, geom.spacing, affine)
    if is_labels:
        return LabelMap(new_geom, out)
    return ScalarVolume(new_geom, out)
