"""Overlap and surface-distance metrics: Dice, HD95 (mm), soft Dice loss, volumes.

Surface distances are measured voxel-center to voxel-center through an exact
Euclidean distance transform with anisotropic spacing. Metrics on empty masks
are reported as missing (None), never as zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import backend
from .geometry import Geometry, GeometryError
from .volume import LabelMap, ScalarVolume

__all__ = [
    "BinaryMask",
    "RegionMetrics",
    "EmptyMaskError",
    "dice",
    "extract_surface",
    "distance_transform",
    "hd95",
    "soft_dice_loss",
    "region_volume",
]


class EmptyMaskError(ValueError):
    """Operation requires a non-empty mask."""


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """One region of a label map as a dense boolean grid."""

    geometry: Geometry
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if bits.shape != self.geometry.shape:
            raise GeometryError(
                f"bits shape {bits.shape} != geometry shape {self.geometry.shape}"
            )
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_labelmap(cls, labels: LabelMap, label_id: int) -> "BinaryMask":
        return cls(labels.geometry, labels.labels == int(label_id))

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def empty(self) -> bool:
        return not bool(self.bits.any())


def _check_same_geometry(a: BinaryMask, b: BinaryMask) -> None:
    if not a.geometry.approx_equal(b.geometry):
        raise GeometryError("masks do not share a geometry")


def dice(a: BinaryMask, b: BinaryMask) -> Optional[float]:
    """2|A∩B| / (|A|+|B|); None when either mask is empty."""
    _check_same_geometry(a, b)
    na, nb = a.count, b.count
    if na == 0 or nb == 0:
        return None
    inter = int(np.count_nonzero(a.bits & b.bits))
    return 2.0 * inter / (na + nb)


def _surface_bits(bits: np.ndarray) -> np.ndarray:
    # Surface voxel: foreground with at least one six-connected neighbor that
    # is background or outside the grid.
    padded = np.pad(bits, 1, mode="constant", constant_values=False)
    interior = padded[2:, 1:-1, 1:-1] & padded[:-2, 1:-1, 1:-1]
    interior &= padded[1:-1, 2:, 1:-1] & padded[1:-1, :-2, 1:-1]
    interior &= padded[1:-1, 1:-1, 2:] & padded[1:-1, 1:-1, :-2]
    return bits & ~interior


def extract_surface(mask: BinaryMask) -> np.ndarray:
    """Surface voxel coordinates as an (N, 3) array, lexicographically sorted."""
    return np.argwhere(_surface_bits(mask.bits))


def distance_transform(mask: BinaryMask, spacing=None) -> ScalarVolume:
    """Exact mm distance from every voxel center to the nearest foreground voxel."""
    if mask.empty:
        raise EmptyMaskError("distance transform of an empty mask")
    if spacing is None:
        spacing = mask.geometry.spacing
    spacing = tuple(float(s) for s in spacing)
    d2 = backend.edt_squared(mask.bits, spacing)
    return ScalarVolume(mask.geometry, np.sqrt(d2))


def _directed_distances(src_surface: np.ndarray, dist_to_other: np.ndarray) -> np.ndarray:
    return dist_to_other[src_surface[:, 0], src_surface[:, 1], src_surface[:, 2]]


def hd95(
    a: BinaryMask,
    b: BinaryMask,
    spacing=None,
    symmetrization: str = "max",
) -> Optional[float]:
    """95th percentile of the surface distance between two masks, in mm.

    Directed distances run from each surface voxel of one mask to the other
    mask's surface; percentiles use linear interpolation. ``symmetrization``
    is ``"max"`` (max of the two directed 95th percentiles, the default) or
    ``"pooled"`` (95th percentile of the pooled directed distances). Returns
    None when either mask is empty.
    """
    if symmetrization not in ("max", "pooled"):
        raise ValueError(f"unknown symmetrization {symmetrization!r}")
    _check_same_geometry(a, b)
    if a.empty or b.empty:
        return None
    if spacing is None:
        spacing = a.geometry.spacing
    spacing = tuple(float(s) for s in spacing)

    surf_a = _surface_bits(a.bits)
    surf_b = _surface_bits(b.bits)
    dist_a = np.sqrt(backend.edt_squared(surf_a, spacing))
    dist_b = np.sqrt(backend.edt_squared(surf_b, spacing))
    d_ab = dist_b[surf_a]
    d_ba = dist_a[surf_b]
    if symmetrization == "pooled":
        return float(np.percentile(np.concatenate([d_ab, d_ba]), 95.0))
    return float(max(np.percentile(d_ab, 95.0), np.percentile(d_ba, 95.0)))


def soft_dice_loss(
    probabilities: Mapping[int, ScalarVolume],
    target: LabelMap,
    eps: float = 1e-5,
) -> float:
    """Soft Dice loss of per-class probability maps against an integer target.

    1 - mean over foreground classes of (2*sum(p*g) + eps) / (sum(p^2) +
    sum(g^2) + eps). Per-voxel probabilities must sum to 1 within 1e-6.
    """
    if not probabilities:
        raise ValueError("no class probabilities given")
    classes = sorted(probabilities)
    geom = target.geometry
    total = np.zeros(geom.shape, dtype=np.float64)
    for cls_id in classes:
        vol = probabilities[cls_id]
        if not vol.geometry.approx_equal(geom):
            raise GeometryError(f"class {cls_id} probability grid mismatches target")
        total += vol.values
    err = float(np.abs(total - 1.0).max())
    if err > 1e-6:
        raise ValueError(f"class probabilities sum to 1 within {err:g}, tolerance 1e-6")

    present = set(int(v) for v in target.label_ids())
    missing = present - set(classes)
    if missing:
        raise ValueError(f"target labels {sorted(missing)} have no probability map")

    foreground = [c for c in classes if c != 0]
    if not foreground:
        raise ValueError("no foreground classes")
    scores = []
    for cls_id in foreground:
        p = probabilities[cls_id].values.astype(np.float64)
        g = (target.labels == cls_id).astype(np.float64)
        num = 2.0 * float((p * g).sum()) + eps
        den = float((p * p).sum()) + float((g * g).sum()) + eps
        scores.append(num / den)
    return 1.0 - float(np.mean(scores))


def region_volume(labels: LabelMap, label_id: int, spacing=None) -> float:
    """Volume of one label in mL (voxel count times voxel volume in mm^3 / 1000)."""
    if spacing is None:
        spacing = labels.geometry.spacing
    count = int(np.count_nonzero(labels.labels == int(label_id)))
    voxel_mm3 = float(spacing[0]) * float(spacing[1]) * float(spacing[2])
    return count * voxel_mm3 / 1000.0


@dataclass(frozen=True)
class RegionMetrics:
    """Per-region comparison outcome; dice/hd95 are None when a mask is empty."""

    dice: Optional[float]
    hd95_mm: Optional[float]
    volume_ml: float
    gt_volume_ml: float = 0.0
