"""Voxel-grid geometry: shape, physical spacing, grid-to-world affine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Geometry", "GeometryError"]


class GeometryError(ValueError):
    """Inconsistent grid metadata."""


def _tuple3(values, cast, what):
    out = tuple(cast(v) for v in values)
    if len(out) != 3:
        raise GeometryError(f"{what} must have 3 components, got {len(out)}")
    return out


@dataclass(frozen=True, eq=False)
class Geometry:
    """An axis-aligned index grid embedded in world millimeters.

    ``affine`` maps homogeneous voxel indices (x, y, z, 1) to world mm; the
    column norms of its upper-left 3x3 block must equal ``spacing``. Index
    order is (x, y, z), the native single-file layout order; no reorientation
    is ever applied implicitly.
    """

    shape: tuple
    spacing: tuple
    affine: np.ndarray

    def __post_init__(self):
        shape = _tuple3(self.shape, int, "shape")
        spacing = _tuple3(self.spacing, float, "spacing")
        if any(s < 1 for s in shape):
            raise GeometryError(f"shape components must be >= 1, got {shape}")
        if any(s <= 0.0 for s in spacing):
            raise GeometryError(f"spacing components must be > 0, got {spacing}")
        affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise GeometryError(f"affine must be 4x4, got {affine.shape}")
        if not np.allclose(affine[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise GeometryError("affine bottom row must be (0, 0, 0, 1)")
        norms = np.linalg.norm(affine[:3, :3], axis=0)
        for axis in range(3):
            if abs(norms[axis] - spacing[axis]) > 1e-6 * spacing[axis]:
                raise GeometryError(
                    f"affine column {axis} norm {norms[axis]!r} does not match "
                    f"spacing {spacing[axis]!r}"
                )
        affine.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @classmethod
    def isotropic(cls, shape, spacing=1.0, origin=(0.0, 0.0, 0.0)):
        affine = np.diag([spacing, spacing, spacing, 1.0])
        affine[:3, 3] = origin
        return cls(tuple(shape), (spacing, spacing, spacing), affine)

    @classmethod
    def from_affine(cls, shape, affine):
        """Build a geometry whose spacing is the affine's column norms."""
        affine = np.asarray(affine, dtype=np.float64)
        spacing = tuple(np.linalg.norm(affine[:3, :3], axis=0))
        return cls(tuple(shape), spacing, affine)

    @property
    def voxel_volume_mm3(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    @property
    def voxel_count(self) -> int:
        return self.shape[0] * self.shape[1] * self.shape[2]

    def world_from_index(self, index) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(index, dtype=np.float64))
        return (idx @ self.affine[:3, :3].T + self.affine[:3, 3]).squeeze()

    def approx_equal(self, other: "Geometry", rtol: float = 1e-6) -> bool:
        if self.shape != other.shape:
            return False
        scale = max(1.0, float(np.abs(self.affine).max()))
        return bool(
            np.allclose(self.affine, other.affine, atol=rtol * scale)
            and np.allclose(self.spacing, other.spacing, rtol=rtol)
        )

    def with_shape(self, shape) -> "Geometry":
        return Geometry(tuple(shape), self.spacing, self.affine)
