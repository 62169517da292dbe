"""Shared helpers: independent brute-force oracles and small builders."""

import numpy as np
import pytest

from segsynth import Geometry, LabelMap, ScalarVolume


def make_geometry(shape, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
    affine[:3, 3] = origin
    return Geometry(tuple(shape), tuple(spacing), affine)


def make_labels(array, spacing=(1.0, 1.0, 1.0)):
    array = np.asarray(array)
    return LabelMap(make_geometry(array.shape, spacing), array)


def make_scalar(array, spacing=(1.0, 1.0, 1.0)):
    array = np.asarray(array, dtype=np.float64)
    return ScalarVolume(make_geometry(array.shape, spacing), array)


def edt_oracle(mask, spacing):
    """All-pairs exact distance (mm) to the nearest foreground voxel."""
    mask = np.asarray(mask, dtype=bool)
    fg = np.argwhere(mask).astype(np.float64) * np.asarray(spacing)
    assert fg.size, "oracle needs a non-empty mask"
    coords = (
        np.indices(mask.shape).reshape(3, -1).T.astype(np.float64)
        * np.asarray(spacing)
    )
    out = np.empty(coords.shape[0])
    chunk = max(1, (1 << 22) // max(fg.shape[0], 1))
    for lo in range(0, coords.shape[0], chunk):
        hi = lo + chunk
        diff = coords[lo:hi, None, :] - fg[None, :, :]
        out[lo:hi] = np.sqrt((diff**2).sum(-1)).min(1)
    return out.reshape(mask.shape)


def surface_oracle(mask):
    """Six-connectivity surface voxels by direct neighbor enumeration."""
    mask = np.asarray(mask, dtype=bool)
    out = []
    n0, n1, n2 = mask.shape
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                if not mask[i, j, k]:
                    continue
                exposed = False
                for di, dj, dk in (
                    (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
                ):
                    ni, nj, nk = i + di, j + dj, k + dk
                    if not (0 <= ni < n0 and 0 <= nj < n1 and 0 <= nk < n2):
                        exposed = True
                        break
                    if not mask[ni, nj, nk]:
                        exposed = True
                        break
                if exposed:
                    out.append((i, j, k))
    return np.asarray(out, dtype=np.int64).reshape(-1, 3)


def percentile_oracle(values, q):
    """Linear-interpolation percentile computed from first principles."""
    vals = np.sort(np.asarray(values, dtype=np.float64))
    if vals.size == 1:
        return float(vals[0])
    h = (q / 100.0) * (vals.size - 1)
    lo = int(np.floor(h))
    hi = min(lo + 1, vals.size - 1)
    frac = h - lo
    return float(vals[lo] * (1.0 - frac) + vals[hi] * frac)


def hd95_oracle(mask_a, mask_b, spacing):
    """All-surface-pairs HD95 in mm (max of directed linear-interp P95s)."""
    surf_a = surface_oracle(mask_a).astype(np.float64) * np.asarray(spacing)
    surf_b = surface_oracle(mask_b).astype(np.float64) * np.asarray(spacing)
    diff = surf_a[:, None, :] - surf_b[None, :, :]
    dists = np.sqrt((diff**2).sum(-1))
    d_ab = dists.min(axis=1)
    d_ba = dists.min(axis=0)
    return max(percentile_oracle(d_ab, 95.0), percentile_oracle(d_ba, 95.0))


def random_mask(rng, shape, density=0.2):
    mask = rng.random(shape) < density
    if not mask.any():
        mask[tuple(rng.integers(0, s) for s in shape)] = True
    return mask


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)
