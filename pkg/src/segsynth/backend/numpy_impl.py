"""Pure-numpy fallback kernels.

Same contracts as numba_impl. Pulls are evaluated in slabs along the first
output axis to bound the size of the coordinate arrays; the distance
transform uses a vectorized min-plus sweep per axis (exact, O(n) memory,
O(n^2) work per line, so slower than the envelope pass but dependency-free).
"""

import numpy as np

BIG = 1.0e30

_SLAB_VOXELS = 4 << 20


def _slab_size(shape):
    per_slice = max(1, shape[1] * shape[2])
    return max(1, _SLAB_VOXELS // per_slice)


def _gather_linear(src, x, y, z):
    n0, n1, n2 = src.shape
    inside = (
        (x >= 0.0) & (x <= n0 - 1.0)
        & (y >= 0.0) & (y <= n1 - 1.0)
        & (z >= 0.0) & (z <= n2 - 1.0)
    )
    x = np.where(inside, x, 0.0)
    y = np.where(inside, y, 0.0)
    z = np.where(inside, z, 0.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, max(n0 - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.int64), 0, max(n1 - 2, 0))
    z0 = np.clip(np.floor(z).astype(np.int64), 0, max(n2 - 2, 0))
    x1 = np.minimum(x0 + 1, n0 - 1)
    y1 = np.minimum(y0 + 1, n1 - 1)
    z1 = np.minimum(z0 + 1, n2 - 1)
    fx = x - x0
    fy = y - y0
    fz = z - z0
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    acc = (
        gx * gy * gz * src[x0, y0, z0]
        + gx * gy * fz * src[x0, y0, z1]
        + gx * fy * gz * src[x0, y1, z0]
        + gx * fy * fz * src[x0, y1, z1]
        + fx * gy * gz * src[x1, y0, z0]
        + fx * gy * fz * src[x1, y0, z1]
        + fx * fy * gz * src[x1, y1, z0]
        + fx * fy * fz * src[x1, y1, z1]
    )
    acc[~inside] = 0.0
    return acc.astype(src.dtype, copy=False)


def _gather_nearest(src, x, y, z):
    n0, n1, n2 = src.shape
    xi = np.floor(x + 0.5).astype(np.int64)
    yi = np.floor(y + 0.5).astype(np.int64)
    zi = np.floor(z + 0.5).astype(np.int64)
    inside = (
        (xi >= 0) & (xi < n0) & (yi >= 0) & (yi < n1) & (zi >= 0) & (zi < n2)
    )
    xi = np.where(inside, xi, 0)
    yi = np.where(inside, yi, 0)
    zi = np.where(inside, zi, 0)
    vals = src[xi, yi, zi]
    vals[~inside] = 0
    return vals


def _affine_coords(mat, off, i_lo, i_hi, n1, n2):
    ii = np.arange(i_lo, i_hi, dtype=np.float64)[:, None, None]
    jj = np.arange(n1, dtype=np.float64)[None, :, None]
    kk = np.arange(n2, dtype=np.float64)[None, None, :]
    x = mat[0, 0] * ii + mat[0, 1] * jj + mat[0, 2] * kk + off[0]
    y = mat[1, 0] * ii + mat[1, 1] * jj + mat[1, 2] * kk + off[1]
    z = mat[2, 0] * ii + mat[2, 1] * jj + mat[2, 2] * kk + off[2]
    return x, y, z


def pull_affine_linear(src, mat, off, out_shape):
    out = np.zeros(out_shape, dtype=src.dtype)
    step = _slab_size(out_shape)
    for i_lo in range(0, out_shape[0], step):
        i_hi = min(i_lo + step, out_shape[0])
        x, y, z = _affine_coords(mat, off, i_lo, i_hi, out_shape[1], out_shape[2])
        out[i_lo:i_hi] = _gather_linear(src, x, y, z)
    return out


def pull_affine_nearest(src, mat, off, out_shape):
    out = np.zeros(out_shape, dtype=src.dtype)
    step = _slab_size(out_shape)
    for i_lo in range(0, out_shape[0], step):
        i_hi = min(i_lo + step, out_shape[0])
        x, y, z = _affine_coords(mat, off, i_lo, i_hi, out_shape[1], out_shape[2])
        out[i_lo:i_hi] = _gather_nearest(src, x, y, z)
    return out


def _field_coords(dx, dy, dz, i_lo, i_hi):
    shape = dx.shape
    ii = np.arange(i_lo, i_hi, dtype=np.float64)[:, None, None]
    jj = np.arange(shape[1], dtype=np.float64)[None, :, None]
    kk = np.arange(shape[2], dtype=np.float64)[None, None, :]
    x = ii + dx[i_lo:i_hi]
    y = jj + dy[i_lo:i_hi]
    z = kk + dz[i_lo:i_hi]
    return x, y, z


def pull_field_linear(src, dx, dy, dz):
    out = np.zeros(dx.shape, dtype=src.dtype)
    step = _slab_size(dx.shape)
    for i_lo in range(0, dx.shape[0], step):
        i_hi = min(i_lo + step, dx.shape[0])
        x, y, z = _field_coords(dx, dy, dz, i_lo, i_hi)
        out[i_lo:i_hi] = _gather_linear(src, x, y, z)
    return out


def pull_field_nearest(src, dx, dy, dz):
    out = np.zeros(dx.shape, dtype=src.dtype)
    step = _slab_size(dx.shape)
    for i_lo in range(0, dx.shape[0], step):
        i_hi = min(i_lo + step, dx.shape[0])
        x, y, z = _field_coords(dx, dy, dz, i_lo, i_hi)
        out[i_lo:i_hi] = _gather_nearest(src, x, y, z)
    return out


def blur_rows_replicate(rows, kernel):
    radius = kernel.size // 2
    n = rows.shape[1]
    idx = np.clip(np.arange(-radius, n + radius), 0, n - 1)
    padded = rows[:, idx].astype(np.float64)
    out = np.zeros(rows.shape, dtype=np.float64)
    for t in range(kernel.size):
        out += kernel[t] * padded[:, t : t + n]
    return out.astype(rows.dtype)


def _minplus_pass(d2, step, axis):
    moved = np.moveaxis(d2, axis, 0)
    n = moved.shape[0]
    flat = moved.reshape(n, -1)
    pos = np.arange(n, dtype=np.float64) * step
    out = np.empty_like(flat)
    for i in range(n):
        out[i] = np.min(flat + ((pos[i] - pos) ** 2)[:, None], axis=0)
    return np.moveaxis(out.reshape(moved.shape), 0, axis)


def edt_squared(foreground, spacing):
    """Exact squared Euclidean distance (mm^2) to the nearest foreground voxel."""
    d2 = np.where(foreground, 0.0, BIG)
    for axis in range(3):
        d2 = _minplus_pass(d2, float(spacing[axis]), axis)
    return np.ascontiguousarray(d2)
