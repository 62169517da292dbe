"""Numba-jitted hot kernels: interpolation pulls and the exact distance transform."""

import numpy as np
from numba import njit

# Stand-in for +infinity in squared-distance grids. Large enough that it always
# loses a min(), small enough that envelope intersections stay finite.
BIG = 1.0e30


@njit(cache=True)
def pull_affine_linear(src, mat, off, out_shape):
    # out[i,j,k] = trilinear sample of src at mat @ (i,j,k) + off, 0 outside.
    n0, n1, n2 = src.shape
    out = np.zeros(out_shape, dtype=src.dtype)
    for i in range(out_shape[0]):
        for j in range(out_shape[1]):
            bx = mat[0, 0] * i + mat[0, 1] * j + off[0]
            by = mat[1, 0] * i + mat[1, 1] * j + off[1]
            bz = mat[2, 0] * i + mat[2, 1] * j + off[2]
            for k in range(out_shape[2]):
                x = bx + mat[0, 2] * k
                y = by + mat[1, 2] * k
                z = bz + mat[2, 2] * k
                if (
                    x < 0.0 or x > n0 - 1.0
                    or y < 0.0 or y > n1 - 1.0
                    or z < 0.0 or z > n2 - 1.0
                ):
                    continue
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                z0 = int(np.floor(z))
                if x0 > n0 - 2:
                    x0 = n0 - 2
                if x0 < 0:
                    x0 = 0
                if y0 > n1 - 2:
                    y0 = n1 - 2
                if y0 < 0:
                    y0 = 0
                if z0 > n2 - 2:
                    z0 = n2 - 2
                if z0 < 0:
                    z0 = 0
                x1 = min(x0 + 1, n0 - 1)
                y1 = min(y0 + 1, n1 - 1)
                z1 = min(z0 + 1, n2 - 1)
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
                out[i, j, k] = acc
    return out


@njit(cache=True)
def pull_affine_nearest(src, mat, off, out_shape):
    # Nearest-neighbor variant; rounds half up, 0 outside the grid.
    n0, n1, n2 = src.shape
    out = np.zeros(out_shape, dtype=src.dtype)
    for i in range(out_shape[0]):
        for j in range(out_shape[1]):
            bx = mat[0, 0] * i + mat[0, 1] * j + off[0]
            by = mat[1, 0] * i + mat[1, 1] * j + off[1]
            bz = mat[2, 0] * i + mat[2, 1] * j + off[2]
            for k in range(out_shape[2]):
                xi = int(np.floor(bx + mat[0, 2] * k + 0.5))
                yi = int(np.floor(by + mat[1, 2] * k + 0.5))
                zi = int(np.floor(bz + mat[2, 2] * k + 0.5))
                if 0 <= xi < n0 and 0 <= yi < n1 and 0 <= zi < n2:
                    out[i, j, k] = src[xi, yi, zi]
    return out


@njit(cache=True)
def pull_field_linear(src, dx, dy, dz):
    # out[v] = trilinear sample of src at v + displacement(v), 0 outside.
    n0, n1, n2 = src.shape
    out = np.zeros(dx.shape, dtype=src.dtype)
    for i in range(dx.shape[0]):
        for j in range(dx.shape[1]):
            for k in range(dx.shape[2]):
                x = i + dx[i, j, k]
                y = j + dy[i, j, k]
                z = k + dz[i, j, k]
                if (
                    x < 0.0 or x > n0 - 1.0
                    or y < 0.0 or y > n1 - 1.0
                    or z < 0.0 or z > n2 - 1.0
                ):
                    continue
                x0 = int(np.floor(x))
                y0 = int(np.floor(y))
                z0 = int(np.floor(z))
                if x0 > n0 - 2:
                    x0 = n0 - 2
                if x0 < 0:
                    x0 = 0
                if y0 > n1 - 2:
                    y0 = n1 - 2
                if y0 < 0:
                    y0 = 0
                if z0 > n2 - 2:
                    z0 = n2 - 2
                if z0 < 0:
                    z0 = 0
                x1 = min(x0 + 1, n0 - 1)
                y1 = min(y0 + 1, n1 - 1)
                z1 = min(z0 + 1, n2 - 1)
                fx = x - x0
                fy = y - y0
                fz = z - z0
                gx = 1.0 - fx
                gy = 1.0 - fy
                gz = 1.0 - fz
                out[i, j, k] = (
                    gx * gy * gz * src[x0, y0, z0]
                    + gx * gy * fz * src[x0, y0, z1]
                    + gx * fy * gz * src[x0, y1, z0]
                    + gx * fy * fz * src[x0, y1, z1]
                    + fx * gy * gz * src[x1, y0, z0]
                    + fx * gy * fz * src[x1, y0, z1]
                    + fx * fy * gz * src[x1, y1, z0]
                    + fx * fy * fz * src[x1, y1, z1]
                )
    return out


@njit(cache=True)
def pull_field_nearest(src, dx, dy, dz):
    n0, n1, n2 = src.shape
    out = np.zeros(dx.shape, dtype=src.dtype)
    for i in range(dx.shape[0]):
        for j in range(dx.shape[1]):
            for k in range(dx.shape[2]):
                xi = int(np.floor(i + dx[i, j, k] + 0.5))
                yi = int(np.floor(j + dy[i, j, k] + 0.5))
                zi = int(np.floor(k + dz[i, j, k] + 0.5))
                if 0 <= xi < n0 and 0 <= yi < n1 and 0 <= zi < n2:
                    out[i, j, k] = src[xi, yi, zi]
    return out


@njit(cache=True)
def blur_rows_replicate(rows, kernel):
    # 1D convolution along the last axis with replicate padding; float64
    # accumulator per sample.
    n_rows, n = rows.shape
    radius = kernel.size // 2
    out = np.empty_like(rows)
    for r in range(n_rows):
        for i in range(n):
            acc = 0.0
            for t in range(kernel.size):
                j = i + t - radius
                if j < 0:
                    j = 0
                elif j >= n:
                    j = n - 1
                acc += kernel[t] * rows[r, j]
            out[r, i] = acc
    return out


@njit(cache=True)
def _edt_pass_rows(rows, step):
    # Lower-envelope (Felzenszwalb) pass over each row; rows holds squared
    # distances sampled at positions q*step, BIG meaning "no site yet".
    n_rows, n = rows.shape
    out = np.empty_like(rows)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    for r in range(n_rows):
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, n):
            xq = q * step
            fq = rows[r, q] + xq * xq
            while True:
                xv = v[k] * step
                s = (fq - (rows[r, v[k]] + xv * xv)) / (2.0 * xq - 2.0 * xv)
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for q in range(n):
            xq = q * step
            while z[k + 1] < xq:
                k += 1
            dx = xq - v[k] * step
            out[r, q] = dx * dx + rows[r, v[k]]
    return out


def edt_squared(foreground, spacing):
    """Exact squared Euclidean distance (mm^2) to the nearest foreground voxel."""
    d2 = np.where(foreground, 0.0, BIG)
    for axis in range(3):
        moved = np.ascontiguousarray(np.moveaxis(d2, axis, 2))
        shape = moved.shape
        rows = moved.reshape(-1, shape[2])
        rows = _edt_pass_rows(rows, float(spacing[axis]))
        d2 = np.moveaxis(rows.reshape(shape), 2, axis)
    return np.ascontiguousarray(d2)
