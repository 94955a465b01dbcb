# Compiled inner loops. Signatures mirror urbannav._kernels_py exactly;
# argument validation happens in urbannav.kernels.
from libc.math cimport acos, cos, sin, sqrt, M_PI

import numpy as np


def relative_positions(const double[:, ::1] xy, const double[::1] yaw,
                       const long long[::1] anchors, const long long[:, ::1] offsets):
    cdef Py_ssize_t m = offsets.shape[0]
    cdef Py_ssize_t o = offsets.shape[1]
    out_arr = np.empty((m, o, 2), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef long long a, b
    cdef double c, s, dx, dy
    for i in range(m):
        a = anchors[i]
        c = cos(yaw[a])
        s = sin(yaw[a])
        for j in range(o):
            b = a + offsets[i, j]
            dx = xy[b, 0] - xy[a, 0]
            dy = xy[b, 1] - xy[a, 1]
            out[i, j, 0] = c * dx + s * dy
            out[i, j, 1] = -s * dx + c * dy
    return out_arr


def mean_step_length(const double[:, ::1] xy):
    cdef Py_ssize_t n = xy.shape[0]
    cdef Py_ssize_t i
    cdef double total = 0.0
    cdef double dx, dy
    for i in range(n - 1):
        dx = xy[i + 1, 0] - xy[i, 0]
        dy = xy[i + 1, 1] - xy[i, 1]
        total += sqrt(dx * dx + dy * dy)
    return total / (n - 1)


def orientation_errors(const double[:, :, ::1] pred, const double[:, :, ::1] gt, double eps):
    cdef Py_ssize_t n = pred.shape[0]
    cdef Py_ssize_t k = pred.shape[1]
    angles_arr = np.zeros((n, k), dtype=np.float64)
    valid_arr = np.zeros((n, k), dtype=np.bool_)
    cdef double[:, ::1] angles = angles_arr
    cdef unsigned char[:, ::1] valid = valid_arr.view(np.uint8)
    cdef Py_ssize_t i, j
    cdef double px, py, gx, gy, pn2, gn2, r
    cdef double eps2 = eps * eps
    for i in range(n):
        for j in range(k):
            px = pred[i, j, 0]
            py = pred[i, j, 1]
            gx = gt[i, j, 0]
            gy = gt[i, j, 1]
            pn2 = px * px + py * py
            gn2 = gx * gx + gy * gy
            if pn2 <= eps2 or gn2 <= eps2:
                continue
            r = (px * gx + py * gy) / sqrt(pn2 * gn2)
            if r > 1.0:
                r = 1.0
            elif r < -1.0:
                r = -1.0
            angles[i, j] = acos(r) * (180.0 / M_PI)
            valid[i, j] = 1
    return angles_arr, valid_arr
