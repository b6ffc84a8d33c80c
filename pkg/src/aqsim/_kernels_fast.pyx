# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled motion and pairing kernels.

Twin of ``aqsim._kernels_ref``: identical floating-point expression
order, compiled with contraction disabled, so outputs are bit-identical
to the pure-numpy path.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()

MAX_BOUNCES = 16
cdef int _MAX_BOUNCES = 16
cdef double _WALL_SLACK = 1e-12


def advance_reflect(double[:, ::1] pos, double[:, ::1] vel,
                    double dt, double radius):
    cdef Py_ssize_t n = pos.shape[0]
    hit_arr = np.zeros(n, dtype=np.uint8)
    hit_z_arr = np.zeros(n, dtype=np.float64)
    if n == 0:
        return hit_arr, hit_z_arr, 0

    cdef unsigned char[::1] hit = hit_arr
    cdef double[::1] hit_z = hit_z_arr
    cdef double r2max = radius * radius
    cdef double inv_r2_twice = 2.0 / r2max
    cdef Py_ssize_t i
    cdef int bounce, escaped = 0
    cdef double x, y, z, vx, vy, vz, tr
    cdef double nx, ny, nz, end_r2, a, b, c, disc, s, dot, r2, factor

    for i in range(n):
        x = pos[i, 0]
        y = pos[i, 1]
        z = pos[i, 2]
        vx = vel[i, 0]
        vy = vel[i, 1]
        vz = vel[i, 2]
        tr = dt
        for bounce in range(_MAX_BOUNCES):
            nx = x + vx * tr
            ny = y + vy * tr
            nz = z + vz * tr
            end_r2 = nx * nx + ny * ny + nz * nz
            if end_r2 <= r2max:
                x = nx
                y = ny
                z = nz
                break
            a = vx * vx + vy * vy + vz * vz
            b = x * vx + y * vy + z * vz
            c = x * x + y * y + z * z - r2max
            disc = b * b - a * c
            if disc < 0.0:
                disc = 0.0
            s = (-b + sqrt(disc)) / a
            x = x + vx * s
            y = y + vy * s
            z = z + vz * s
            dot = (vx * x + vy * y + vz * z) * inv_r2_twice
            vx = vx - dot * x
            vy = vy - dot * y
            vz = vz - dot * z
            hit[i] = 1
            hit_z[i] = z
            tr = tr - s
            if tr <= 0.0:
                break
        r2 = x * x + y * y + z * z
        if not (r2 <= r2max):  # catches NaN as well
            if r2 <= r2max * (1.0 + _WALL_SLACK):
                factor = radius / sqrt(r2)
                x = x * factor
                y = y * factor
                z = z * factor
            else:
                escaped += 1
        pos[i, 0] = x
        pos[i, 1] = y
        pos[i, 2] = z
        vel[i, 0] = vx
        vel[i, 1] = vy
        vel[i, 2] = vz
    return hit_arr, hit_z_arr, escaped


def build_pairs(double[:, ::1] pos, double r0, double radius):
    cdef Py_ssize_t n = pos.shape[0]
    partner_arr = np.full(n, -1, dtype=np.intp)
    if n < 2:
        return partner_arr

    cdef double cell = r0
    cdef double origin = -(radius + r0)
    cdef double span = 2.0 * (radius + r0)
    cdef long ncell = <long>np.ceil(span / cell) + 2

    keys_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] keys = keys_arr
    cdef Py_ssize_t i, j
    cdef long cx, cy, cz
    for i in range(n):
        cx = <long>floor((pos[i, 0] - origin) / cell)
        cy = <long>floor((pos[i, 1] - origin) / cell)
        cz = <long>floor((pos[i, 2] - origin) / cell)
        if cx < 0: cx = 0
        if cx > ncell - 1: cx = ncell - 1
        if cy < 0: cy = 0
        if cy > ncell - 1: cy = ncell - 1
        if cz < 0: cz = 0
        if cz > ncell - 1: cz = ncell - 1
        keys[i] = (<long long>cx * ncell + cy) * ncell + cz

    order_arr = np.argsort(keys_arr, kind="stable")
    cdef cnp.intp_t[::1] order = order_arr
    sorted_keys_arr = keys_arr[order_arr]
    cdef long long[::1] sorted_keys = sorted_keys_arr

    cdef double r0sq = r0 * r0
    best_d2_arr = np.full(n, np.inf, dtype=np.float64)
    best_j_arr = np.full(n, -1, dtype=np.intp)
    cdef double[::1] best_d2 = best_d2_arr
    cdef cnp.intp_t[::1] best_j = best_j_arr
    cdef cnp.intp_t[::1] partner = partner_arr

    cdef int dx, dy, dz
    cdef long long nkey
    cdef Py_ssize_t lo, hi, mid, k
    cdef double ddx, ddy, ddz, d2
    cdef double px, py, pz

    for i in range(n):
        px = pos[i, 0]
        py = pos[i, 1]
        pz = pos[i, 2]
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                for dz in range(-1, 2):
                    nkey = keys[i] + ((<long long>dx * ncell + dy) * ncell + dz)
                    # lower bound
                    lo = 0
                    hi = n
                    while lo < hi:
                        mid = (lo + hi) >> 1
                        if sorted_keys[mid] < nkey:
                            lo = mid + 1
                        else:
                            hi = mid
                    # scan the bucket
                    k = lo
                    while k < n and sorted_keys[k] == nkey:
                        j = order[k]
                        k += 1
                        if j == i:
                            continue
                        ddx = pos[j, 0] - px
                        ddy = pos[j, 1] - py
                        ddz = pos[j, 2] - pz
                        d2 = ddx * ddx + ddy * ddy + ddz * ddz
                        if d2 > r0sq:
                            continue
                        if d2 < best_d2[i] or (d2 == best_d2[i] and j < best_j[i]):
                            best_d2[i] = d2
                            best_j[i] = j

    for i in range(n):
        j = best_j[i]
        if j >= 0 and best_j[j] == i:
            partner[i] = j
    return partner_arr
