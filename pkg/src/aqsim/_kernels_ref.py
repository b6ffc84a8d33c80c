"""Pure-numpy motion and pairing kernels.

These are the reference implementations of the two hot loops of the
spatial backend.  ``aqsim._kernels_fast`` carries compiled twins that
must stay bit-identical: every floating-point expression here is
written in the exact association order the Cython source uses, and the
extension is built with contraction disabled, so both paths produce the
same IEEE doubles.
"""

from __future__ import annotations

import numpy as np

MAX_BOUNCES = 16
_WALL_SLACK = 1e-12


def advance_reflect(
    pos: np.ndarray,
    vel: np.ndarray,
    dt: float,
    radius: float,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Advance straight-line motion with specular reflection at the sphere.

    Mutates ``pos`` and ``vel`` in place.  Returns ``(hit, hit_z, escaped)``
    where ``hit`` flags quanta that touched the membrane this step,
    ``hit_z`` is the z coordinate of the last wall contact, and
    ``escaped`` counts quanta still outside after ``MAX_BOUNCES``
    sub-steps (an integration fault the caller must surface).
    """
    n = pos.shape[0]
    hit = np.zeros(n, dtype=np.uint8)
    hit_z = np.zeros(n, dtype=np.float64)
    if n == 0:
        return hit, hit_z, 0

    r2max = radius * radius
    inv_r2_twice = 2.0 / r2max
    t_rem = np.full(n, float(dt), dtype=np.float64)
    active = np.arange(n, dtype=np.intp)

    for _ in range(MAX_BOUNCES):
        if active.size == 0:
            break
        x = pos[active, 0]
        y = pos[active, 1]
        z = pos[active, 2]
        vx = vel[active, 0]
        vy = vel[active, 1]
        vz = vel[active, 2]
        tr = t_rem[active]

        nx = x + vx * tr
        ny = y + vy * tr
        nz = z + vz * tr
        end_r2 = nx * nx + ny * ny + nz * nz
        inside = end_r2 <= r2max

        done = active[inside]
        pos[done, 0] = nx[inside]
        pos[done, 1] = ny[inside]
        pos[done, 2] = nz[inside]

        keep = ~inside
        cur = active[keep]
        if cur.size == 0:
            active = cur
            break
        x = x[keep]
        y = y[keep]
        z = z[keep]
        vx = vx[keep]
        vy = vy[keep]
        vz = vz[keep]
        tr = tr[keep]

        a = vx * vx + vy * vy + vz * vz
        b = x * vx + y * vy + z * vz
        c = x * x + y * y + z * z - r2max
        disc = b * b - a * c
        disc = np.maximum(disc, 0.0)
        s = (-b + np.sqrt(disc)) / a

        x = x + vx * s
        y = y + vy * s
        z = z + vz * s
        dot = (vx * x + vy * y + vz * z) * inv_r2_twice
        vx = vx - dot * x
        vy = vy - dot * y
        vz = vz - dot * z

        pos[cur, 0] = x
        pos[cur, 1] = y
        pos[cur, 2] = z
        vel[cur, 0] = vx
        vel[cur, 1] = vy
        vel[cur, 2] = vz
        hit[cur] = 1
        hit_z[cur] = z
        t_rem[cur] = tr - s
        active = cur[t_rem[cur] > 0.0]

    escaped = 0
    x = pos[:, 0]
    y = pos[:, 1]
    z = pos[:, 2]
    r2 = x * x + y * y + z * z
    bad = np.flatnonzero(~(r2 <= r2max))  # catches NaN as well
    if bad.size:
        r2b = r2[bad]
        ok = r2b <= r2max * (1.0 + _WALL_SLACK)
        fix = bad[ok]
        if fix.size:
            factor = radius / np.sqrt(r2b[ok])
            pos[fix, 0] = pos[fix, 0] * factor
            pos[fix, 1] = pos[fix, 1] * factor
            pos[fix, 2] = pos[fix, 2] * factor
        escaped = int(bad.size - fix.size)
    return hit, hit_z, escaped


def build_pairs(pos: np.ndarray, r0: float, radius: float) -> np.ndarray:
    """Mutual-nearest-neighbour matching within contact distance ``r0``.

    Returns an intp array ``partner`` with ``partner[i] = j`` when i and
    j are each other's nearest quantum at squared distance <= r0*r0,
    else -1.  Ties on distance resolve to the lower row index, so the
    winner is unique and independent of scan order (rows are id-sorted).
    """
    n = pos.shape[0]
    partner = np.full(n, -1, dtype=np.intp)
    if n < 2:
        return partner

    cell = r0
    origin = -(radius + r0)
    span = 2.0 * (radius + r0)
    ncell = int(np.ceil(span / cell)) + 2

    ix = np.floor((pos[:, 0] - origin) / cell).astype(np.int64)
    iy = np.floor((pos[:, 1] - origin) / cell).astype(np.int64)
    iz = np.floor((pos[:, 2] - origin) / cell).astype(np.int64)
    np.clip(ix, 0, ncell - 1, out=ix)
    np.clip(iy, 0, ncell - 1, out=iy)
    np.clip(iz, 0, ncell - 1, out=iz)
    keys = (ix * ncell + iy) * ncell + iz

    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]

    r0sq = r0 * r0
    best_d2 = np.full(n, np.inf, dtype=np.float64)
    best_j = np.full(n, -1, dtype=np.intp)

    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                nkeys = keys + ((dx * ncell + dy) * ncell + dz)
                lo = np.searchsorted(sorted_keys, nkeys, side="left")
                hi = np.searchsorted(sorted_keys, nkeys, side="right")
                counts = hi - lo
                total = int(counts.sum())
                if total == 0:
                    continue
                ii = np.repeat(np.arange(n, dtype=np.intp), counts)
                starts = np.zeros(n, dtype=np.int64)
                np.cumsum(counts[:-1], out=starts[1:])
                jj = order[
                    np.arange(total, dtype=np.int64)
                    - np.repeat(starts, counts)
                    + np.repeat(lo, counts)
                ]
                keep = ii != jj
                ii = ii[keep]
                jj = jj[keep]
                if ii.size == 0:
                    continue
                ddx = pos[jj, 0] - pos[ii, 0]
                ddy = pos[jj, 1] - pos[ii, 1]
                ddz = pos[jj, 2] - pos[ii, 2]
                d2 = ddx * ddx + ddy * ddy + ddz * ddz
                close = d2 <= r0sq
                ii = ii[close]
                jj = jj[close]
                d2 = d2[close]
                if ii.size == 0:
                    continue
                # a batch may hold several candidates per i; pick the
                # batch-local winner by (d2, j) before merging
                sel = np.lexsort((jj, d2, ii))
                ii_s = ii[sel]
                first = np.ones(ii_s.size, dtype=bool)
                first[1:] = ii_s[1:] != ii_s[:-1]
                sel = sel[first]
                ii = ii[sel]
                jj = jj[sel]
                d2 = d2[sel]
                better = (d2 < best_d2[ii]) | (
                    (d2 == best_d2[ii]) & (jj < best_j[ii])
                )
                upd = np.where(better)[0]
                best_d2[ii[upd]] = d2[upd]
                best_j[ii[upd]] = jj[upd]

    has = best_j >= 0
    idx = np.where(has)[0]
    cand = best_j[idx]
    mutual = best_j[cand] == idx
    partner[idx[mutual]] = cand[mutual]
    return partner
