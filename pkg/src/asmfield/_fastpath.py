"""Fused sampling/accumulation kernel for the pose-energy hot loop.

Equivalent to mapping every lattice node into the other grid's frame,
sampling the quadratic B-spline value and derivative there, and reducing

    f  = sum own * value
    S1 = sum own * derivative                 (3 complex)
    M  = sum own * outer(node, derivative)    (3x3 complex)

in one serial pass (deterministic order).  The caller turns S1 and M into
translational and rotational score gradients.  Falls back to None when
numba is unavailable; energy.py then uses the vectorized numpy route.
"""

from __future__ import annotations

import numpy as np

try:
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    _nb = None
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @_nb.njit(cache=True)
    def spline_moments(nodes, own_vals, rmap, tmap, fv,
                       px, py, pz, origin, spacing, blo, bhi, want_grad):
        m = nodes.shape[0]
        topx = px - 1.5
        topy = py - 1.5
        topz = pz - 1.5
        f_acc = 0.0 + 0.0j
        s1 = np.zeros(3, dtype=np.complex128)
        mom = np.zeros((3, 3), dtype=np.complex128)
        inside = 0
        wx = np.empty(3)
        wy = np.empty(3)
        wz = np.empty(3)
        dx = np.empty(3)
        dy = np.empty(3)
        dz = np.empty(3)
        inv_h = 1.0 / spacing
        for i in range(m):
            nx0 = nodes[i, 0]
            ny0 = nodes[i, 1]
            nz0 = nodes[i, 2]
            qx = rmap[0, 0] * nx0 + rmap[0, 1] * ny0 + rmap[0, 2] * nz0 + tmap[0]
            qy = rmap[1, 0] * nx0 + rmap[1, 1] * ny0 + rmap[1, 2] * nz0 + tmap[1]
            qz = rmap[2, 0] * nx0 + rmap[2, 1] * ny0 + rmap[2, 2] * nz0 + tmap[2]
            if (blo[0] <= qx <= bhi[0] and blo[1] <= qy <= bhi[1]
                    and blo[2] <= qz <= bhi[2]):
                inside += 1
            ux = (qx - origin[0]) * inv_h + 2.0
            uy = (qy - origin[1]) * inv_h + 2.0
            uz = (qz - origin[2]) * inv_h + 2.0
            if (ux < 0.5 or uy < 0.5 or uz < 0.5
                    or ux > topx or uy > topy or uz > topz):
                continue  # the stencil value is exactly zero beyond the fade
            n0x = np.int64(np.rint(ux))
            n0y = np.int64(np.rint(uy))
            n0z = np.int64(np.rint(uz))
            if n0x < 1:
                n0x = 1
            elif n0x > px - 2:
                n0x = px - 2
            if n0y < 1:
                n0y = 1
            elif n0y > py - 2:
                n0y = py - 2
            if n0z < 1:
                n0z = 1
            elif n0z > pz - 2:
                n0z = pz - 2
            fx = ux - n0x
            fy = uy - n0y
            fz = uz - n0z
            wx[0] = 0.5 * (0.5 - fx) ** 2
            wx[1] = 0.75 - fx * fx
            wx[2] = 0.5 * (0.5 + fx) ** 2
            wy[0] = 0.5 * (0.5 - fy) ** 2
            wy[1] = 0.75 - fy * fy
            wy[2] = 0.5 * (0.5 + fy) ** 2
            wz[0] = 0.5 * (0.5 - fz) ** 2
            wz[1] = 0.75 - fz * fz
            wz[2] = 0.5 * (0.5 + fz) ** 2
            dx[0] = -(0.5 - fx) * inv_h
            dx[1] = -2.0 * fx * inv_h
            dx[2] = (0.5 + fx) * inv_h
            dy[0] = -(0.5 - fy) * inv_h
            dy[1] = -2.0 * fy * inv_h
            dy[2] = (0.5 + fy) * inv_h
            dz[0] = -(0.5 - fz) * inv_h
            dz[1] = -2.0 * fz * inv_h
            dz[2] = (0.5 + fz) * inv_h

            val = 0.0 + 0.0j
            gx = 0.0 + 0.0j
            gy = 0.0 + 0.0j
            gz = 0.0 + 0.0j
            base = (n0x - 1) + px * ((n0y - 1) + py * (n0z - 1))
            for a in range(3):
                wa = wx[a]
                da = dx[a]
                idx_a = base + a
                for b in range(3):
                    wab = wa * wy[b]
                    dab = da * wy[b]
                    adb = wa * dy[b]
                    idx_ab = idx_a + px * b
                    for c in range(3):
                        v = fv[idx_ab + px * py * c]
                        val += (wab * wz[c]) * v
                        if want_grad:
                            gx += (dab * wz[c]) * v
                            gy += (adb * wz[c]) * v
                            gz += (wab * dz[c]) * v
            ov = own_vals[i]
            f_acc += ov * val
            if want_grad:
                s1[0] += ov * gx
                s1[1] += ov * gy
                s1[2] += ov * gz
                mom[0, 0] += ov * nx0 * gx
                mom[0, 1] += ov * nx0 * gy
                mom[0, 2] += ov * nx0 * gz
                mom[1, 0] += ov * ny0 * gx
                mom[1, 1] += ov * ny0 * gy
                mom[1, 2] += ov * ny0 * gz
                mom[2, 0] += ov * nz0 * gx
                mom[2, 1] += ov * nz0 * gy
                mom[2, 2] += ov * nz0 * gz
        return f_acc, s1, mom, inside

    @_nb.njit(cache=True, parallel=True)
    def winding_numbers(points, va, vb, vc):
        """Generalized winding number per point (sum of signed solid angles).

        Parallel over points; each point's face loop stays serial so the
        result is deterministic.
        """
        m = points.shape[0]
        n = va.shape[0]
        out = np.empty(m)
        for i in _nb.prange(m):
            px = points[i, 0]
            py = points[i, 1]
            pz = points[i, 2]
            total = 0.0
            for j in range(n):
                ax = va[j, 0] - px
                ay = va[j, 1] - py
                az = va[j, 2] - pz
                bx = vb[j, 0] - px
                by = vb[j, 1] - py
                bz = vb[j, 2] - pz
                cx = vc[j, 0] - px
                cy = vc[j, 1] - py
                cz = vc[j, 2] - pz
                la = np.sqrt(ax * ax + ay * ay + az * az)
                lb = np.sqrt(bx * bx + by * by + bz * bz)
                lc = np.sqrt(cx * cx + cy * cy + cz * cz)
                num = (ax * (by * cz - bz * cy)
                       + ay * (bz * cx - bx * cz)
                       + az * (bx * cy - by * cx))
                den = (la * lb * lc
                       + (ax * bx + ay * by + az * bz) * lc
                       + (bx * cx + by * cy + bz * cz) * la
                       + (cx * ax + cy * ay + cz * az) * lb)
                total += 2.0 * np.arctan2(num, den)
            out[i] = total
        return out / (4.0 * np.pi)

else:  # pragma: no cover
    spline_moments = None
    winding_numbers = None
