"""Independent oracles for cross-checking the library implementations.

Everything here is deliberately written the dumb way (full scans, parity
ray casting, plain difference quotients) and shares no code with the paths
it validates.
"""

from __future__ import annotations

import numpy as np


def brute_force_distance(p, mesh):
    """Minimum distance to the mesh by scanning every face with an
    independent closest-point construction (projection + edge clamping)."""
    p = np.asarray(p, dtype=float)
    best = (np.inf, None, -1)
    verts = mesh.vertices
    for fi, (i, j, k) in enumerate(mesh.faces):
        a, b, c = verts[i], verts[j], verts[k]
        q = _closest_on_triangle(p, a, b, c)
        d = float(np.linalg.norm(p - q))
        if d < best[0] - 1e-15:
            best = (d, q, fi)
    return best


def _closest_on_triangle(p, a, b, c):
    n = np.cross(b - a, c - a)
    nn = n / np.linalg.norm(n)
    proj = p - np.dot(p - a, nn) * nn
    # barycentric test of the projection
    v0, v1, v2 = c - a, b - a, proj - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    u = (d11 * d20 - d01 * d21) / den
    v = (d00 * d21 - d01 * d20) / den
    if u >= 0 and v >= 0 and u + v <= 1:
        return proj
    candidates = [_closest_on_segment(p, a, b),
                  _closest_on_segment(p, b, c),
                  _closest_on_segment(p, c, a)]
    dists = [np.linalg.norm(p - q) for q in candidates]
    return candidates[int(np.argmin(dists))]


def _closest_on_segment(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / (ab @ ab), 0.0, 1.0)
    return a + t * ab


def raycast_inside(points, mesh, direction=(0.61803398875, 0.7548776662, 0.2199786),
                   chunk: int = 512):
    """Parity ray casting: True where a point is inside the closed mesh.

    Casts along a fixed irrational-ish direction to dodge axis-aligned
    degeneracies; Moller-Trumbore intersection per (point, face) pair.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    verts = mesh.vertices
    f = mesh.faces
    a = verts[f[:, 0]]
    e1 = verts[f[:, 1]] - a
    e2 = verts[f[:, 2]] - a
    inside = np.zeros(pts.shape[0], dtype=bool)
    pvec = np.cross(d, e2)                     # constant per face
    det = np.einsum("ij,ij->i", e1, pvec)
    ok_det = np.abs(det) > 1e-14
    inv_det = np.where(ok_det, 1.0 / np.where(ok_det, det, 1.0), 0.0)
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        p = pts[lo:hi]
        tvec = p[:, None, :] - a[None, :, :]
        u = np.einsum("ijk,jk->ij", tvec, pvec) * inv_det[None, :]
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("ijk,k->ij", qvec, d) * inv_det[None, :]
        t = np.einsum("ijk,jk->ij", qvec, e2) * inv_det[None, :]
        hit = (ok_det[None, :] & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0))
        inside[lo:hi] = (hit.sum(axis=1) % 2) == 1
    return inside


def central_difference(fn, x, h):
    """Scalar central difference of a scalar- or complex-valued callable."""
    return (fn(x + h) - fn(x - h)) / (2.0 * h)
