"""Skeletal density fields: complex kernel, per-part field grids, file format.

The field value at a query point aggregates a complex kernel over the part
boundary.  Each boundary patch is projected to the complex number
zeta = xi + i*eta, where xi is the signed distance from the query point to
the whole boundary and eta the distance to that particular patch.  The
kernel

    phi(zeta) = w / sqrt(2*pi) * zeta**-2 * g_sigma(eta/|xi| - 1)

combines a Gaussian "medial" factor g_sigma peaked where eta matches |xi|
(the near-nearest-neighbor shell) with an inverse-square "proximal" factor
whose phase is -2*angle(zeta).  The weight w is lambda1 for exterior query
points and lambda2 for interior ones, so interior high-density regions come
out with phase +pi/2 and exterior ones with -pi/2; products of two such
fields then reward complementary overlap (+lambda1*lambda2) and penalize
interior-interior collision (-lambda2**2) and empty-empty overlap
(-lambda1**2).

The aggregation is a flux sum over mesh faces, truncated to faces within
the (1+epsilon)|xi| shell; faces seen under a too-large solid angle are
split recursively so the midpoint quadrature stays accurate near the
boundary.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .distance import grid_pmc, unsigned_distance_batch, winding_pmc_batch
from .geometry import TriMesh

__all__ = [
    "KernelParams",
    "ComplexSpreadSample",
    "AffinityGrid",
    "phi_kernel",
    "phi_partials",
    "affinity_at",
    "affinity_gradient_at",
    "build_affinity_grid",
    "sample_grid",
    "save_field",
    "load_field",
    "default_params",
    "spacing_for_dims",
    "FieldFormatError",
]

_SQRT_2PI = float(np.sqrt(2.0 * np.pi))

GRID_MARGIN_FACTOR = 0.25     # bbox inflation per side, relative to its diagonal
BAND_SPACING_FACTOR = 0.25    # boundary band half-width: spacing / 4
MIN_TRUNCATION_RATIO = 3.4    # epsilon >= 3.4 sigma keeps the dropped tail < 1e-4
# default epsilon: at the 3.4 floor the pointwise relative truncation error can
# spike past 1e-3 where phase cancellation suppresses |rho|; 4 sigma holds the
# 1e-3 bound with margin everywhere
DEFAULT_TRUNCATION_RATIO = 4.0


@dataclass(frozen=True)
class KernelParams:
    """Kernel shape parameters.

    sigma      thickness of the medial band (scene length units)
    lambda1    exterior weight,  lambda2 > lambda1 the interior (penalty) weight
    epsilon    truncation width of the near-nearest-neighbor shell
    subdivision_kappa / subdivision_max_depth   solid-angle quadrature control:
        a face is split while |cos(theta)| * dA > kappa * eta**2
    """

    sigma: float
    lambda1: float = 1.0
    lambda2: float = 3.0
    epsilon: float | None = None
    subdivision_kappa: float = 0.05
    subdivision_max_depth: int = 4

    def __post_init__(self):
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", DEFAULT_TRUNCATION_RATIO * self.sigma)
        if not (self.sigma > 0):
            raise ValueError("sigma must be positive")
        if not (0 < self.lambda1 < self.lambda2):
            raise ValueError("need 0 < lambda1 < lambda2")
        if self.epsilon < MIN_TRUNCATION_RATIO * self.sigma - 1e-12:
            raise ValueError(f"epsilon must be >= {MIN_TRUNCATION_RATIO} * sigma")
        if not (self.subdivision_kappa > 0):
            raise ValueError("subdivision_kappa must be positive")
        if self.subdivision_max_depth < 0:
            raise ValueError("subdivision_max_depth must be >= 0")

    @property
    def penalty_factor(self) -> float:
        return self.lambda2 / self.lambda1


def default_params(mesh: TriMesh, sigma_factor: float = 0.05,
                   lambda1: float = 1.0, lambda2: float = 3.0) -> KernelParams:
    """Scale-free defaults: sigma tied to the part's bounding-box diagonal."""
    return KernelParams(sigma=sigma_factor * mesh.bbox_diagonal,
                        lambda1=lambda1, lambda2=lambda2)


@dataclass(frozen=True)
class ComplexSpreadSample:
    """One boundary-projection sample zeta = xi + i*eta.

    eta is a distance to an actual boundary point so it can never be smaller
    than the minimum distance |xi| (up to rounding).
    """

    xi: float
    eta: float

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.eta < abs(self.xi) - 1e-9:
            raise ValueError("eta cannot be below |xi| (not a boundary distance)")


def _gaussian(x: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * (x / sigma) ** 2) / (_SQRT_2PI * sigma)


def _phi_arrays(xi, eta, params: KernelParams, want_partials: bool):
    """Vectorized kernel and optional closed-form partials.

    xi may not be 0 and eta must be > 0 (the kernel is singular at zeta = 0
    and undefined on the imaginary axis).
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.any(xi == 0.0) or np.any(eta <= 0.0):
        raise ValueError("phi kernel requires xi != 0 and eta > 0")
    w = np.where(xi > 0.0, params.lambda1, params.lambda2)
    zeta = xi + 1j * eta
    inv_z2 = 1.0 / (zeta * zeta)
    abs_xi = np.abs(xi)
    x = eta / abs_xi - 1.0
    g = _gaussian(x, params.sigma)
    phi = (w / _SQRT_2PI) * inv_z2 * g
    if not want_partials:
        return phi, None, None
    gp = -(x / params.sigma ** 2) * g
    inv_z3 = inv_z2 / zeta
    s = np.sign(xi)
    d_xi = (w / _SQRT_2PI) * (-2.0 * inv_z3 * g + inv_z2 * gp * (-s * eta / (xi * xi)))
    d_eta = (w / _SQRT_2PI) * (-2.0j * inv_z3 * g + inv_z2 * gp / abs_xi)
    return phi, d_xi, d_eta


def phi_kernel(sample: ComplexSpreadSample, params: KernelParams) -> complex:
    phi, _, _ = _phi_arrays(sample.xi, sample.eta, params, want_partials=False)
    return complex(phi)


def phi_partials(sample: ComplexSpreadSample, params: KernelParams):
    """(d phi / d xi, d phi / d eta) in closed form."""
    _, d_xi, d_eta = _phi_arrays(sample.xi, sample.eta, params, want_partials=True)
    return complex(d_xi), complex(d_eta)


# ---------------------------------------------------------------------------
# field accumulation over mesh faces

def _subdivide(a, b, c):
    """Split each triangle into 4 congruent children, preserving orientation."""
    mab = 0.5 * (a + b)
    mbc = 0.5 * (b + c)
    mca = 0.5 * (c + a)
    ca = np.concatenate([a, mab, mca, mab])
    cb = np.concatenate([mab, b, mbc, mbc])
    cc = np.concatenate([mca, mbc, c, mca])
    return ca, cb, cc


def _accumulate_field(points: np.ndarray, xi: np.ndarray, grad_xi: np.ndarray | None,
                      mesh: TriMesh, params: KernelParams, truncated: bool,
                      want_grad: bool, pair_budget: int = 2_000_000):
    """Flux-sum the kernel over the mesh for each query point.

    points: (m, 3); xi: (m,) signed distances (none may sit in the band);
    grad_xi: (m, 3) unit gradients of xi, required when want_grad.
    Returns (rho (m,) complex128, grad (m, 3) complex128 or None).
    """
    m = points.shape[0]
    n = mesh.n_faces
    rho = np.zeros(m, dtype=np.complex128)
    grad = np.zeros((m, 3), dtype=np.complex128) if want_grad else None
    if m == 0 or n == 0:
        return rho, grad

    mids = mesh.face_midpoints
    normals = mesh.face_normals
    areas = mesh.face_areas
    va, vb, vc = mesh.face_corners
    circ = np.maximum(np.maximum(np.linalg.norm(va - mids, axis=1),
                                 np.linalg.norm(vb - mids, axis=1)),
                      np.linalg.norm(vc - mids, axis=1))
    abs_xi = np.abs(xi)
    window = (1.0 + params.epsilon) * abs_xi
    kappa = params.subdivision_kappa
    max_depth = params.subdivision_max_depth
    eta_floor = 1e-30

    def emit(node_ids, eta, cos_t, dA, v, normals_e):
        # the projected-area weight |cos(theta)| dA is the (non-negative)
        # solid-angle measure; the kernel phase comes from zeta**-2 alone
        ph, d_xi, d_eta = _phi_arrays(xi[node_ids], eta, params, want_partials=want_grad)
        wgt = np.abs(cos_t) * dA
        contrib = ph * wgt
        rho.real += np.bincount(node_ids, weights=contrib.real, minlength=m)
        rho.imag += np.bincount(node_ids, weights=contrib.imag, minlength=m)
        if want_grad:
            # full derivative: kernel partials plus the variation of the
            # projected-area weight itself, d|cos|/dp = sgn(cos)(n - cos v)/eta
            gvec = (d_xi[:, None] * grad_xi[node_ids]
                    + d_eta[:, None] * v) * wgt[:, None]
            dw = (np.sign(cos_t) * dA / eta)[:, None] * (normals_e - cos_t[:, None] * v)
            gvec = gvec + ph[:, None] * dw
            for axis in range(3):
                grad[:, axis].real += np.bincount(node_ids, weights=gvec[:, axis].real,
                                                  minlength=m)
                grad[:, axis].imag += np.bincount(node_ids, weights=gvec[:, axis].imag,
                                                  minlength=m)

    mid_sq = np.einsum("ij,ij->i", mids, mids)
    mid_dot_n = np.einsum("ij,ij->i", mids, normals)
    chunk = max(1, pair_budget // max(n, 1))
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        p = points[lo:hi]
        node_base = np.arange(lo, hi)
        eta2 = np.maximum(np.einsum("ij,ij->i", p, p)[:, None]
                          + mid_sq[None, :] - 2.0 * (p @ mids.T), 0.0)
        eta = np.sqrt(eta2)
        eta_safe = np.maximum(eta, eta_floor)
        cos_t = (p @ normals.T - mid_dot_n[None, :]) / eta_safe
        split = (np.abs(cos_t) * areas[None, :] > kappa * eta2)
        if max_depth == 0:
            split[:] = False
        in_window = eta <= window[lo:hi, None] if truncated else np.ones_like(eta, bool)
        usable = eta > eta_floor
        do_emit = in_window & ~split & usable
        # only split faces whose children could still contribute
        reachable = (eta <= window[lo:hi, None] + circ[None, :]) if truncated else True
        do_split = split & usable & reachable

        ni, fi = np.nonzero(do_emit)
        if ni.size:
            d_pair = p[ni] - mids[fi]
            eta_pair = np.linalg.norm(d_pair, axis=1)  # exact, not matmul form
            v = d_pair / np.maximum(eta_pair, eta_floor)[:, None]
            cos_pair = np.einsum("ij,ij->i", v, normals[fi])
            emit(node_base[ni], eta_pair, cos_pair, areas[fi], v, normals[fi])

        ni, fi = np.nonzero(do_split)
        if ni.size == 0:
            continue
        q_nodes = node_base[ni]
        qa, qb, qc = va[fi].copy(), vb[fi].copy(), vc[fi].copy()
        depth = 1
        while q_nodes.size and depth <= max_depth:
            qa, qb, qc = _subdivide(qa, qb, qc)
            q_nodes = np.tile(q_nodes, 4)
            pmid = (qa + qb + qc) / 3.0
            cross = np.cross(qb - qa, qc - qa)
            area4 = 0.5 * np.linalg.norm(cross, axis=1)
            nrm = cross / np.where(area4 > 0, 2.0 * area4, 1.0)[:, None]
            d = points[q_nodes] - pmid
            eta4 = np.linalg.norm(d, axis=1)
            e4 = np.maximum(eta4, eta_floor)
            cos4 = np.einsum("ij,ij->i", d, nrm) / e4
            split4 = (np.abs(cos4) * area4 > kappa * eta4 * eta4) & (depth < max_depth)
            ok = eta4 > eta_floor
            w4 = eta4 <= window[q_nodes] if truncated else np.ones_like(eta4, bool)
            emit_mask = w4 & ~split4 & ok
            if np.any(emit_mask):
                idx = np.nonzero(emit_mask)[0]
                v = d[idx] / eta4[idx][:, None]
                emit(q_nodes[idx], eta4[idx], cos4[idx], area4[idx], v, nrm[idx])
            keep = np.nonzero(split4 & ok)[0]
            q_nodes = q_nodes[keep]
            qa, qb, qc = qa[keep], qb[keep], qc[keep]
            depth += 1
    return rho, grad


def _query_geometry(points: np.ndarray, mesh: TriMesh, min_abs_xi: float):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dist, nearest, _ = unsigned_distance_batch(pts, mesh)
    pmc = winding_pmc_batch(pts, mesh, distances=dist)
    if np.any(pmc == 0) or np.any(dist < max(min_abs_xi, 1e-300)):
        raise ValueError("query point inside the boundary band; caller must exclude")
    xi = pmc * dist
    grad_xi = pmc[:, None] * (pts - nearest) / dist[:, None]
    return pts, xi, grad_xi


def affinity_at(p, mesh: TriMesh, params: KernelParams, *,
                truncated: bool = True, min_abs_xi: float = 0.0) -> complex:
    """Field value at a single point (points in the boundary band are rejected)."""
    pts, xi, _ = _query_geometry(np.asarray(p, dtype=float).reshape(1, 3), mesh, min_abs_xi)
    rho, _ = _accumulate_field(pts, xi, None, mesh, params, truncated, want_grad=False)
    return complex(rho[0])


def affinity_gradient_at(p, mesh: TriMesh, params: KernelParams, *,
                         truncated: bool = True, min_abs_xi: float = 0.0) -> np.ndarray:
    """Spatial gradient of the field at a single point, one complex value per axis."""
    pts, xi, gxi = _query_geometry(np.asarray(p, dtype=float).reshape(1, 3), mesh, min_abs_xi)
    _, grad = _accumulate_field(pts, xi, gxi, mesh, params, truncated, want_grad=True)
    return grad[0]


# ---------------------------------------------------------------------------
# per-part grids

def _shifted(arr: np.ndarray, axis: int, step: int) -> np.ndarray:
    """arr shifted by one node along axis with zero fill (no wraparound)."""
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if step > 0:
        src[axis] = slice(1, None)
        dst[axis] = slice(None, -1)
    else:
        src[axis] = slice(None, -1)
        dst[axis] = slice(1, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _fill_flagged(values: np.ndarray, gradients: np.ndarray, flags: np.ndarray):
    """Replace boundary-band node values by iterated neighbor averages.

    The kernel sum is not meaningful inside the band; a bounded, smoothly
    blended substitute keeps trilinear sampling continuous.  Band regions
    with no unflagged neighbor anywhere (cannot happen for bands thinner
    than the grid) would retain zeros.
    """
    if not flags.any():
        return values, gradients
    vals = np.where(flags, 0.0, values)
    grads = np.where(flags[..., None], 0.0, gradients)
    need = flags.copy()
    for _ in range(int(flags.ndim * max(flags.shape))):
        if not need.any():
            break
        have = ~need
        num_v = np.zeros_like(vals)
        num_g = np.zeros_like(grads)
        cnt = np.zeros(flags.shape)
        for axis in range(3):
            for step in (+1, -1):
                nb_ok = _shifted(have, axis, step)
                num_v += np.where(nb_ok, _shifted(vals, axis, step), 0.0)
                num_g += np.where(nb_ok[..., None], _shifted(grads, axis, step), 0.0)
                cnt += nb_ok
        newly = need & (cnt > 0)
        if not newly.any():
            break
        c = np.maximum(cnt, 1.0)
        vals = np.where(newly, num_v / c, vals)
        grads = np.where(newly[..., None], num_g / c[..., None], grads)
        need &= ~newly
    return vals, grads


@dataclass(frozen=True)
class AffinityGrid:
    """Uniform axis-aligned grid of field values and gradients in a part's body frame.

    Arrays are indexed [ix, iy, iz].  Nodes inside the boundary band
    (|xi| < spacing / 4) are flagged; their stored values are zero and the
    sampler falls back to the nearest unflagged corner of the cell.  Sampling
    interpolates into a one-cell virtual zero border so values fade to exact
    zeros continuously at the grid edge.
    """

    origin: np.ndarray
    spacing: float
    dims: tuple[int, int, int]
    values: np.ndarray
    gradients: np.ndarray
    flags: np.ndarray
    params: KernelParams
    source_mesh_id: str = ""

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        o.flags.writeable = False
        object.__setattr__(self, "origin", o)
        for name in ("values", "gradients", "flags"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hi = self.origin + self.spacing * (np.array(self.dims) - 1)
        return self.origin.copy(), hi

    @cached_property
    def node_points(self) -> np.ndarray:
        """(m, 3) node coordinates, x-fastest order (matches the file layout)."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ix.ravel(order="F"), iy.ravel(order="F"),
                        iz.ravel(order="F")], axis=1)
        return self.origin + self.spacing * idx

    @cached_property
    def _filled(self):
        return _fill_flagged(self.values, self.gradients, self.flags)

    @cached_property
    def _padded(self):
        """Zero-bordered (2 layers) flat copies used by the samplers, with
        precomputed corner offsets for the trilinear and B-spline stencils.
        Boundary-band nodes carry neighbor-averaged substitute values so the
        interpolated field is continuous everywhere; the double border lets
        the quadratic stencil fade to exact zeros before the cutoff."""
        nx, ny, nz = self.dims
        px, py, pz = nx + 4, ny + 4, nz + 4
        filled_v, filled_g = self._filled
        vals = np.zeros((px, py, pz), dtype=np.complex128)
        grads = np.zeros((px, py, pz, 3), dtype=np.complex128)
        vals[2:-2, 2:-2, 2:-2] = filled_v
        grads[2:-2, 2:-2, 2:-2] = filled_g
        fv = vals.ravel(order="F")
        fg = grads.transpose(2, 1, 0, 3).reshape(-1, 3)  # x-fastest node order
        # trilinear corner order: k = 4*dx + 2*dy + dz
        offsets8 = np.array([dx + px * (dy + py * dz)
                             for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])
        offsets27 = np.array([dx + px * (dy + py * dz)
                              for dx in (-1, 0, 1) for dy in (-1, 0, 1)
                              for dz in (-1, 0, 1)])
        return fv, fg, offsets8, offsets27

    def contains(self, points: np.ndarray) -> np.ndarray:
        """True where points lie within the real (unpadded) grid box."""
        pts = np.atleast_2d(points)
        lo, hi = self.bounds
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def sample_many(self, points: np.ndarray):
        """Trilinear values and gradients at many points; exact zeros outside.

        Returns (values (m,), gradients (m, 3), inside_real_bounds (m,)).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = pts.shape[0]
        nx, ny, nz = self.dims
        px, py, pz = nx + 4, ny + 4, nz + 4
        fv, fg, offsets8, _ = self._padded

        u = (pts - self.origin) / self.spacing + 2.0
        lo, hi = 1.0, np.array([px, py, pz], dtype=float) - 2.0
        in_pad = np.all((u >= lo) & (u <= hi), axis=1)
        uc = np.clip(u, lo, hi)
        base = np.minimum(uc.astype(np.int64), np.array([px, py, pz]) - 3)
        f = uc - base

        wx = np.stack([1.0 - f[:, 0], f[:, 0]], axis=1)
        wy = np.stack([1.0 - f[:, 1], f[:, 1]], axis=1)
        wz = np.stack([1.0 - f[:, 2], f[:, 2]], axis=1)
        w8 = (wx[:, :, None, None] * wy[:, None, :, None]
              * wz[:, None, None, :]).reshape(m, 8)
        w8 *= in_pad[:, None]

        flat8 = (base[:, 0] + px * (base[:, 1] + py * base[:, 2]))[:, None] + offsets8
        vals = np.einsum("mk,mk->m", w8, fv[flat8])
        grads = np.einsum("mk,mkc->mc", w8, fg[flat8])
        return vals, grads, self.contains(pts)

    def sample_smooth(self, points: np.ndarray, want_deriv: bool = True):
        """Quadratic B-spline values and (optionally) the exact spatial
        derivative of that interpolant, used by the pose-energy path.

        The spline reproduces the stored field to second order; unlike
        trilinear weights it is C1 everywhere, so pose sums built on it can
        be differentiated consistently (the derivative returned here is the
        exact differential of the value).  Fades to exact zeros across the
        virtual border.  Returns (values (m,), d_value (m, 3) | None,
        inside_real_bounds (m,)).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = pts.shape[0]
        nx, ny, nz = self.dims
        px, py, pz = nx + 4, ny + 4, nz + 4
        fv, fg, _, offsets27 = self._padded

        u = (pts - self.origin) / self.spacing + 2.0
        top = np.array([px, py, pz], dtype=float)
        # the stencil fades to exact zero at u = 0.5 and u = top - 1.5, so
        # clamping beyond that range keeps the sampled field continuous
        uc = np.clip(u, 0.5, top - 1.5)
        n0 = np.clip(np.rint(uc).astype(np.int64), 1,
                     np.array([px, py, pz]) - 2)
        f = uc - n0

        def axis_w(fa):
            return np.stack([0.5 * (0.5 - fa) ** 2,
                             0.75 - fa * fa,
                             0.5 * (0.5 + fa) ** 2], axis=1)

        wx, wy, wz = axis_w(f[:, 0]), axis_w(f[:, 1]), axis_w(f[:, 2])
        flat27 = (n0[:, 0] + px * (n0[:, 1] + py * n0[:, 2]))[:, None] + offsets27
        v27 = fv[flat27].reshape(m, 3, 3, 3)
        # factored contractions: z, then y, then x
        tz = np.einsum("mxyz,mz->mxy", v27, wz)
        ty = np.einsum("mxy,my->mx", tz, wy)
        vals = np.einsum("mx,mx->m", ty, wx)
        if not want_deriv:
            return vals, None, self.contains(pts)

        def axis_d(fa):
            return np.stack([-(0.5 - fa), -2.0 * fa, 0.5 + fa], axis=1) / self.spacing

        dx, dy, dz = axis_d(f[:, 0]), axis_d(f[:, 1]), axis_d(f[:, 2])
        deriv = np.empty((m, 3), dtype=np.complex128)
        deriv[:, 0] = np.einsum("mx,mx->m", ty, dx)
        deriv[:, 1] = np.einsum("mx,mx->m", np.einsum("mxy,my->mx", tz, dy), wx)
        tz_d = np.einsum("mxyz,mz->mxy", v27, dz)
        deriv[:, 2] = np.einsum("mx,mx->m",
                                np.einsum("mxy,my->mx", tz_d, wy), wx)
        return vals, deriv, self.contains(pts)

    @cached_property
    def sampling_values_flat(self) -> np.ndarray:
        """Filled node values in x-fastest order (what trilinear sampling at
        the exact node positions returns; band nodes carry the substitute)."""
        return np.ascontiguousarray(self._filled[0].ravel(order="F"))

    @cached_property
    def smooth_values_flat(self) -> np.ndarray:
        """B-spline smoothed node values in x-fastest order: exactly what
        sample_smooth returns at the node positions (separable 1-3-..-blend
        with weights [1/8, 3/4, 1/8] per axis, zero beyond the border)."""
        vals = self._filled[0]
        for axis in range(3):
            vals = (0.75 * vals
                    + 0.125 * _shifted(vals, axis, +1)
                    + 0.125 * _shifted(vals, axis, -1))
        return np.ascontiguousarray(vals.ravel(order="F"))


def sample_grid(grid: AffinityGrid, p):
    """Single-point sampling: (complex value, (3,) complex gradient)."""
    vals, grads, _ = grid.sample_many(np.asarray(p, dtype=float).reshape(1, 3))
    return complex(vals[0]), grads[0]


def spacing_for_dims(mesh: TriMesh, n: int,
                     margin_factor: float = GRID_MARGIN_FACTOR) -> float:
    """Spacing that makes the largest grid axis use n nodes (margins included)."""
    lo, hi = mesh.bbox
    margin = margin_factor * mesh.bbox_diagonal
    extent = float(np.max(hi - lo) + 2.0 * margin)
    return extent / (n - 1)


def build_affinity_grid(mesh: TriMesh, params: KernelParams, spacing: float,
                        threads: int = 1,
                        margin_factor: float = GRID_MARGIN_FACTOR) -> AffinityGrid:
    """Precompute field values and gradients on a uniform grid around the part.

    The grid covers the mesh bounding box inflated by margin_factor of its
    diagonal per side (default 25%).  A part that will mate with a much
    larger partner benefits from a wider margin: score contributions are
    clipped wherever this box ends, and a box that ends inside the partner's
    strong-field region leaves an orientation-dependent residue.
    Deterministic for fixed inputs regardless of thread count (chunks write
    disjoint slices).
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if margin_factor < 0:
        raise ValueError("margin_factor must be >= 0")
    lo, hi = mesh.bbox
    if spacing > float(np.min(hi - lo)) / 4.0:
        warnings.warn("grid spacing is coarse relative to the part; "
                      "small features may be lost", stacklevel=2)
    margin = margin_factor * mesh.bbox_diagonal
    extent = (hi - lo) + 2.0 * margin
    dims = tuple(int(np.ceil(e / spacing)) + 1 for e in extent)
    nx, ny, nz = dims
    # center the lattice on the part so symmetric parts get symmetric grids
    center = 0.5 * (lo + hi)
    origin = center - 0.5 * spacing * (np.array(dims) - 1)
    m = nx * ny * nz

    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    nodes = origin + spacing * np.stack(
        [ix.ravel(order="F"), iy.ravel(order="F"), iz.ravel(order="F")], axis=1)

    dist, nearest, _ = unsigned_distance_batch(nodes, mesh)
    pmc = grid_pmc(nodes, dims, spacing, mesh, dist)
    band = BAND_SPACING_FACTOR * spacing
    flagged = dist < band

    xi = pmc.astype(float) * dist
    safe = np.where(flagged, 1.0, dist)
    grad_xi = pmc[:, None] * (nodes - nearest) / safe[:, None]

    live = np.nonzero(~flagged)[0]
    vals_flat = np.zeros(m, dtype=np.complex128)
    grads_flat = np.zeros((m, 3), dtype=np.complex128)

    def run_chunk(sel):
        rho, grad = _accumulate_field(nodes[sel], xi[sel], grad_xi[sel], mesh,
                                      params, truncated=True, want_grad=True)
        vals_flat[sel] = rho
        grads_flat[sel] = grad

    if threads > 1 and live.size > 1:
        from concurrent.futures import ThreadPoolExecutor
        parts = np.array_split(live, threads * 4)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, [s for s in parts if s.size]))
    else:
        run_chunk(live)

    values = vals_flat.reshape(dims, order="F")
    gradients = grads_flat.reshape((nx, ny, nz, 3), order="F")
    flags = flagged.reshape(dims, order="F")
    return AffinityGrid(origin=origin, spacing=float(spacing), dims=dims,
                        values=values, gradients=gradients, flags=flags,
                        params=params, source_mesh_id=mesh.content_hash.hex())


# ---------------------------------------------------------------------------
# field file format (binary, little-endian)
#
#   magic "SDFG" | version u32 | mesh hash 32 bytes
#   sigma, lambda1, lambda2, epsilon      4 x f64
#   origin 3 x f64 | spacing f64 | dims 3 x u32
#   flag bitmap, 1 bit per node, x-fastest, LSB-first within each byte
#   values     2 x f64 per node (re, im), x-fastest
#   gradients  6 x f64 per node (gx re, gx im, gy re, gy im, gz re, gz im)

FIELD_MAGIC = b"SDFG"
FIELD_VERSION = 1


class FieldFormatError(ValueError):
    pass


def save_field(grid: AffinityGrid, path) -> None:
    nx, ny, nz = grid.dims
    m = nx * ny * nz
    header = struct.pack("<4sI", FIELD_MAGIC, FIELD_VERSION)
    mesh_hash = bytes.fromhex(grid.source_mesh_id) if grid.source_mesh_id else b"\0" * 32
    if len(mesh_hash) != 32:
        raise FieldFormatError("source_mesh_id must be a 32-byte hex digest")
    p = grid.params
    params = struct.pack("<4d", p.sigma, p.lambda1, p.lambda2, p.epsilon)
    geo = struct.pack("<3dd3I", *grid.origin, grid.spacing, nx, ny, nz)
    flags = np.packbits(grid.flags.ravel(order="F").astype(np.uint8),
                        bitorder="little").tobytes()
    values = np.ascontiguousarray(grid.values.ravel(order="F")).astype("<c16").tobytes()
    grads = np.ascontiguousarray(
        grid.gradients.transpose(2, 1, 0, 3).reshape(m, 3)).astype("<c16").tobytes()
    Path(path).write_bytes(header + mesh_hash + params + geo + flags + values + grads)


def load_field(path, mesh: TriMesh | None = None) -> AffinityGrid:
    """Read a field file; if a mesh is supplied its content hash must match."""
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != FIELD_MAGIC:
        raise FieldFormatError(f"{path}: not a field file")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != FIELD_VERSION:
        raise FieldFormatError(f"{path}: unsupported format version {version}")
    off = 8
    mesh_hash = raw[off:off + 32]
    off += 32
    sigma, lam1, lam2, eps = struct.unpack_from("<4d", raw, off)
    off += 32
    ox, oy, oz, spacing, nx, ny, nz = struct.unpack_from("<3dd3I", raw, off)
    off += 44
    m = nx * ny * nz
    nbytes_flags = (m + 7) // 8
    flags_flat = np.unpackbits(np.frombuffer(raw, np.uint8, nbytes_flags, off),
                               count=m, bitorder="little").astype(bool)
    off += nbytes_flags
    values_flat = np.frombuffer(raw, "<c16", m, off).astype(np.complex128)
    off += 16 * m
    grads_flat = np.frombuffer(raw, "<c16", 3 * m, off).astype(np.complex128).reshape(m, 3)
    off += 48 * m
    if off != len(raw):
        raise FieldFormatError(f"{path}: trailing or missing data")
    if mesh is not None and mesh.content_hash != mesh_hash:
        raise FieldFormatError(f"{path}: field was built from a different mesh "
                               "(content hash mismatch)")
    params = KernelParams(sigma=sigma, lambda1=lam1, lambda2=lam2, epsilon=eps)
    dims = (int(nx), int(ny), int(nz))
    values = values_flat.reshape(dims, order="F")
    gradients = np.ascontiguousarray(
        grads_flat.reshape((nz, ny, nx, 3)).transpose(2, 1, 0, 3))
    flags = flags_flat.reshape(dims, order="F")
    return AffinityGrid(origin=np.array([ox, oy, oz]), spacing=spacing, dims=dims,
                        values=values, gradients=gradients, flags=flags,
                        params=params, source_mesh_id=mesh_hash.hex())
