"""Triangle mesh representation, validation, and rigid-motion algebra.

All downstream field and energy computations assume meshes that are
watertight, consistently oriented 2-manifolds with non-degenerate faces.
Validation is report-style: callers decide whether to reject.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from hashlib import sha256
from pathlib import Path

import numpy as np

__all__ = [
    "TriMesh",
    "RigidTransform",
    "AxisAngle",
    "ValidationReport",
    "validate_mesh",
    "compose",
    "exp_rotation",
    "rotation_log",
    "read_obj",
    "write_obj",
    "read_stl",
    "write_stl",
]

_ORTHO_TOL = 1e-9
_DEGENERATE_AREA_FACTOR = 1e-12


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite 3-vector: {v!r}")
    return a


@dataclass(frozen=True)
class TriMesh:
    """Oriented triangle boundary representation.

    vertices: (n, 3) float array, faces: (m, 3) int array of vertex indices.
    Per-face unit normals, areas and midpoints are cached on first use.
    Instances are immutable; the backing arrays are marked read-only.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (n, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("faces must be (m, 3)")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @cached_property
    def face_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, f = self.vertices, self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    @cached_property
    def face_cross(self) -> np.ndarray:
        a, b, c = self.face_corners
        return np.cross(b - a, c - a)

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross, axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        n = self.face_cross.copy()
        lens = np.linalg.norm(n, axis=1)
        safe = np.where(lens > 0.0, lens, 1.0)
        return n / safe[:, None]

    @cached_property
    def face_midpoints(self) -> np.ndarray:
        a, b, c = self.face_corners
        return (a + b + c) / 3.0

    @cached_property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def content_hash(self) -> bytes:
        """32-byte digest of the exact vertex/face data, for field-file binding."""
        h = sha256()
        h.update(b"TMSH")
        h.update(np.uint64(self.n_vertices).tobytes())
        h.update(np.uint64(self.n_faces).tobytes())
        h.update(self.vertices.astype("<f8").tobytes())
        h.update(self.faces.astype("<u4").tobytes())
        return h.digest()

    def volume(self) -> float:
        """Enclosed volume by the divergence theorem (valid for closed meshes)."""
        a, b, c = self.face_corners
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def transformed(self, t: "RigidTransform") -> "TriMesh":
        return TriMesh(t.apply(self.vertices), self.faces)


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): proper rotation matrix plus translation.

    apply(p) = R @ p + t; inverse_apply(p) = R.T @ (p - t).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.rotation, dtype=float))
        t = _as_vec3(self.translation)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.all(np.isfinite(r)):
            raise ValueError("rotation must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthogonal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "RigidTransform":
        return RigidTransform(np.eye(3), _as_vec3(t))

    def apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse_apply(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (p - self.translation) @ self.rotation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def orthonormalized(self) -> "RigidTransform":
        """Re-project the rotation onto SO(3); counters drift from long compose chains."""
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] = -u[:, -1]
            r = u @ vt
        return RigidTransform(r, self.translation)


@dataclass(frozen=True)
class AxisAngle:
    """Rotation as unit axis (dual vector of the tangent generator) and angle in radians."""

    axis: np.ndarray
    angle: float

    def __post_init__(self):
        a = _as_vec3(self.axis)
        n = np.linalg.norm(a)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("axis must be unit length within 1e-9")
        if not math.isfinite(self.angle):
            raise ValueError("angle must be finite")
        a.flags.writeable = False
        object.__setattr__(self, "axis", a)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """(a o b).apply(p) == a.apply(b.apply(p))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def exp_rotation(aa: AxisAngle) -> RigidTransform:
    """Rodrigues map from axis-angle to a pure rotation about the origin."""
    u = aa.axis
    k = np.array([[0.0, -u[2], u[1]],
                  [u[2], 0.0, -u[0]],
                  [-u[1], u[0], 0.0]])
    s, c = math.sin(aa.angle), math.cos(aa.angle)
    r = np.eye(3) + s * k + (1.0 - c) * (k @ k)
    return RigidTransform(r, np.zeros(3))


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a rotation matrix; inverse of exp_rotation."""
    r = np.asarray(r, dtype=float)
    cos_t = (np.trace(r) - 1.0) / 2.0
    cos_t = min(1.0, max(-1.0, cos_t))
    theta = math.acos(cos_t)
    if theta < 1e-12:
        return np.zeros(3)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    s = 2.0 * math.sin(theta)
    if abs(s) < 1e-9:
        # near pi: extract axis from the symmetric part
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(m), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = m[:, k] / axis[k]
            axis = axis / np.linalg.norm(axis)
        else:
            axis = np.array([1.0, 0.0, 0.0])
        # pick the sign consistent with the skew part when available
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis * theta
    return w / s * theta


# ---------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    """Per-invariant violation lists; a mesh is accepted iff all are empty."""

    bad_indices: list = field(default_factory=list)
    degenerate_faces: list = field(default_factory=list)
    duplicate_directed_edges: list = field(default_factory=list)
    inconsistent_edges: list = field(default_factory=list)
    boundary_edges: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.bad_indices or self.degenerate_faces
                    or self.duplicate_directed_edges
                    or self.inconsistent_edges or self.boundary_edges)

    def summary(self) -> str:
        if self.ok:
            return "mesh accepted"
        parts = []
        for name in ("bad_indices", "degenerate_faces", "duplicate_directed_edges",
                     "inconsistent_edges", "boundary_edges"):
            items = getattr(self, name)
            if items:
                parts.append(f"{name}: {len(items)}")
        return "mesh rejected (" + ", ".join(parts) + ")"


def validate_mesh(mesh: TriMesh) -> ValidationReport:
    """Check index ranges, face degeneracy, orientation consistency and closedness.

    Orientation rule: every interior edge must appear in exactly two faces with
    opposite direction.  A directed edge whose reverse is missing is a boundary
    edge; one that appears twice in the same direction marks a flipped face.
    The report is cached on the (immutable) mesh.
    """
    cached = getattr(mesh, "_validation_report", None)
    if cached is not None:
        return cached
    report = ValidationReport()
    nv = mesh.n_vertices
    f = mesh.faces

    bad = np.nonzero((f < 0) | (f >= nv))[0]
    if bad.size:
        report.bad_indices = sorted(set(int(i) for i in bad))
        return report  # remaining checks would index out of range; not cached

    area_floor = _DEGENERATE_AREA_FACTOR * mesh.bbox_diagonal ** 2
    degen = np.nonzero(mesh.face_areas <= area_floor)[0]
    report.degenerate_faces = [int(i) for i in degen]

    # tally each undirected edge with forward/backward direction counts
    counts: dict[tuple[int, int], list[int]] = {}
    for fi in range(f.shape[0]):
        i, j, k = map(int, f[fi])
        for a, b in ((i, j), (j, k), (k, i)):
            key, fwd = ((a, b), 0) if a < b else ((b, a), 1)
            counts.setdefault(key, [0, 0])[fwd] += 1

    for key in sorted(counts):
        fwd, bwd = counts[key]
        total = fwd + bwd
        if total == 2 and fwd == 1:
            continue  # one face each way: consistent interior edge
        if total == 1:
            report.boundary_edges.append(key)
        elif total == 2:
            # both faces traverse the edge the same way: one of them is flipped
            report.duplicate_directed_edges.append(key)
            report.inconsistent_edges.append(key)
        else:
            report.inconsistent_edges.append(key)

    object.__setattr__(mesh, "_validation_report", report)
    return report


# ---------------------------------------------------------------------------
# OBJ / binary STL ingestion and writers.
# OBJ keeps full float precision (repr round-trip); STL is float32 by format.

def write_obj(mesh: TriMesh, path) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for f in mesh.faces:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise ValueError(f"{path}:{ln}: vertex needs 3 coordinates")
            verts.append([float(x) for x in rest[:3]])
        elif tag == "f":
            if len(rest) != 3:
                raise ValueError(f"{path}:{ln}: triangles only")
            idx = []
            for tok in rest:
                # tolerate v/vt/vn references; only the vertex index is used
                idx.append(int(tok.split("/")[0]))
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        # other tags (vn, vt, o, g, s, usemtl, ...) are ignored
    if not verts or not faces:
        raise ValueError(f"{path}: no triangle data")
    return TriMesh(np.array(verts, dtype=float), np.array(faces, dtype=np.int64))


def write_stl(mesh: TriMesh, path) -> None:
    m = mesh.n_faces
    header = b"asmfield binary stl".ljust(80, b" ")
    rec = np.zeros(m, dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = mesh.face_normals.astype("<f4")
    a, b, c = mesh.face_corners
    rec["v"][:, 0] = a.astype("<f4")
    rec["v"][:, 1] = b.astype("<f4")
    rec["v"][:, 2] = c.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.uint32(m).tobytes())
        fh.write(rec.tobytes())


def read_stl(path) -> TriMesh:
    """Binary STL reader; duplicate corner coordinates are welded exactly."""
    raw = Path(path).read_bytes()
    if len(raw) < 84:
        raise ValueError(f"{path}: truncated STL")
    m = int(np.frombuffer(raw[80:84], dtype="<u4")[0])
    rec = np.frombuffer(raw[84:], dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")],
                        count=m)
    tri = rec["v"].astype(float)  # (m, 3, 3)
    flat = tri.reshape(-1, 3)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    faces = inverse.reshape(-1, 3).astype(np.int64)
    return TriMesh(uniq, faces)
