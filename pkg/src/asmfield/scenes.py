"""Procedural peg-in-hole test pairs and mesh file glue.

Three cross-sections are supported: circular, rectangular (square), and a
combined shape (circle with one squared-off quadrant, so part of the
boundary is rotation-indifferent while the sharp corner is not).  The block
carries a blind pocket whose cross-section is the peg's inflated by the
clearance; at the identity relative pose the peg sits fully seated and
coaxial.

Both meshes are closed, consistently oriented triangulations built from a
shared list of boundary directions that includes every profile corner, so
flat features are represented exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import (TriMesh, read_obj, read_stl, validate_mesh, write_obj,
                       write_stl)

__all__ = [
    "PegHoleSpec",
    "generate_pair",
    "load_mesh",
    "save_mesh",
    "parse_scene_config",
    "MeshValidationError",
    "SceneConfigError",
]

CROSS_SECTIONS = ("circular", "rectangular", "combined")


class MeshValidationError(ValueError):
    pass


class SceneConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PegHoleSpec:
    """Dimensions of one peg/block pair.

    peg_radius is the cylinder radius, the square half-extent, or both for
    the combined section.  hole dimensions are the peg's plus the clearance.
    resolution is the target boundary edge length.
    """

    cross_section: str = "circular"
    peg_radius: float = 1.0
    peg_length: float = 4.0
    block: tuple[float, float, float] = (4.0, 4.0, 4.0)
    hole_depth: float = 3.0
    clearance: float = 0.0
    resolution: float = 0.2

    def __post_init__(self):
        if self.cross_section not in CROSS_SECTIONS:
            raise SceneConfigError(f"unknown cross_section {self.cross_section!r}")
        if min(self.peg_radius, self.peg_length, self.hole_depth,
               self.resolution) <= 0 or min(self.block) <= 0:
            raise SceneConfigError("dimensions and resolution must be positive")
        if self.clearance < 0:
            raise SceneConfigError("clearance must be >= 0")
        if self.hole_depth > self.block[2]:
            raise SceneConfigError("hole_depth exceeds block height")
        r_hole = self.peg_radius + self.clearance
        reach = r_hole * (math.sqrt(2.0) if self.cross_section != "circular" else 1.0)
        if reach >= min(self.block[0], self.block[1]) / 2.0:
            raise SceneConfigError("hole does not fit inside the block")

    @property
    def n_segments(self) -> int:
        n = int(math.ceil(2.0 * math.pi * self.peg_radius / self.resolution))
        return max(16, ((n + 7) // 8) * 8)


# --- cross-section profiles -------------------------------------------------

def _profile_point(kind: str, size: float, theta: np.ndarray) -> np.ndarray:
    """2D boundary point of the cross-section in direction theta."""
    c, s = np.cos(theta), np.sin(theta)
    if kind == "circular":
        return np.stack([size * c, size * s], axis=-1)
    if kind == "rectangular":
        t = size / np.maximum(np.abs(c), np.abs(s))
        return np.stack([t * c, t * s], axis=-1)
    # combined: square in the first quadrant, circle elsewhere
    th = np.mod(theta, 2.0 * math.pi)
    square = (th >= 0.0) & (th <= math.pi / 2.0)
    t = np.where(square, size / np.maximum(np.abs(c), np.abs(s)), size)
    return np.stack([t * c, t * s], axis=-1)


def _profile_corners(kind: str) -> list[float]:
    q = math.pi / 4.0
    if kind == "circular":
        return []
    if kind == "rectangular":
        return [q, 3 * q, 5 * q, 7 * q]
    return [0.0, q, math.pi / 2.0]  # combined: junctions plus the sharp corner


def _theta_list(n: int, extra: list[float]) -> np.ndarray:
    base = np.arange(n) * (2.0 * math.pi / n)
    thetas = np.concatenate([base, np.mod(np.asarray(extra, dtype=float), 2.0 * math.pi)])
    thetas = np.sort(thetas)
    keep = np.ones(len(thetas), dtype=bool)
    keep[1:] = np.diff(thetas) > 1e-12
    if thetas.size and (2.0 * math.pi - thetas[-1]) <= 1e-12:
        keep[-1] = False
    return thetas[keep]


# --- mesh assembly helpers ----------------------------------------------------

class _Builder:
    def __init__(self):
        self.vertices: list[np.ndarray] = []
        self.faces: list[tuple[int, int, int]] = []

    def add_ring(self, xy: np.ndarray, z: float) -> np.ndarray:
        start = len(self.vertices)
        for p in xy:
            self.vertices.append(np.array([p[0], p[1], z]))
        return np.arange(start, start + len(xy))

    def add_point(self, p) -> int:
        self.vertices.append(np.asarray(p, dtype=float))
        return len(self.vertices) - 1

    def tri(self, a: int, b: int, c: int) -> None:
        self.faces.append((int(a), int(b), int(c)))

    def wall(self, lower: np.ndarray, upper: np.ndarray, inward: bool = False) -> None:
        """Quad belt between two rings (lower below upper), outward normals by
        default; inward flips the winding for cavity walls."""
        k = len(lower)
        for j in range(k):
            a, b = lower[j], lower[(j + 1) % k]
            c, d = upper[(j + 1) % k], upper[j]
            if inward:
                self.tri(b, a, d)
                self.tri(b, d, c)
            else:
                self.tri(a, b, c)
                self.tri(a, c, d)

    def fan(self, apex: int, ring: np.ndarray, up: bool) -> None:
        """Disk fan; up=True gives a +z facing cap."""
        k = len(ring)
        for j in range(k):
            a, b = ring[j], ring[(j + 1) % k]
            if up:
                self.tri(apex, a, b)
            else:
                self.tri(apex, b, a)

    def annulus(self, inner: np.ndarray, outer: np.ndarray) -> None:
        """+z facing ring strip between two concentric same-length rings."""
        k = len(inner)
        for j in range(k):
            s0, s1 = outer[j], outer[(j + 1) % k]
            h0, h1 = inner[j], inner[(j + 1) % k]
            self.tri(s0, s1, h1)
            self.tri(s0, h1, h0)

    def mesh(self) -> TriMesh:
        return TriMesh(np.array(self.vertices), np.array(self.faces, dtype=np.int64))


def _z_levels(z0: float, z1: float, resolution: float) -> np.ndarray:
    n = max(1, int(math.ceil(abs(z1 - z0) / resolution)))
    return np.linspace(z0, z1, n + 1)


def _build_peg(spec: PegHoleSpec, thetas: np.ndarray) -> TriMesh:
    xy = _profile_point(spec.cross_section, spec.peg_radius, thetas)
    z_bot = -spec.hole_depth + spec.clearance
    z_top = z_bot + spec.peg_length
    b = _Builder()
    rings = [b.add_ring(xy, z) for z in _z_levels(z_bot, z_top, spec.resolution)]
    for lower, upper in zip(rings[:-1], rings[1:]):
        b.wall(lower, upper)
    bot = b.add_point([0.0, 0.0, z_bot])
    top = b.add_point([0.0, 0.0, z_top])
    b.fan(bot, rings[0], up=False)
    b.fan(top, rings[-1], up=True)
    return b.mesh()


def _build_block(spec: PegHoleSpec, thetas: np.ndarray) -> TriMesh:
    bx, by, bz = spec.block
    hole_xy = _profile_point(spec.cross_section, spec.peg_radius + spec.clearance, thetas)
    c, s = np.cos(thetas), np.sin(thetas)
    t = np.minimum((bx / 2.0) / np.maximum(np.abs(c), 1e-300),
                   (by / 2.0) / np.maximum(np.abs(s), 1e-300))
    outer_xy = np.stack([t * c, t * s], axis=-1)

    b = _Builder()
    # outer shell
    outer_rings = [b.add_ring(outer_xy, z) for z in _z_levels(-bz, 0.0, spec.resolution)]
    for lower, upper in zip(outer_rings[:-1], outer_rings[1:]):
        b.wall(lower, upper)
    bottom_apex = b.add_point([0.0, 0.0, -bz])
    b.fan(bottom_apex, outer_rings[0], up=False)
    # pocket
    hole_rings = [b.add_ring(hole_xy, z)
                  for z in _z_levels(-spec.hole_depth, 0.0, spec.resolution)]
    for lower, upper in zip(hole_rings[:-1], hole_rings[1:]):
        b.wall(lower, upper, inward=True)
    pocket_apex = b.add_point([0.0, 0.0, -spec.hole_depth])
    b.fan(pocket_apex, hole_rings[0], up=True)
    # top face joins the pocket mouth to the outer rim
    b.annulus(hole_rings[-1], outer_rings[-1])
    return b.mesh()


def generate_pair(spec: PegHoleSpec) -> tuple[TriMesh, TriMesh]:
    """Build (peg, block).  Fully seated and coaxial at the identity pose.

    Raises SceneConfigError when the boundary sampling is too coarse to
    represent a positive clearance (polygonization sagitta above clearance/2).
    """
    n = spec.n_segments
    if spec.clearance > 0 and spec.cross_section != "rectangular":
        sagitta = (spec.peg_radius + spec.clearance) * (1.0 - math.cos(math.pi / n))
        if sagitta > spec.clearance / 2.0:
            raise SceneConfigError(
                "resolution too coarse for clearance: boundary sampling error "
                f"{sagitta:.3g} exceeds clearance/2 = {spec.clearance / 2.0:.3g}")

    corners = _profile_corners(spec.cross_section)
    bx, by, _ = spec.block
    block_corners = [math.atan2(sy * by, sx * bx)
                     for sx in (1, -1) for sy in (1, -1)]
    peg_thetas = _theta_list(n, corners)
    block_thetas = _theta_list(n, corners + block_corners)

    peg = _build_peg(spec, peg_thetas)
    block = _build_block(spec, block_thetas)
    for name, mesh in (("peg", peg), ("block", block)):
        report = validate_mesh(mesh)
        if not report.ok:
            raise MeshValidationError(f"generated {name} failed validation: "
                                      + report.summary())
    return peg, block


# --- mesh file IO -------------------------------------------------------------

def save_mesh(mesh: TriMesh, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        write_obj(mesh, path)
    elif path.suffix.lower() == ".stl":
        write_stl(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format {path.suffix!r} (use .obj or .stl)")


def load_mesh(path) -> TriMesh:
    """Read and validate a mesh; rejects anything that is not a closed,
    consistently oriented triangle 2-manifold."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        mesh = read_obj(path)
    elif path.suffix.lower() == ".stl":
        mesh = read_stl(path)
    else:
        raise ValueError(f"unsupported mesh format {path.suffix!r} (use .obj or .stl)")
    report = validate_mesh(mesh)
    if not report.ok:
        raise MeshValidationError(f"{path}: {report.summary()}")
    return mesh


# --- plain-text scene config ----------------------------------------------------

_SCENE_KEYS = {"cross_section", "peg_radius", "peg_length", "block_size",
               "hole_depth", "clearance", "resolution"}


def parse_scene_config(text: str) -> PegHoleSpec:
    """key = value lines; '#' starts a comment; unknown keys are rejected.

    Keys: cross_section, peg_radius, peg_length, block_size (three numbers),
    hole_depth, clearance, resolution.  Omitted keys keep their defaults.
    """
    kwargs = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneConfigError(f"line {ln}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCENE_KEYS:
            raise SceneConfigError(f"line {ln}: unknown key {key!r}")
        try:
            if key == "cross_section":
                kwargs[key] = value
            elif key == "block_size":
                parts = value.split()
                if len(parts) != 3:
                    raise ValueError
                kwargs["block"] = tuple(float(x) for x in parts)
            else:
                kwargs[key] = float(value)
        except ValueError:
            raise SceneConfigError(f"line {ln}: bad value for {key}: {value!r}") from None
    return PegHoleSpec(**kwargs)
