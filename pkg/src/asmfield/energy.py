"""Pairwise shape-complementarity score, geometric energy, and guidance wrenches.

The score of a relative pose T (part 2 observed from part 1's body frame) is
the volume cross-correlation of the two precomputed fields,

    f = sum over lattice nodes of rho1(p) * rho2(T^-1 p) * dV,

evaluated on the nodes of the finer of the two grids.  The iterated grid
contributes exact stored values; the other grid is sampled trilinearly and
returns exact zeros away from its box, so the lattice never needs explicit
clipping and the sum depends on the relative pose only.

Energy is E = -gamma * Re{f}; its negative gradient over translations and
over rotations about the part-1 frame origin gives the guidance force and
torque.  The analytic gradient differentiates the discrete sum directly,
substituting the precomputed field gradient for the interpolant derivative;
a central-difference backend over the same score function serves as the
independent cross-check and fallback.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _fastpath
from .affinity import AffinityGrid
from .geometry import AxisAngle, RigidTransform, compose, exp_rotation

__all__ = [
    "PosePair",
    "ScoreResult",
    "Wrench",
    "StiffnessMatrix",
    "score",
    "score_rel",
    "energy",
    "analytic_gradient",
    "fdm_gradient",
    "wrench",
    "wrench_rel",
    "stiffness",
    "sweep_translation",
    "sweep_rotation",
    "SweepTable",
]

_AXIS_INDEX = {"x1": 0, "x2": 1, "x3": 2}
_BASIS = np.eye(3)


@dataclass(frozen=True)
class PosePair:
    """World poses of both parts; the score depends only on t1^-1 o t2."""

    t1: RigidTransform
    t2: RigidTransform

    def relative(self) -> RigidTransform:
        return compose(self.t1.inverse(), self.t2)

    @staticmethod
    def from_relative(t: RigidTransform) -> "PosePair":
        return PosePair(RigidTransform.identity(), t)


@dataclass(frozen=True)
class ScoreResult:
    score: complex
    samples_used: int
    cell_volume: float


@dataclass(frozen=True)
class Wrench:
    """Energy with guidance force and torque, in part 1's frame.

    Torques are about the part-1 frame origin.  The complex score is kept
    for diagnostics; only its real part feeds the energy.
    """

    energy: float
    force: np.ndarray
    torque: np.ndarray
    gamma_sc: float
    score: complex = 0.0
    samples_used: int = 0


@dataclass(frozen=True)
class StiffnessMatrix:
    translational: np.ndarray
    rotational: np.ndarray
    at_minimum: bool
    gradient_norm: float


def _pick_iteration_grid(grid_a: AffinityGrid, grid_b: AffinityGrid) -> str:
    ratio = grid_a.spacing / grid_b.spacing
    if not (0.5 <= ratio <= 2.0):
        warnings.warn(f"grid spacings differ by more than 2x (ratio {ratio:.3g}); "
                      "score accuracy is dominated by the coarser grid", stacklevel=3)
    if abs(grid_a.spacing - grid_b.spacing) > 1e-12 * max(grid_a.spacing, grid_b.spacing):
        return "A" if grid_a.spacing < grid_b.spacing else "B"
    if grid_a.n_nodes != grid_b.n_nodes:
        return "A" if grid_a.n_nodes < grid_b.n_nodes else "B"
    return "B"


def _axial(a: np.ndarray) -> np.ndarray:
    """Vector v with v_i = eps_ijk a_jk (contraction of the outer moment)."""
    return np.array([a[1, 2] - a[2, 1], a[2, 0] - a[0, 2], a[0, 1] - a[1, 0]])


def _evaluate(grid_a: AffinityGrid, grid_b: AffinityGrid, rel: RigidTransform,
              want_grad: bool):
    """Score and optionally its SE(3) gradient at relative pose rel.

    Returns (f, samples_used, dV, df_dt (3,) complex, df_dr (3,) complex).
    The analytic gradient is the exact differential of the sampled sum;
    C1 B-spline sampling keeps that sum differentiable in the pose (the
    stored field gradient would miss the interpolated jump across the part
    surface, so it is not used here).
    """
    which = _pick_iteration_grid(grid_a, grid_b)
    if which == "B":
        own, other = grid_b, grid_a
        mapping = rel                         # B-frame node -> part-1 frame
    else:
        own, other = grid_a, grid_b
        mapping = rel.inverse()               # part-1 frame node -> B frame

    nodes = own.node_points
    own_vals = own.smooth_values_flat
    dv = own.spacing ** 3

    if _fastpath.HAVE_NUMBA:
        fv, _, _, _ = other._padded
        px, py, pz = (d + 4 for d in other.dims)
        blo, bhi = other.bounds
        f_acc, s1, mom, inside = _fastpath.spline_moments(
            nodes, own_vals, mapping.rotation, mapping.translation, fv,
            px, py, pz, other.origin, other.spacing, blo, bhi, want_grad)
        f = complex(f_acc * dv)
        if not want_grad:
            return f, inside, dv, None, None
        r = mapping.rotation
        if which == "B":
            df_dt = dv * s1
            df_dr = dv * (_axial(r @ mom) + np.cross(mapping.translation, s1))
        else:
            df_dt = -dv * (r.T @ s1)
            df_dr = -dv * _axial(mom @ r)
        return f, inside, dv, df_dt, df_dr

    q = mapping.apply(nodes)
    vals, deriv, inside = other.sample_smooth(q, want_deriv=want_grad)
    f = complex((own_vals @ vals) * dv)
    samples = int(np.count_nonzero(inside))
    if not want_grad:
        return f, samples, dv, None, None

    if which == "B":
        w = deriv                             # already in part-1 frame axes
        lever = q
        sign = +1.0
    else:
        w = deriv @ rel.rotation.T            # rotate each row into frame 1
        lever = nodes
        sign = -1.0
    base = (own_vals * (dv * sign))[:, None]
    df_dt = (base * w).sum(axis=0)
    df_dr = (base * np.cross(lever, w)).sum(axis=0)
    return f, samples, dv, df_dt, df_dr


def score_rel(grid_a: AffinityGrid, grid_b: AffinityGrid,
              rel: RigidTransform) -> ScoreResult:
    f, samples, dv, _, _ = _evaluate(grid_a, grid_b, rel, want_grad=False)
    return ScoreResult(score=f, samples_used=samples, cell_volume=dv)


def score(grid_a: AffinityGrid, grid_b: AffinityGrid, pose: PosePair) -> ScoreResult:
    return score_rel(grid_a, grid_b, pose.relative())


def energy(result: ScoreResult, gamma_sc: float) -> float:
    """E = -gamma * Re{f}: proper fit is an energy well, collision a barrier."""
    if not gamma_sc > 0:
        raise ValueError("gamma_sc must be positive")
    return -gamma_sc * result.score.real


def analytic_gradient(grid_a: AffinityGrid, grid_b: AffinityGrid, pose: PosePair):
    """(df/dt, df/dR): complex 3-vectors of the score gradient.

    Translations are along part-1 frame axes; rotations are about axes through
    the part-1 frame origin (the torque reference point).
    """
    _, _, _, df_dt, df_dr = _evaluate(grid_a, grid_b, pose.relative(), want_grad=True)
    return df_dt, df_dr


def _rot_perturb(vec: np.ndarray) -> RigidTransform:
    angle = float(np.linalg.norm(vec))
    if angle == 0.0:
        return RigidTransform.identity()
    return exp_rotation(AxisAngle(axis=vec / angle, angle=angle))


def fdm_gradient(grid_a: AffinityGrid, grid_b: AffinityGrid, pose: PosePair,
                 h_t: float, h_r: float):
    """Central-difference score gradient; 12 extra score evaluations.

    Perturbations compose on the left of the relative pose: translations along
    the part-1 frame axes, rotations about the part-1 frame origin, matching
    the analytic backend's conventions.
    """
    if not (h_t > 0 and h_r > 0):
        raise ValueError("FDM steps must be positive")
    rel = pose.relative()

    def s_of(t: RigidTransform) -> complex:
        f, _, _, _, _ = _evaluate(grid_a, grid_b, t, want_grad=False)
        return f

    df_dt = np.zeros(3, dtype=np.complex128)
    df_dr = np.zeros(3, dtype=np.complex128)
    for k in range(3):
        step = RigidTransform.from_translation(h_t * _BASIS[k])
        f_plus = s_of(compose(step, rel))
        f_minus = s_of(compose(step.inverse(), rel))
        df_dt[k] = (f_plus - f_minus) / (2.0 * h_t)
    for k in range(3):
        rot = _rot_perturb(h_r * _BASIS[k])
        f_plus = s_of(compose(rot, rel))
        f_minus = s_of(compose(rot.inverse(), rel))
        df_dr[k] = (f_plus - f_minus) / (2.0 * h_r)
    return df_dt, df_dr


def wrench_rel(grid_a: AffinityGrid, grid_b: AffinityGrid, rel: RigidTransform,
               gamma_sc: float, backend: str = "analytic",
               h_t: float | None = None, h_r: float = 0.01) -> Wrench:
    """Energy, force and torque at a relative pose in one fused evaluation."""
    if not gamma_sc > 0:
        raise ValueError("gamma_sc must be positive")
    if backend == "analytic":
        f, samples, _, df_dt, df_dr = _evaluate(grid_a, grid_b, rel, want_grad=True)
    elif backend == "fdm":
        f, samples, _, _, _ = _evaluate(grid_a, grid_b, rel, want_grad=False)
        pose = PosePair.from_relative(rel)
        if h_t is None:
            h_t = 0.5 * min(grid_a.spacing, grid_b.spacing)
        df_dt, df_dr = fdm_gradient(grid_a, grid_b, pose, h_t, h_r)
    else:
        raise ValueError(f"unknown gradient backend {backend!r}")
    return Wrench(energy=-gamma_sc * f.real,
                  force=gamma_sc * df_dt.real,
                  torque=gamma_sc * df_dr.real,
                  gamma_sc=gamma_sc,
                  score=f,
                  samples_used=samples)


def wrench(grid_a: AffinityGrid, grid_b: AffinityGrid, pose: PosePair,
           gamma_sc: float, backend: str = "analytic") -> Wrench:
    return wrench_rel(grid_a, grid_b, pose.relative(), gamma_sc, backend=backend)


def stiffness(grid_a: AffinityGrid, grid_b: AffinityGrid, pose: PosePair,
              gamma_sc: float, h: float) -> StiffnessMatrix:
    """Second-order central-difference Hessians of the energy about a minimum.

    The translational block differentiates along part-1 frame axes, the
    rotational block over the rotation-vector chart about the part-1 origin.
    Both are symmetrized.  If the pose is not actually a stationary point the
    result carries at_minimum=False.
    """
    rel = pose.relative()

    def e_of(t_vec, r_vec) -> float:
        t = rel
        if np.any(r_vec):
            t = compose(_rot_perturb(np.asarray(r_vec, dtype=float)), t)
        if np.any(t_vec):
            t = compose(RigidTransform.from_translation(t_vec), t)
        f, _, _, _, _ = _evaluate(grid_a, grid_b, t, want_grad=False)
        return -gamma_sc * f.real

    w0 = wrench_rel(grid_a, grid_b, rel, gamma_sc)
    grad_norm = float(np.linalg.norm(np.concatenate([w0.force, w0.torque])))
    e0 = e_of(np.zeros(3), np.zeros(3))
    # stationary when the residual force would move the energy by a small
    # fraction of its own magnitude over one step h
    at_min = grad_norm * h <= 0.05 * max(abs(e0), 1e-300)
    if not at_min:
        warnings.warn("stiffness evaluated away from a local minimum "
                      f"(|gradient| = {grad_norm:.3g})", stacklevel=2)

    def hessian(block: str) -> np.ndarray:
        hess = np.zeros((3, 3))
        for j in range(3):
            vj = h * _BASIS[j]
            for k in range(j, 3):
                vk = h * _BASIS[k]
                if j == k:
                    if block == "t":
                        e_p, e_m = e_of(vj, np.zeros(3)), e_of(-vj, np.zeros(3))
                    else:
                        e_p, e_m = e_of(np.zeros(3), vj), e_of(np.zeros(3), -vj)
                    hess[j, j] = (e_p - 2.0 * e0 + e_m) / h ** 2
                else:
                    if block == "t":
                        e_pp = e_of(vj + vk, np.zeros(3))
                        e_pm = e_of(vj - vk, np.zeros(3))
                        e_mp = e_of(-vj + vk, np.zeros(3))
                        e_mm = e_of(-vj - vk, np.zeros(3))
                    else:
                        e_pp = e_of(np.zeros(3), vj + vk)
                        e_pm = e_of(np.zeros(3), vj - vk)
                        e_mp = e_of(np.zeros(3), -vj + vk)
                        e_mm = e_of(np.zeros(3), -vj - vk)
                    hess[j, k] = hess[k, j] = (e_pp - e_pm - e_mp + e_mm) / (4.0 * h ** 2)
        return 0.5 * (hess + hess.T)

    return StiffnessMatrix(translational=hessian("t"), rotational=hessian("r"),
                           at_minimum=at_min, gradient_norm=grad_norm)


# ---------------------------------------------------------------------------
# sweep profiling

@dataclass
class SweepTable:
    header: list[str]
    rows: np.ndarray  # (n, len(header)) float

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.header) + "\n")
            for row in self.rows:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def sweep_translation(grid_a: AffinityGrid, grid_b: AffinityGrid,
                      base_pose: PosePair, axes, ranges, steps: int,
                      gamma_sc: float = 1.0) -> SweepTable:
    """Score and energy over a uniaxial or biaxial lattice of translations.

    axes: 1 or 2 of "x1"/"x2"/"x3"; ranges: half-width per axis; offsets run
    from -range to +range in `steps` samples (first axis outermost).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    axes = [axes] if isinstance(axes, str) else list(axes)
    ranges = [ranges] if np.isscalar(ranges) else list(ranges)
    if len(axes) not in (1, 2) or len(ranges) != len(axes):
        raise ValueError("need 1-2 axes with one range each")
    idx = [_AXIS_INDEX[a] for a in axes]
    rel = base_pose.relative()
    grids = [np.linspace(-r, r, steps) if steps > 1 else np.array([0.0]) for r in ranges]
    rows = []
    for combo in np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(axes)):
        delta = np.zeros(3)
        for a, off in zip(idx, combo):
            delta[a] = off
        t = compose(RigidTransform.from_translation(delta), rel)
        res = score_rel(grid_a, grid_b, t)
        rows.append([*combo, res.score.real, res.score.imag,
                     -gamma_sc * res.score.real])
    header = [f"offset_{a}" for a in axes] + ["re_score", "im_score", "energy"]
    return SweepTable(header=header, rows=np.asarray(rows, dtype=float))


def sweep_rotation(grid_a: AffinityGrid, grid_b: AffinityGrid,
                   base_pose: PosePair, axis: str, angle_range: float,
                   steps: int, gamma_sc: float = 1.0) -> SweepTable:
    """Score and energy versus rotation about one part-1 frame axis."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    k = _AXIS_INDEX[axis]
    rel = base_pose.relative()
    angles = np.linspace(-angle_range, angle_range, steps) if steps > 1 else np.array([0.0])
    rows = []
    for theta in angles:
        t = compose(_rot_perturb(theta * _BASIS[k]), rel)
        res = score_rel(grid_a, grid_b, t)
        rows.append([theta, res.score.real, res.score.imag,
                     -gamma_sc * res.score.real])
    header = [f"offset_rot_{axis}", "re_score", "im_score", "energy"]
    return SweepTable(header=header, rows=np.asarray(rows, dtype=float))
