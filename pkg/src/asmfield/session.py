"""Quasi-static interactive loop: a user-driven proxy pose is coupled to the
simulated peg with a virtual spring/damper, and the geometric wrench from the
field overlap guides every tick.

One Session owns the math; the paced runner adds wall-clock scheduling with
freshest-pose semantics (overrun ticks are skipped, never queued).  Scripted
trace runs drive the same step function tick by tick in simulated time, so a
lockstep network client reproduces trace output bit for bit.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .affinity import AffinityGrid
from .energy import Wrench, wrench_rel
from .geometry import (AxisAngle, RigidTransform, compose, exp_rotation,
                       rotation_log)

__all__ = [
    "CouplingParams",
    "SessionConfig",
    "SessionState",
    "Session",
    "Trajectory",
    "run_trace",
    "TRACE_COLUMNS",
    "trace_to_csv",
    "wall_push_trajectory",
    "entrance_jitter_trajectory",
    "PacedLoop",
    "ProtocolError",
    "encode_message",
    "decode_message",
    "pose_to_wire",
    "pose_from_wire",
]

_REORTHONORMALIZE_EVERY = 256


@dataclass(frozen=True)
class CouplingParams:
    """Virtual spring/damper between proxy and simulated pose."""

    k_t: float = 4.0
    k_r: float = 1.0
    c_t: float = 4.0
    c_r: float = 1.0

    def __post_init__(self):
        if min(self.k_t, self.k_r, self.c_t, self.c_r) < 0:
            raise ValueError("spring/damper constants must be >= 0")


@dataclass(frozen=True)
class SessionConfig:
    tick_rate: float = 250.0
    gamma_sc: float = 1.0          # 0 disables the geometric wrench entirely
    coupling: CouplingParams = field(default_factory=CouplingParams)
    mass: float = 1.0
    inertia: float = 1.0
    lockstep: bool = False
    lock_rotation: bool = False    # 3-translational-DOF mode: orientation held
    initial_pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not self.tick_rate > 0:
            raise ValueError("tick_rate must be positive")
        if self.gamma_sc < 0:
            raise ValueError("gamma_sc must be >= 0")
        if min(self.mass, self.inertia) <= 0:
            raise ValueError("mass and inertia must be positive")


@dataclass
class SessionState:
    sim_pose: RigidTransform
    proxy_pose: RigidTransform
    velocity: np.ndarray
    omega: np.ndarray
    tick_index: int = 0
    last_wrench: Wrench | None = None
    last_error: str | None = None


class Session:
    """Tick-level simulation of the coupled peg against a fixed block.

    Part 1 (the block, grid A) is pinned at the identity world pose, so the
    simulated pose of part 2 is the relative pose the energy model consumes.
    """

    def __init__(self, grid_a: AffinityGrid, grid_b: AffinityGrid,
                 config: SessionConfig):
        self.grid_a = grid_a
        self.grid_b = grid_b
        self.config = config
        self.state = SessionState(
            sim_pose=config.initial_pose,
            proxy_pose=config.initial_pose,
            velocity=np.zeros(3),
            omega=np.zeros(3),
        )

    @property
    def dt(self) -> float:
        return 1.0 / self.config.tick_rate

    def set_proxy(self, pose: RigidTransform) -> None:
        self.state.proxy_pose = pose

    def geometric_wrench(self, pose: RigidTransform) -> Wrench:
        cfg = self.config
        if cfg.gamma_sc == 0.0:
            return Wrench(energy=0.0, force=np.zeros(3), torque=np.zeros(3),
                          gamma_sc=0.0)
        return wrench_rel(self.grid_a, self.grid_b, pose, cfg.gamma_sc)

    def step(self) -> SessionState:
        """Semi-implicit first-order update of the simulated pose.

        Total wrench = geometric wrench + proxy spring/damper; the geometric
        torque (about the part-1 origin) is transported to the peg's body
        origin before integrating the rotation there.
        """
        st = self.state
        cfg = self.config
        dt = self.dt
        try:
            w = self.geometric_wrench(st.sim_pose)
            st.last_error = None
        except Exception as exc:  # evaluation failure: flag frame, hold pose
            st.last_error = f"wrench evaluation failed: {exc}"
            st.tick_index += 1
            return st
        st.last_wrench = w

        t_sim = st.sim_pose.translation
        force = w.force + (cfg.coupling.k_t * (st.proxy_pose.translation - t_sim)
                           - cfg.coupling.c_t * st.velocity)
        st.velocity = st.velocity + dt * force / cfg.mass
        new_t = t_sim + dt * st.velocity

        if cfg.lock_rotation:
            new_r = st.sim_pose.rotation
        else:
            torque_at_peg = w.torque - np.cross(t_sim, w.force)
            rot_err = rotation_log(st.proxy_pose.rotation @ st.sim_pose.rotation.T)
            torque = (torque_at_peg + cfg.coupling.k_r * rot_err
                      - cfg.coupling.c_r * st.omega)
            st.omega = st.omega + dt * torque / cfg.inertia
            angle = float(np.linalg.norm(dt * st.omega))
            if angle > 0.0:
                spin = exp_rotation(AxisAngle(axis=dt * st.omega / angle, angle=angle))
                new_r = spin.rotation @ st.sim_pose.rotation
            else:
                new_r = st.sim_pose.rotation
        pose = RigidTransform(new_r, new_t)
        if (st.tick_index + 1) % _REORTHONORMALIZE_EVERY == 0:
            pose = pose.orthonormalized()
        st.sim_pose = pose
        st.tick_index += 1
        return st

    def frame(self, servo_rate_estimate: float | None = None) -> dict:
        st = self.state
        w = st.last_wrench
        msg = {
            "type": "state_frame",
            "tick": st.tick_index,
            "sim_pose": pose_to_wire(st.sim_pose),
            "energy": w.energy if w else 0.0,
            "force": list(map(float, w.force)) if w else [0.0, 0.0, 0.0],
            "torque": list(map(float, w.torque)) if w else [0.0, 0.0, 0.0],
            "servo_rate_estimate": (self.config.tick_rate
                                    if servo_rate_estimate is None
                                    else servo_rate_estimate),
        }
        if st.last_error:
            msg["flagged"] = st.last_error
        return msg


# ---------------------------------------------------------------------------
# scripted trajectories and trace runs

@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear proxy path: rows of (time_s, tx, ty, tz, rx, ry, rz)
    with the rotation given as an axis-angle vector (radians)."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.size == 0:
            rows = rows.reshape(0, 7)
        if rows.shape[1] != 7:
            raise ValueError("trajectory rows need 7 columns")
        if rows.shape[0] and np.any(np.diff(rows[:, 0]) < 0):
            raise ValueError("trajectory times must be non-decreasing")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def duration(self) -> float:
        return float(self.rows[-1, 0]) if self.rows.shape[0] else 0.0

    def pose_at(self, t: float) -> RigidTransform:
        rows = self.rows
        ts = rows[:, 0]
        vec = np.empty(6)
        for k in range(6):
            vec[k] = np.interp(t, ts, rows[:, 1 + k])
        angle = float(np.linalg.norm(vec[3:]))
        if angle > 0.0:
            rot = exp_rotation(AxisAngle(axis=vec[3:] / angle, angle=angle)).rotation
        else:
            rot = np.eye(3)
        return RigidTransform(rot, vec[:3])

    @staticmethod
    def from_csv(text: str) -> "Trajectory":
        rows = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                continue  # header line
        return Trajectory(np.asarray(rows, dtype=float).reshape(-1, 7)
                          if rows else np.zeros((0, 7)))

    def to_csv(self) -> str:
        lines = ["time_s,tx,ty,tz,rx,ry,rz"]
        for row in self.rows:
            lines.append(",".join(format(v, ".17g") for v in row))
        return "\n".join(lines) + "\n"


TRACE_COLUMNS = ["tick", "time_s", "energy",
                 "force_x", "force_y", "force_z", "force_mag",
                 "torque_x", "torque_y", "torque_z",
                 "sim_tx", "sim_ty", "sim_tz", "sim_rx", "sim_ry", "sim_rz"]


def run_trace(grid_a: AffinityGrid, grid_b: AffinityGrid, trajectory: Trajectory,
              config: SessionConfig) -> np.ndarray:
    """Drive a session through a scripted proxy path in simulated time.

    Returns one row per tick with the TRACE_COLUMNS layout; rotation reported
    as an axis-angle vector.  Deterministic.
    """
    session = Session(grid_a, grid_b, config)
    if trajectory.rows.shape[0] == 0:
        return np.zeros((0, len(TRACE_COLUMNS)))
    session.state.sim_pose = trajectory.pose_at(0.0)
    session.state.proxy_pose = session.state.sim_pose
    dt = session.dt
    n_ticks = int(math.floor(trajectory.duration / dt)) + 1
    out = np.zeros((n_ticks, len(TRACE_COLUMNS)))
    for k in range(n_ticks):
        t = k * dt
        session.set_proxy(trajectory.pose_at(t))
        st = session.step()
        w = st.last_wrench
        rvec = rotation_log(st.sim_pose.rotation)
        out[k] = [st.tick_index, t, w.energy if w else 0.0,
                  *(w.force if w else np.zeros(3)),
                  float(np.linalg.norm(w.force)) if w else 0.0,
                  *(w.torque if w else np.zeros(3)),
                  *st.sim_pose.translation, *rvec]
    return out


def trace_to_csv(rows: np.ndarray, path_or_file) -> None:
    def write(fh):
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in np.atleast_2d(rows) if rows.size else []:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")

    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "w") as fh:
            write(fh)


def wall_push_trajectory(push_direction, amplitude: float, n_pushes: int = 4,
                         period_s: float = 2.0, push_hold_s: float = 0.5,
                         ramp_s: float = 0.15) -> Trajectory:
    """Repeated pushes from the seated pose into a wall and back.

    The proxy rests at the fit pose, ramps to amplitude * push_direction,
    holds, and returns, once per period.
    """
    d = np.asarray(push_direction, dtype=float)
    d = d / np.linalg.norm(d)
    rows = [[0.0, 0, 0, 0, 0, 0, 0]]
    for k in range(n_pushes):
        t0 = (k + 0.5) * period_s
        peak = amplitude * d
        rows.append([t0, 0, 0, 0, 0, 0, 0])
        rows.append([t0 + ramp_s, *peak, 0, 0, 0])
        rows.append([t0 + ramp_s + push_hold_s, *peak, 0, 0, 0])
        rows.append([t0 + 2 * ramp_s + push_hold_s, 0, 0, 0, 0, 0, 0])
    rows.append([(n_pushes + 0.5) * period_s, 0, 0, 0, 0, 0, 0])
    return Trajectory(np.asarray(rows))


def entrance_jitter_trajectory(peg_radius: float, extraction: float,
                               seed: int = 0, jitter_s: float = 2.0,
                               descend_s: float = 1.5, settle_s: float = 3.0,
                               rest_offset=None) -> Trajectory:
    """Careless hovering around the hole entrance, a guided descent, then a
    slightly-off hold near the fit.

    extraction is the +z pull-out distance at which the peg tip clears the
    mouth; the proxy wanders laterally while hovering just above it, then
    descends into proximity of the fit and parks at rest_offset.  The field
    is expected to finish the alignment against the holding spring (the
    terminal pose should land much closer to the fit than the proxy is).
    """
    rng = np.random.default_rng(seed)
    rows = [[0.0, 0.2 * peg_radius, 0.0, 1.05 * extraction, 0, 0, 0]]
    t = 0.0
    lateral = np.array([0.2 * peg_radius, 0.0])
    while t < jitter_s:
        t += 0.2
        lateral = rng.uniform(-0.25, 0.25, size=2) * peg_radius
        z = extraction * rng.uniform(0.98, 1.1)
        rows.append([t, lateral[0], lateral[1], z, 0, 0, 0])
    if rest_offset is None:
        rest_offset = np.array([0.15 * peg_radius, 0.0, 0.25 * peg_radius])
    rest_offset = np.asarray(rest_offset, dtype=float)
    # guided descent: lateral error shrinks toward the rest offset on the way,
    # slowing near the bottom so momentum does not dig into the pocket floor
    mid = 0.5 * (np.array([lateral[0], lateral[1], extraction])
                 + np.array([rest_offset[0], rest_offset[1], 0.0]))
    rows.append([t + 0.4 * descend_s, mid[0] * 0.5, mid[1] * 0.5, mid[2], 0, 0, 0])
    rows.append([t + 0.8 * descend_s, *0.5 * (mid * [0.25, 0.25, 0]
                                              + np.array([*rest_offset[:2], 0.3 * mid[2]])),
                 0, 0, 0])
    rows.append([t + descend_s, *rest_offset, 0, 0, 0])
    rows.append([t + descend_s + settle_s, *rest_offset, 0, 0, 0])
    return Trajectory(np.asarray(rows))


# ---------------------------------------------------------------------------
# wire protocol: one JSON object per transport message

class ProtocolError(ValueError):
    pass


def pose_to_wire(pose: RigidTransform) -> dict:
    return {"rotation": [[float(x) for x in row] for row in pose.rotation],
            "translation": [float(x) for x in pose.translation]}


def pose_from_wire(obj) -> RigidTransform:
    try:
        return RigidTransform(np.asarray(obj["rotation"], dtype=float),
                              np.asarray(obj["translation"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad pose: {exc}") from exc


def encode_message(msg: dict) -> str:
    return json.dumps(msg, separators=(",", ":"))


def decode_message(text: str) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("message must be an object with a 'type' field")
    kind = msg["type"]
    if kind == "proxy_update":
        if "tick" not in msg or "pose" not in msg:
            raise ProtocolError("proxy_update needs tick and pose")
        pose_from_wire(msg["pose"])
    elif kind == "session_config":
        pass
    elif kind in ("state_frame", "error"):
        pass
    else:
        raise ProtocolError(f"unknown message type {kind!r}")
    return msg


def config_from_wire(msg: dict, base: SessionConfig | None = None) -> SessionConfig:
    base = base or SessionConfig()
    kwargs = {}
    if "tick_rate" in msg:
        kwargs["tick_rate"] = float(msg["tick_rate"])
    if "gamma" in msg:
        kwargs["gamma_sc"] = float(msg["gamma"])
    if "mass" in msg:
        kwargs["mass"] = float(msg["mass"])
    if "inertia" in msg:
        kwargs["inertia"] = float(msg["inertia"])
    if "lockstep" in msg:
        kwargs["lockstep"] = bool(msg["lockstep"])
    if "lock_rotation" in msg:
        kwargs["lock_rotation"] = bool(msg["lock_rotation"])
    if "coupling" in msg:
        c = msg["coupling"]
        kwargs["coupling"] = CouplingParams(
            k_t=float(c.get("k_t", base.coupling.k_t)),
            k_r=float(c.get("k_r", base.coupling.k_r)),
            c_t=float(c.get("c_t", base.coupling.c_t)),
            c_r=float(c.get("c_r", base.coupling.c_r)))
    if "initial_pose" in msg:
        kwargs["initial_pose"] = pose_from_wire(msg["initial_pose"])
    try:
        return replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"bad session config: {exc}") from exc


# ---------------------------------------------------------------------------
# paced real-time loop

class PacedLoop:
    """Fixed-rate tick loop with skip-on-overrun scheduling.

    proxy_source() returns the freshest (tick, pose) or None; frame_sink is
    called with each produced frame dict.  The achieved rate estimate is an
    exponential moving average; overrun ticks advance the schedule without
    producing frames and are counted in skipped_frames.
    """

    def __init__(self, session: Session, proxy_source=None, frame_sink=None,
                 clock=time.perf_counter, sleep=time.sleep):
        self.session = session
        self.proxy_source = proxy_source or (lambda: None)
        self.frame_sink = frame_sink or (lambda frame: None)
        self.clock = clock
        self.sleep = sleep
        self.skipped_frames = 0
        self.produced_frames = 0
        self.rate_estimate = session.config.tick_rate

    def run(self, duration_s: float | None = None, should_stop=None) -> None:
        period = self.session.dt
        alpha = 0.05
        start = self.clock()
        next_deadline = start + period
        last_tick_time = start
        while True:
            if should_stop is not None and should_stop():
                return
            if duration_s is not None and self.clock() - start >= duration_s:
                return
            update = self.proxy_source()
            if update is not None:
                _, pose = update
                self.session.set_proxy(pose)
            self.session.step()
            now = self.clock()
            dt_actual = max(now - last_tick_time, 1e-9)
            last_tick_time = now
            self.rate_estimate = ((1.0 - alpha) * self.rate_estimate
                                  + alpha * (1.0 / dt_actual))
            self.frame_sink(self.session.frame(servo_rate_estimate=self.rate_estimate))
            self.produced_frames += 1
            now = self.clock()
            if now > next_deadline + period:
                missed = int((now - next_deadline) / period)
                self.skipped_frames += missed
                self.session.state.tick_index += missed
                next_deadline += (missed + 1) * period
            else:
                if next_deadline > now:
                    self.sleep(next_deadline - now)
                next_deadline += period
