import numpy as np
import pytest

from asmfield.geometry import AxisAngle, RigidTransform, exp_rotation, rotation_log
from asmfield.session import (CouplingParams, PacedLoop, ProtocolError, Session,
                              SessionConfig, Trajectory, config_from_wire,
                              decode_message, encode_message,
                              entrance_jitter_trajectory, pose_from_wire,
                              pose_to_wire, run_trace, trace_to_csv,
                              wall_push_trajectory, TRACE_COLUMNS)


@pytest.fixture(scope="module")
def grids(example1_small_grids):
    return example1_small_grids


class TestStep:
    def test_equilibrium_at_fit(self, grids):
        ga, gb = grids
        cfg = SessionConfig(tick_rate=250.0, gamma_sc=0.0)
        session = Session(ga, gb, cfg)
        for _ in range(50):
            session.step()
        assert np.linalg.norm(session.state.sim_pose.translation) < 1e-9

    def test_pure_spring_converges_to_proxy(self, grids):
        # gamma = 0 isolates the virtual coupling
        ga, gb = grids
        cfg = SessionConfig(tick_rate=250.0, gamma_sc=0.0,
                            coupling=CouplingParams(k_t=30.0, c_t=11.0,
                                                    k_r=10.0, c_r=6.0))
        session = Session(ga, gb, cfg)
        target = RigidTransform(
            exp_rotation(AxisAngle(axis=[0, 1, 0], angle=0.3)).rotation,
            np.array([0.4, -0.2, 0.1]))
        session.set_proxy(target)
        for _ in range(3000):
            session.step()
        st = session.state
        assert np.linalg.norm(st.sim_pose.translation - target.translation) < 1e-4
        err = rotation_log(target.rotation @ st.sim_pose.rotation.T)
        assert np.linalg.norm(err) < 1e-3

    def test_snap_back_from_extraction(self, example1_grids32):
        # weak spring holding the proxy slightly out of the hole: the field
        # pulls the peg back toward the fit pose
        ga, gb = example1_grids32
        cfg = SessionConfig(tick_rate=250.0, gamma_sc=1.0,
                            coupling=CouplingParams(k_t=0.35, c_t=4.0,
                                                    k_r=0.5, c_r=1.0))
        session = Session(ga, gb, cfg)
        proxy = RigidTransform.from_translation([0, 0, 0.4])
        session.set_proxy(proxy)
        session.state.sim_pose = proxy
        for _ in range(2500):
            session.step()
        z = session.state.sim_pose.translation[2]
        assert abs(z) < 0.1 * 0.4

    def test_energy_relaxation_monotone(self, grids):
        # no proxy spring, damping on: quasi-static descent of the energy
        ga, gb = grids
        cfg = SessionConfig(tick_rate=500.0, gamma_sc=1.0,
                            coupling=CouplingParams(k_t=0.0, c_t=30.0,
                                                    k_r=0.0, c_r=30.0))
        session = Session(ga, gb, cfg)
        start = RigidTransform.from_translation([0.15, 0.0, 0.3])
        session.state.sim_pose = start
        session.state.proxy_pose = start
        energies = []
        for _ in range(800):
            session.step()
            energies.append(session.state.last_wrench.energy)
        diffs = np.diff(np.array(energies))
        tol = 1e-4 * abs(energies[0])
        assert np.all(diffs <= tol)

    def test_wall_push_stops_short(self, grids):
        ga, gb = grids
        cfg = SessionConfig(tick_rate=250.0, gamma_sc=1.0,
                            coupling=CouplingParams(k_t=2.0, c_t=5.0))
        session = Session(ga, gb, cfg)
        session.set_proxy(RigidTransform.from_translation([0.8, 0, 0]))
        for _ in range(3000):
            session.step()
        x = session.state.sim_pose.translation[0]
        # the proxy wants 0.8 radii of penetration; the field resists
        assert x < 0.55
        assert session.state.last_wrench.force[0] < 0


class TestTrajectory:
    def test_interpolation(self):
        traj = Trajectory(np.array([[0, 0, 0, 0, 0, 0, 0],
                                    [2, 1, 0, 0, 0, 0, 0]], dtype=float))
        pose = traj.pose_at(1.0)
        assert pose.translation[0] == pytest.approx(0.5)

    def test_rotation_interpolation(self):
        traj = Trajectory(np.array([[0, 0, 0, 0, 0, 0, 0],
                                    [1, 0, 0, 0, 0, 0, np.pi / 2]], dtype=float))
        pose = traj.pose_at(0.5)
        vec = rotation_log(pose.rotation)
        assert np.allclose(vec, [0, 0, np.pi / 4], atol=1e-12)

    def test_csv_round_trip(self):
        traj = wall_push_trajectory([1, 0, 0], 0.5, n_pushes=2)
        back = Trajectory.from_csv(traj.to_csv())
        assert np.array_equal(back.rows, traj.rows)

    def test_times_must_be_sorted(self):
        with pytest.raises(ValueError, match="non-decreasing"):
            Trajectory(np.array([[1, 0, 0, 0, 0, 0, 0],
                                 [0, 0, 0, 0, 0, 0, 0]], dtype=float))


class TestRunTrace:
    def test_empty_trajectory(self, grids, tmp_path):
        ga, gb = grids
        rows = run_trace(ga, gb, Trajectory(np.zeros((0, 7))), SessionConfig())
        assert rows.shape == (0, len(TRACE_COLUMNS))
        path = tmp_path / "empty.csv"
        trace_to_csv(rows, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1 and lines[0].startswith("tick,")

    def test_deterministic(self, grids):
        ga, gb = grids
        traj = entrance_jitter_trajectory(1.0, 0.8, seed=3, jitter_s=0.4,
                                          settle_s=0.4)
        cfg = SessionConfig(tick_rate=100.0)
        r1 = run_trace(ga, gb, traj, cfg)
        r2 = run_trace(ga, gb, traj, cfg)
        assert np.array_equal(r1, r2)

    def test_tick_count_and_columns(self, grids):
        ga, gb = grids
        traj = Trajectory(np.array([[0, 0, 0, 0.2, 0, 0, 0],
                                    [1, 0, 0, 0.2, 0, 0, 0]], dtype=float))
        cfg = SessionConfig(tick_rate=50.0)
        rows = run_trace(ga, gb, traj, cfg)
        assert rows.shape == (51, len(TRACE_COLUMNS))
        assert rows[0, 0] == 1  # tick index after the first step
        fm = np.sqrt(rows[:, 3] ** 2 + rows[:, 4] ** 2 + rows[:, 5] ** 2)
        assert np.allclose(rows[:, 6], fm)


class TestWireProtocol:
    def test_pose_round_trip(self):
        pose = RigidTransform(
            exp_rotation(AxisAngle(axis=[0, 0, 1], angle=0.4)).rotation,
            np.array([1.0, 2.0, 3.0]))
        back = pose_from_wire(pose_to_wire(pose))
        assert np.allclose(back.rotation, pose.rotation)
        assert np.allclose(back.translation, pose.translation)

    def test_message_round_trip(self):
        msg = {"type": "proxy_update", "tick": 5,
               "pose": pose_to_wire(RigidTransform.identity())}
        assert decode_message(encode_message(msg))["tick"] == 5

    def test_malformed_json(self):
        with pytest.raises(ProtocolError):
            decode_message("{nope")

    def test_unknown_type(self):
        with pytest.raises(ProtocolError, match="unknown"):
            decode_message('{"type": "teleport"}')

    def test_proxy_update_requires_pose(self):
        with pytest.raises(ProtocolError):
            decode_message('{"type": "proxy_update", "tick": 1}')

    def test_config_from_wire(self):
        msg = {"type": "session_config", "tick_rate": 100.0, "gamma": 2.0,
               "lockstep": True, "coupling": {"k_t": 9.0}}
        cfg = config_from_wire(msg)
        assert cfg.tick_rate == 100.0
        assert cfg.gamma_sc == 2.0
        assert cfg.lockstep
        assert cfg.coupling.k_t == 9.0
        assert cfg.coupling.c_t == CouplingParams().c_t

    def test_config_rejects_bad_values(self):
        with pytest.raises(ProtocolError):
            config_from_wire({"type": "session_config", "tick_rate": -5})


class TestPacedLoop:
    def test_runs_at_rate_with_fake_clock(self, grids):
        ga, gb = grids
        cfg = SessionConfig(tick_rate=100.0, gamma_sc=0.0)
        session = Session(ga, gb, cfg)
        t = {"now": 0.0}

        def clock():
            return t["now"]

        def sleep(dt):
            t["now"] += dt

        frames = []
        loop = PacedLoop(session, frame_sink=frames.append, clock=clock,
                         sleep=sleep)

        def stop():
            return t["now"] >= 1.0

        loop.run(should_stop=stop)
        # ~100 frames in one simulated second, none skipped (instant steps)
        assert 95 <= loop.produced_frames <= 105
        assert loop.skipped_frames == 0
        assert frames[-1]["type"] == "state_frame"

    def test_overrun_skips_frames(self, grids):
        ga, gb = grids
        cfg = SessionConfig(tick_rate=100.0, gamma_sc=0.0)
        session = Session(ga, gb, cfg)
        t = {"now": 0.0}
        real_step = session.step

        def slow_step():
            t["now"] += 0.025  # 2.5 ticks worth of work
            return real_step()

        session.step = slow_step
        loop = PacedLoop(session, clock=lambda: t["now"],
                         sleep=lambda dt: t.__setitem__("now", t["now"] + dt))
        loop.run(should_stop=lambda: t["now"] >= 1.0)
        assert loop.skipped_frames > 0
        # freshest-pose semantics: ticks advance past the skipped frames
        assert session.state.tick_index >= loop.produced_frames + loop.skipped_frames

    def test_latest_wins_mailbox(self):
        from asmfield.server import _Mailbox

        box = _Mailbox()
        assert box.take() is None
        box.put((1, "old"))
        box.put((2, "new"))
        assert box.take() == (2, "new")  # older update was dropped
        assert box.take() is None        # consumed once

    def test_loop_applies_mailbox_updates(self, grids):
        ga, gb = grids
        cfg = SessionConfig(tick_rate=100.0, gamma_sc=0.0,
                            coupling=CouplingParams(k_t=50.0, c_t=14.0))
        session = Session(ga, gb, cfg)
        sent = {"done": False}

        def source():
            if not sent["done"]:
                sent["done"] = True
                return (1, RigidTransform.from_translation([0.9, 0, 0]))
            return None

        loop = PacedLoop(session, proxy_source=source)
        t = {"now": 0.0}
        loop.clock = lambda: t["now"]
        loop.sleep = lambda dt: t.__setitem__("now", t["now"] + dt)
        loop.run(should_stop=lambda: t["now"] >= 0.05)
        assert session.state.proxy_pose.translation[0] == pytest.approx(0.9)
