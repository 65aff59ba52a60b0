"""Batch front-end: precompute fields, evaluate poses, sweep, trace, serve.

Exit codes: 0 success, 2 validation error, 3 IO error, 4 config error.
Every scalar flag can be overridden by an ASMFIELD_<NAME> environment
variable (dashes become underscores), with explicit flags taking precedence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .affinity import (KernelParams, build_affinity_grid, default_params,
                       load_field, save_field, FieldFormatError)
from .energy import (PosePair, score_rel, sweep_rotation, sweep_translation,
                     wrench_rel)
from .geometry import AxisAngle, RigidTransform, exp_rotation
from .scenes import (MeshValidationError, SceneConfigError, generate_pair,
                     load_mesh, parse_scene_config)
from .session import (CouplingParams, SessionConfig, Trajectory, run_trace,
                      trace_to_csv)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_CONFIG = 4


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); config errors are 4
        raise ConfigError(message)


def _env_default(name: str, cast, fallback=None):
    raw = os.environ.get("ASMFIELD_" + name.upper().replace("-", "_"))
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad environment override for {name}: {raw!r}") from exc


def _parse_pose(text: str) -> RigidTransform:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 6:
        raise ConfigError("pose needs 6 numbers: tx,ty,tz,rx,ry,rz")
    vals = np.array([float(p) for p in parts])
    rvec = vals[3:]
    angle = float(np.linalg.norm(rvec))
    rot = (exp_rotation(AxisAngle(axis=rvec / angle, angle=angle)).rotation
           if angle > 0 else np.eye(3))
    return RigidTransform(rot, vals[:3])


def _guard_overwrite(path: str, force: bool) -> None:
    if Path(path).exists() and not force:
        raise OSError(f"{path} exists; pass --force to overwrite")


def _load_input_mesh(args):
    if args.mesh and args.scene:
        raise ConfigError("give either --mesh or --scene, not both")
    if args.mesh:
        return load_mesh(args.mesh[0])
    if args.scene:
        spec = parse_scene_config(Path(args.scene).read_text())
        peg, block = generate_pair(spec)
        if args.part not in ("peg", "block"):
            raise ConfigError("--part must be peg or block")
        return peg if args.part == "peg" else block
    raise ConfigError("need --mesh or --scene")


def _load_fields(args):
    fields = args.field or []
    if len(fields) != 2:
        raise ConfigError("need exactly two --field files (part 1 then part 2)")
    grid_a = load_field(fields[0])
    grid_b = load_field(fields[1])
    meshes = args.mesh or []
    for path, grid in zip(meshes, (grid_a, grid_b)):
        load_field_mesh = load_mesh(path)
        if load_field_mesh.content_hash.hex() != grid.source_mesh_id:
            raise FieldFormatError(
                f"{path} does not match the field's source mesh hash")
    return grid_a, grid_b


def cmd_precompute(args) -> int:
    mesh = _load_input_mesh(args)
    sigma = args.sigma if args.sigma is not None else None
    if sigma is None:
        params = default_params(mesh, lambda1=args.lambda1, lambda2=args.lambda2)
        if args.epsilon is not None:
            params = KernelParams(sigma=params.sigma, lambda1=args.lambda1,
                                  lambda2=args.lambda2, epsilon=args.epsilon)
    else:
        params = KernelParams(sigma=sigma, lambda1=args.lambda1,
                              lambda2=args.lambda2, epsilon=args.epsilon)
    if args.spacing is None:
        raise ConfigError("--spacing is required")
    _guard_overwrite(args.out, args.force)
    t0 = time.perf_counter()
    grid = build_affinity_grid(mesh, params, args.spacing, threads=args.threads)
    dt = time.perf_counter() - t0
    save_field(grid, args.out)
    nx, ny, nz = grid.dims
    print(f"wrote {args.out}: {nx}x{ny}x{nz} = {grid.n_nodes} nodes "
          f"in {dt:.2f} s (sigma={grid.params.sigma:.6g}, "
          f"spacing={grid.spacing:.6g})")
    return EXIT_OK


def cmd_eval(args) -> int:
    grid_a, grid_b = _load_fields(args)
    rel = _parse_pose(args.pose)
    w = wrench_rel(grid_a, grid_b, rel, args.gamma)
    record = {
        "energy": w.energy,
        "force": [float(x) for x in w.force],
        "torque": [float(x) for x in w.torque],
        "re_score": w.score.real,
        "im_score": w.score.imag,
    }
    text = json.dumps(record)
    print(text)
    if args.out:
        _guard_overwrite(args.out, args.force)
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    grid_a, grid_b = _load_fields(args)
    base = PosePair.from_relative(_parse_pose(args.pose))
    axes = args.axis or []
    ranges = args.range or []
    if not axes:
        raise ConfigError("need at least one --axis")
    if len(ranges) != len(axes):
        raise ConfigError("need one --range per --axis")
    rotational = [a.startswith("r") for a in axes]
    if any(rotational):
        if len(axes) != 1:
            raise ConfigError("rotation sweeps take exactly one axis")
        table = sweep_rotation(grid_a, grid_b, base, axes[0][1:], ranges[0],
                               args.steps, gamma_sc=args.gamma)
    else:
        table = sweep_translation(grid_a, grid_b, base, axes, ranges,
                                  args.steps, gamma_sc=args.gamma)
    if args.out:
        _guard_overwrite(args.out, args.force)
        table.write_csv(args.out)
        print(f"wrote {args.out}: {table.rows.shape[0]} rows")
    else:
        print(",".join(table.header))
        for row in table.rows:
            print(",".join(format(v, ".17g") for v in row))
    return EXIT_OK


def cmd_trace(args) -> int:
    grid_a, grid_b = _load_fields(args)
    trajectory = Trajectory.from_csv(Path(args.trajectory).read_text())
    config = SessionConfig(
        tick_rate=args.tick_rate, gamma_sc=args.gamma,
        coupling=CouplingParams(k_t=args.k_t, k_r=args.k_r,
                                c_t=args.c_t, c_r=args.c_r),
        mass=args.mass, inertia=args.inertia,
        lock_rotation=args.lock_rotation)
    rows = run_trace(grid_a, grid_b, trajectory, config)
    if args.out:
        _guard_overwrite(args.out, args.force)
        trace_to_csv(rows, args.out)
        print(f"wrote {args.out}: {rows.shape[0]} ticks")
    else:
        trace_to_csv(rows, sys.stdout)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import ServerBundle, serve
    from .geometry import write_obj

    grid_a, grid_b = _load_fields(args)
    mesh_texts = [None, None]
    for i, path in enumerate((args.mesh or [])[:2]):
        mesh_texts[i] = Path(path).read_text() if path.endswith(".obj") else None
    bundle = ServerBundle(
        grid_a=grid_a, grid_b=grid_b,
        mesh_a_obj=mesh_texts[0], mesh_b_obj=mesh_texts[1],
        base_config=SessionConfig(tick_rate=args.tick_rate, gamma_sc=args.gamma),
        ui_dir=args.ui_dir if args.ui_dir and Path(args.ui_dir).is_dir() else None)
    print(f"serving on ws://127.0.0.1:{args.port}/session "
          f"(tick rate {args.tick_rate} Hz)")
    serve(bundle, port=args.port)
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="asmfield",
                description="skeletal density fields for assembly guidance")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fields=False):
        sp.add_argument("--out", default=_env_default("out", str))
        sp.add_argument("--force", action="store_true",
                        default=bool(_env_default("force", int, 0)))
        sp.add_argument("--threads", type=int,
                        default=_env_default("threads", int, 1))
        sp.add_argument("--seed", type=int, default=_env_default("seed", int, 0))
        if fields:
            sp.add_argument("--field", action="append")
            sp.add_argument("--mesh", action="append")
            sp.add_argument("--gamma", type=float,
                            default=_env_default("gamma", float, 1.0))

    sp = sub.add_parser("precompute", help="build and write a field file")
    sp.add_argument("--mesh", action="append")
    sp.add_argument("--scene", default=None)
    sp.add_argument("--part", default="peg")
    sp.add_argument("--sigma", type=float, default=_env_default("sigma", float))
    sp.add_argument("--lambda1", type=float,
                    default=_env_default("lambda1", float, 1.0))
    sp.add_argument("--lambda2", type=float,
                    default=_env_default("lambda2", float, 3.0))
    sp.add_argument("--epsilon", type=float, default=_env_default("epsilon", float))
    sp.add_argument("--spacing", type=float, default=_env_default("spacing", float))
    common(sp)
    sp.set_defaults(func=cmd_precompute)

    sp = sub.add_parser("eval", help="wrench at one relative pose")
    sp.add_argument("--pose", default="0,0,0,0,0,0")
    common(sp, fields=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="score table over translations or a rotation")
    sp.add_argument("--pose", default="0,0,0,0,0,0")
    sp.add_argument("--axis", action="append",
                    help="x1|x2|x3 translation, rx1|rx2|rx3 rotation")
    sp.add_argument("--range", action="append", type=float)
    sp.add_argument("--steps", type=int, default=_env_default("steps", int, 21))
    common(sp, fields=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("trace", help="run a scripted proxy trajectory")
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--tick-rate", type=float,
                    default=_env_default("tick-rate", float, 250.0))
    sp.add_argument("--k-t", type=float, default=4.0)
    sp.add_argument("--k-r", type=float, default=1.0)
    sp.add_argument("--c-t", type=float, default=4.0)
    sp.add_argument("--c-r", type=float, default=1.0)
    sp.add_argument("--mass", type=float, default=1.0)
    sp.add_argument("--inertia", type=float, default=1.0)
    sp.add_argument("--lock-rotation", action="store_true",
                    help="hold orientation fixed (3-translational-DOF mode)")
    common(sp, fields=True)
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("serve", help="run the interactive session server")
    sp.add_argument("--port", type=int, default=_env_default("port", int, 8787))
    sp.add_argument("--tick-rate", type=float,
                    default=_env_default("tick-rate", float, 250.0))
    sp.add_argument("--ui-dir", default=None)
    common(sp, fields=True)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshValidationError, SceneConfigError, FieldFormatError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
