/**
 * Pointer-to-proxy-pose mapping.
 *
 * translate-plane: dragging moves the proxy in the camera-parallel plane
 * (right = camera right, up = camera up).  translate-depth: the scroll
 * wheel moves the proxy along the camera view direction.  rotate-axis:
 * horizontal drag spins the proxy about one chosen axis.  Updates are
 * throttled to the session tick rate by the caller.
 */

import {
  axisAngleMatrix,
  clonePose,
  matMul,
  Vec3,
  WirePose,
} from "./protocol";
import { InputMode } from "./viewState";

export interface CameraBasis {
  right: Vec3;
  up: Vec3;
  forward: Vec3; // into the screen, toward the scene
}

export interface DragGains {
  translatePerPixel: number;
  depthPerScrollStep: number;
  radiansPerPixel: number;
}

export const defaultGains: DragGains = {
  translatePerPixel: 0.01,
  depthPerScrollStep: 0.05,
  radiansPerPixel: 0.01,
};

function addScaled(base: Vec3, dir: Vec3, s: number): Vec3 {
  return [base[0] + s * dir[0], base[1] + s * dir[1], base[2] + s * dir[2]];
}

/** Drag by (dx, dy) pixels; dy is screen-down positive. */
export function applyDrag(
  proxy: WirePose,
  mode: InputMode,
  camera: CameraBasis,
  dx: number,
  dy: number,
  rotationAxis: Vec3,
  gains: DragGains = defaultGains,
): WirePose {
  const out = clonePose(proxy);
  if (mode === "translate-plane") {
    out.translation = addScaled(
      out.translation,
      camera.right,
      dx * gains.translatePerPixel,
    );
    out.translation = addScaled(
      out.translation,
      camera.up,
      -dy * gains.translatePerPixel,
    );
  } else if (mode === "rotate-axis") {
    const spin = axisAngleMatrix(rotationAxis, dx * gains.radiansPerPixel);
    out.rotation = matMul(spin, out.rotation);
  }
  return out;
}

/** Scroll by a wheel step count; positive steps move toward the scene. */
export function applyScroll(
  proxy: WirePose,
  camera: CameraBasis,
  steps: number,
  gains: DragGains = defaultGains,
): WirePose {
  const out = clonePose(proxy);
  out.translation = addScaled(
    out.translation,
    camera.forward,
    steps * gains.depthPerScrollStep,
  );
  return out;
}

/** Drops calls closer together than the given interval (tick pacing). */
export class Throttle {
  private last = -Infinity;

  constructor(private intervalMs: number) {}

  ready(nowMs: number): boolean {
    if (nowMs - this.last >= this.intervalMs) {
      this.last = nowMs;
      return true;
    }
    return false;
  }
}
