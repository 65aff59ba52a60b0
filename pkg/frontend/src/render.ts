/**
 * three.js scene: the fixed block, the moving peg, force/torque arrows and
 * an energy bar.  The rendered peg pose always mirrors the latest accepted
 * state frame; arrows are drawn at the peg origin with a display gain.
 */

import * as THREE from "three";
import { StateFrame, Vec3 } from "./protocol";

export function parseObj(text: string): THREE.BufferGeometry {
  const verts: number[] = [];
  const tris: number[] = [];
  for (const raw of text.split("\n")) {
    const line = raw.trim();
    if (line.startsWith("v ")) {
      const [, x, y, z] = line.split(/\s+/);
      verts.push(Number(x), Number(y), Number(z));
    } else if (line.startsWith("f ")) {
      const idx = line
        .split(/\s+/)
        .slice(1)
        .map((tok) => Number(tok.split("/")[0]) - 1);
      if (idx.length !== 3) throw new Error("triangles only");
      tris.push(idx[0], idx[1], idx[2]);
    }
  }
  const geo = new THREE.BufferGeometry();
  geo.setAttribute("position", new THREE.Float32BufferAttribute(verts, 3));
  geo.setIndex(tris);
  geo.computeVertexNormals();
  return geo;
}

export interface SceneHandles {
  scene: THREE.Scene;
  camera: THREE.PerspectiveCamera;
  peg: THREE.Mesh;
  block: THREE.Mesh;
  forceArrow: THREE.ArrowHelper;
  torqueArrow: THREE.ArrowHelper;
}

export function buildScene(
  blockObj: string,
  pegObj: string,
  aspect: number,
): SceneHandles {
  const scene = new THREE.Scene();
  scene.background = new THREE.Color(0x10141c);
  scene.add(new THREE.AmbientLight(0xffffff, 0.45));
  const key = new THREE.DirectionalLight(0xffffff, 1.1);
  key.position.set(6, 4, 8);
  scene.add(key);

  const block = new THREE.Mesh(
    parseObj(blockObj),
    new THREE.MeshStandardMaterial({
      color: 0x8091a5,
      transparent: true,
      opacity: 0.55,
    }),
  );
  const peg = new THREE.Mesh(
    parseObj(pegObj),
    new THREE.MeshStandardMaterial({ color: 0xd9843b }),
  );
  scene.add(block);
  scene.add(peg);

  const forceArrow = new THREE.ArrowHelper(
    new THREE.Vector3(1, 0, 0),
    new THREE.Vector3(),
    1,
    0x4caf50,
  );
  const torqueArrow = new THREE.ArrowHelper(
    new THREE.Vector3(0, 0, 1),
    new THREE.Vector3(),
    1,
    0x7e9bff,
  );
  forceArrow.visible = false;
  torqueArrow.visible = false;
  scene.add(forceArrow);
  scene.add(torqueArrow);

  const camera = new THREE.PerspectiveCamera(45, aspect, 0.05, 200);
  camera.position.set(7, -9, 6);
  camera.up.set(0, 0, 1);
  camera.lookAt(0, 0, -0.5);

  return { scene, camera, peg, block, forceArrow, torqueArrow };
}

const ARROW_GAIN = 0.12; // display length per unit force
const ARROW_FLOOR = 1e-6;

export function renderFrame(handles: SceneHandles, frame: StateFrame): void {
  const { peg, forceArrow, torqueArrow } = handles;
  const m = frame.sim_pose.rotation;
  const t = frame.sim_pose.translation;
  const mat = new THREE.Matrix4().set(
    m[0][0], m[0][1], m[0][2], t[0],
    m[1][0], m[1][1], m[1][2], t[1],
    m[2][0], m[2][1], m[2][2], t[2],
    0, 0, 0, 1,
  );
  peg.matrixAutoUpdate = false;
  peg.matrix.copy(mat);

  updateArrow(forceArrow, frame.force, t);
  updateArrow(torqueArrow, frame.torque, t);
}

function updateArrow(arrow: THREE.ArrowHelper, vec: Vec3, at: Vec3): void {
  const len = Math.hypot(vec[0], vec[1], vec[2]);
  if (len < ARROW_FLOOR) {
    arrow.visible = false;
    return;
  }
  arrow.visible = true;
  arrow.position.set(at[0], at[1], at[2]);
  arrow.setDirection(
    new THREE.Vector3(vec[0] / len, vec[1] / len, vec[2] / len),
  );
  arrow.setLength(Math.max(0.2, len * ARROW_GAIN));
}

/** Energy readout: negative (attractive) fills green, positive fills red. */
export function energyBarStyle(
  energy: number,
  fullScale: number,
): { widthPct: number; color: string } {
  const frac = Math.min(1, Math.abs(energy) / fullScale);
  return {
    widthPct: Math.round(frac * 100),
    color: energy <= 0 ? "#4caf50" : "#e05252",
  };
}

export function cameraBasis(camera: THREE.PerspectiveCamera): {
  right: Vec3;
  up: Vec3;
  forward: Vec3;
} {
  const fwd = new THREE.Vector3();
  camera.getWorldDirection(fwd);
  const up = camera.up.clone();
  const right = new THREE.Vector3().crossVectors(fwd, up).normalize();
  const trueUp = new THREE.Vector3().crossVectors(right, fwd).normalize();
  return {
    right: [right.x, right.y, right.z],
    up: [trueUp.x, trueUp.y, trueUp.z],
    forward: [fwd.x, fwd.y, fwd.z],
  };
}
