/**
 * Browser entry point: fetch meshes, connect the session, and run the
 * render loop.  Dragging steers the proxy pose; the simulated peg follows
 * the streamed state frames.
 */

import * as THREE from "three";
import { applyDrag, applyScroll, defaultGains, Throttle } from "./input";
import { clonePose, identityPose, WirePose } from "./protocol";
import { buildScene, cameraBasis, energyBarStyle, renderFrame } from "./render";
import {
  applyMessage,
  cycleMode,
  FrameMailbox,
  initialViewState,
  setConnected,
} from "./viewState";
import { SessionClient } from "./net";

async function start(): Promise<void> {
  const host = window.location.host;
  const [blockObj, pegObj] = await Promise.all([
    fetch("/meshes/a.obj").then((r) => r.text()),
    fetch("/meshes/b.obj").then((r) => r.text()),
  ]);

  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
  renderer.setSize(window.innerWidth, window.innerHeight);
  const handles = buildScene(
    blockObj,
    pegObj,
    window.innerWidth / window.innerHeight,
  );

  const hud = document.getElementById("hud")!;
  const bar = document.getElementById("energy-fill")!;

  let view = initialViewState();
  let proxy: WirePose = identityPose();
  const mailbox = new FrameMailbox();
  const throttle = new Throttle(1000 / 120);

  const client = new SessionClient(
    (url) => new WebSocket(url) as unknown as import("./net").SocketLike,
    { tick_rate: 250, lockstep: false },
  );
  client.onFrame = (msg) => mailbox.put(msg);
  client.onStatus = (ok) => {
    view = setConnected(view, ok);
  };
  client.connect(`ws://${host}/session`);

  let dragging = false;
  canvas.addEventListener("pointerdown", () => (dragging = true));
  window.addEventListener("pointerup", () => (dragging = false));
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging || !view.connected) return;
    proxy = applyDrag(
      proxy,
      view.mode,
      cameraBasis(handles.camera),
      ev.movementX,
      ev.movementY,
      [0, 0, 1],
      defaultGains,
    );
    if (throttle.ready(performance.now())) client.sendProxy(clonePose(proxy));
  });
  canvas.addEventListener("wheel", (ev) => {
    if (!view.connected) return;
    proxy = applyScroll(
      proxy,
      cameraBasis(handles.camera),
      -Math.sign(ev.deltaY),
      defaultGains,
    );
    client.sendProxy(clonePose(proxy));
  });
  window.addEventListener("keydown", (ev) => {
    if (ev.key === "m") view = cycleMode(view);
  });

  const fullScale = 50.0;
  function animate(): void {
    const msg = mailbox.take();
    if (msg) view = applyMessage(view, msg);
    if (view.frame) {
      renderFrame(handles, view.frame);
      const style = energyBarStyle(view.frame.energy, fullScale);
      bar.style.width = `${style.widthPct}%`;
      bar.style.background = style.color;
      hud.textContent =
        `mode ${view.mode} | tick ${view.frame.tick}` +
        ` | E ${view.frame.energy.toFixed(2)}` +
        ` | servo ${view.frame.servo_rate_estimate.toFixed(0)} Hz` +
        (view.connected ? "" : " | DISCONNECTED");
    } else if (!view.connected) {
      hud.textContent = "connecting...";
    }
    renderer.render(handles.scene, handles.camera);
    requestAnimationFrame(animate);
  }
  animate();
}

start().catch((err) => {
  const hud = document.getElementById("hud");
  if (hud) hud.textContent = `failed to start: ${err}`;
});
