/**
 * Client-side session state: a latest-wins mailbox of server frames read
 * once per animation tick, with stale (older tick) frames discarded so the
 * rendered pose is always monotone in tick.
 */

import { ServerMessage, StateFrame } from "./protocol";

export type InputMode = "translate-plane" | "translate-depth" | "rotate-axis";

export interface ViewState {
  connected: boolean;
  lastError: string | null;
  frame: StateFrame | null;
  mode: InputMode;
  discarded: number;
}

export function initialViewState(): ViewState {
  return {
    connected: false,
    lastError: null,
    frame: null,
    mode: "translate-plane",
    discarded: 0,
  };
}

/** Apply one server message; stale frames are counted and dropped. */
export function applyMessage(state: ViewState, msg: ServerMessage): ViewState {
  if (msg.type === "error") {
    return { ...state, lastError: `${msg.code}: ${msg.text}` };
  }
  if (state.frame && msg.tick <= state.frame.tick) {
    return { ...state, discarded: state.discarded + 1 };
  }
  return { ...state, frame: msg, lastError: null };
}

export function setConnected(state: ViewState, ok: boolean): ViewState {
  return { ...state, connected: ok };
}

export function cycleMode(state: ViewState): ViewState {
  const order: InputMode[] = ["translate-plane", "translate-depth", "rotate-axis"];
  const next = order[(order.indexOf(state.mode) + 1) % order.length];
  return { ...state, mode: next };
}

/** Latest-wins mailbox: network events enqueue, the render loop drains once. */
export class FrameMailbox {
  private item: ServerMessage | null = null;

  put(msg: ServerMessage): void {
    this.item = msg;
  }

  take(): ServerMessage | null {
    const out = this.item;
    this.item = null;
    return out;
  }
}
