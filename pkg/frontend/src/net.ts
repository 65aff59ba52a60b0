/**
 * Session client: handshake, frame stream, throttled proxy updates.
 * Construction takes a WebSocket factory so tests can inject a fake.
 */

import {
  decodeServerMessage,
  encodeMessage,
  ProxyUpdate,
  SessionConfigMsg,
  ServerMessage,
  WirePose,
} from "./protocol";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: string }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((ev: unknown) => void) | null;
}

export class SessionClient {
  private sock: SocketLike | null = null;
  private tick = 0;
  onFrame: ((msg: ServerMessage) => void) | null = null;
  onStatus: ((connected: boolean) => void) | null = null;

  constructor(
    private makeSocket: (url: string) => SocketLike,
    private config: Omit<SessionConfigMsg, "type"> = {},
  ) {}

  connect(url: string): void {
    const sock = this.makeSocket(url);
    this.sock = sock;
    sock.onopen = () => {
      sock.send(encodeMessage({ type: "session_config", ...this.config }));
      this.onStatus?.(true);
    };
    sock.onmessage = (ev) => {
      try {
        this.onFrame?.(decodeServerMessage(ev.data));
      } catch {
        // malformed frames are ignored; the server also reports errors
      }
    };
    sock.onclose = () => this.onStatus?.(false);
    sock.onerror = () => this.onStatus?.(false);
  }

  sendProxy(pose: WirePose): void {
    if (!this.sock) return;
    this.tick += 1;
    const msg: ProxyUpdate = { type: "proxy_update", tick: this.tick, pose };
    this.sock.send(encodeMessage(msg));
  }

  close(): void {
    this.sock?.close();
    this.sock = null;
  }
}
