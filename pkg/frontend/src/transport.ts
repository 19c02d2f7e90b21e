/** Message transport behind the session, injectable for tests. */

export type TransportState = "connecting" | "open" | "closed";

export interface Transport {
  readonly state: TransportState;
  send(text: string): void;
  onMessage: ((text: string) => void) | null;
  onStateChange: ((state: TransportState) => void) | null;
  close(): void;
}

/** Browser WebSocket wrapper. Nothing queues while disconnected: a
 * closed transport drops sends and the UI offers a reconnect instead. */
export class WebSocketTransport implements Transport {
  private ws: WebSocket;
  private _state: TransportState = "connecting";
  onMessage: ((text: string) => void) | null = null;
  onStateChange: ((state: TransportState) => void) | null = null;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.onopen = () => this.setState("open");
    this.ws.onclose = () => this.setState("closed");
    this.ws.onerror = () => this.setState("closed");
    this.ws.onmessage = (ev) => {
      if (typeof ev.data === "string") this.onMessage?.(ev.data);
    };
  }

  get state(): TransportState {
    return this._state;
  }

  private setState(s: TransportState): void {
    if (this._state === s) return;
    this._state = s;
    this.onStateChange?.(s);
  }

  send(text: string): void {
    if (this._state !== "open") return;
    this.ws.send(text);
  }

  close(): void {
    this.ws.close();
    this.setState("closed");
  }
}

export function streamUrl(
  base: string,
  session: string,
  dataset?: string,
): string {
  const url = new URL("/stream", base);
  url.protocol = url.protocol === "https:" ? "wss:" : "ws:";
  url.searchParams.set("session", session);
  if (dataset !== undefined) url.searchParams.set("dataset", dataset);
  return url.toString();
}
