// Line channels: the client speaks newline-delimited JSON over any duplex
// byte stream. Browsers attach through a TCP-to-WebSocket bridge; headless
// clients and tests use a raw TCP socket.

export interface LineChannel {
  send(line: string): void;
  onLine(handler: (line: string) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

/** Splits a byte/text stream into newline-terminated frames. */
export class LineSplitter {
  private buffer = "";
  constructor(private emit: (line: string) => void) {}

  push(chunk: string): void {
    this.buffer += chunk;
    let idx: number;
    while ((idx = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, idx);
      this.buffer = this.buffer.slice(idx + 1);
      if (line.trim().length > 0) this.emit(line);
    }
  }
}

/** Browser transport over a WebSocket bridge that relays raw lines. */
export class WebSocketLineChannel implements LineChannel {
  private lineHandler: (line: string) => void = () => {};
  private closeHandler: () => void = () => {};
  private splitter = new LineSplitter((l) => this.lineHandler(l));

  constructor(private ws: WebSocket) {
    ws.onmessage = (ev) => this.splitter.push(String(ev.data));
    ws.onclose = () => this.closeHandler();
  }

  send(line: string): void {
    this.ws.send(line);
  }

  onLine(handler: (line: string) => void): void {
    this.lineHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.ws.close();
  }
}

/** Node transport over a raw TCP socket (headless clients, tests). */
export async function connectTcp(host: string, port: number): Promise<LineChannel> {
  const net = await import("node:net");
  const socket: import("node:net").Socket = await new Promise((resolve, reject) => {
    const s = net.createConnection({ host, port }, () => resolve(s));
    s.once("error", reject);
  });
  socket.setEncoding("utf-8");
  let lineHandler: (line: string) => void = () => {};
  let closeHandler: () => void = () => {};
  const splitter = new LineSplitter((l) => lineHandler(l));
  socket.on("data", (chunk: string) => splitter.push(chunk));
  socket.on("close", () => closeHandler());
  socket.on("error", () => closeHandler());
  return {
    send: (line: string) => void socket.write(line),
    onLine: (h) => {
      lineHandler = h;
    },
    onClose: (h) => {
      closeHandler = h;
    },
    close: () => socket.end(),
  };
}
