// Browser entry point: local webcam preview with the guidance overlay on
// top. Corner detection is pluggable; out of the box this wires a stub
// that replays a recorded session so the UI can be demoed with no
// camera, no detector, and no service.
//
// A live deployment supplies:
//   - a WebSocket-to-TCP bridge address for the guidance service, and
//   - a real corner detector posting Corner[] per frame.

import { GuidanceClient, Transport } from "./client.js";
import { buildOverlayModel } from "./overlay.js";
import { WireMessage, encodeFrame, FrameDecoder } from "./protocol.js";
import { renderOverlay, Canvas2D } from "./renderer.js";
import { parseTranscript, ReplayTransport, recordedFrames } from "./replay.js";

export interface UiConfig {
  endpoint: string | null; // ws:// bridge to the service; null = replay demo
  sessionId: string;
  videoSourceId: string | null;
  transcriptUrl: string; // used when endpoint is null
}

export class WebSocketTransport implements Transport {
  private socket: WebSocket;
  private decoder = new FrameDecoder();
  private handler: ((message: WireMessage) => void) | null = null;

  constructor(endpoint: string) {
    this.socket = new WebSocket(endpoint);
    this.socket.onmessage = (event) => {
      for (const message of this.decoder.feed(String(event.data))) {
        this.handler?.(message);
      }
    };
  }

  onMessage(handler: (message: WireMessage) => void): void {
    this.handler = handler;
  }

  send(message: WireMessage): void {
    this.socket.send(encodeFrame(message));
  }
}

function syncCanvas(canvas: HTMLCanvasElement, video: HTMLVideoElement): void {
  const width = video.clientWidth || video.videoWidth || 1280;
  const height = video.clientHeight || video.videoHeight || 800;
  if (canvas.width !== width || canvas.height !== height) {
    canvas.width = width;
    canvas.height = height;
  }
}

export async function start(config: UiConfig): Promise<void> {
  const video = document.getElementById("video") as HTMLVideoElement | null;
  const canvas = document.getElementById("overlay") as HTMLCanvasElement | null;
  if (!canvas) throw new Error("missing #overlay canvas");
  const ctx = canvas.getContext("2d") as unknown as Canvas2D | null;
  if (!ctx) throw new Error("2d context unavailable");

  if (video && config.videoSourceId !== null && navigator.mediaDevices) {
    video.srcObject = await navigator.mediaDevices.getUserMedia({
      video: config.videoSourceId ? { deviceId: config.videoSourceId } : true,
    });
    await video.play();
  }

  const redraw = (client: GuidanceClient) => {
    if (video) syncCanvas(canvas, video);
    renderOverlay(ctx, buildOverlayModel(client.snapshot), canvas.width, canvas.height);
  };

  if (config.endpoint === null) {
    // Replay demo: recorded transcript drives everything.
    const text = await (await fetch(config.transcriptUrl)).text();
    const transcript = parseTranscript(text);
    const client = new GuidanceClient(new ReplayTransport(transcript), config.sessionId);
    client.onChange(() => redraw(client));
    client.hello();
    const frames = recordedFrames(transcript);
    let i = 0;
    const timer = setInterval(() => {
      if (i >= frames.length || client.snapshot.phase === "complete") {
        clearInterval(timer);
        return;
      }
      client.submitFrame(frames[i]);
      i += 1;
    }, 33);
    return;
  }

  const client = new GuidanceClient(new WebSocketTransport(config.endpoint), config.sessionId);
  client.onChange(() => redraw(client));
  client.hello();
  window.addEventListener("keydown", (event) => {
    if (event.key === "c") {
      client.requestManualCapture(`key-${Date.now()}`);
    }
  });
  // Real deployments replace this stub with an actual detector feed
  // calling client.submitFrame({frameToken, corners}) per frame.
}
