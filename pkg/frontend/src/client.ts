// Guidance client: keeps the latest server state, streams corner
// detections, and never makes geometry decisions of its own. The only
// messages it ever sends are client_hello, corner_update, and
// manual_capture_request.

import {
  CapturePayload,
  CompletePayload,
  Corner,
  ErrorPayload,
  ProgressPayload,
  TargetPayload,
  WireMessage,
  makeMessage,
} from "./protocol.js";

export interface Transport {
  send(message: WireMessage): void;
  onMessage(handler: (message: WireMessage) => void): void;
}

export interface DetectedFrame {
  frameToken: string;
  corners: Corner[] | null; // null: the detector found no board
}

export type Phase = "connecting" | "guiding" | "complete" | "error";

export interface ClientSnapshot {
  phase: Phase;
  sessionId: string;
  target: TargetPayload | null;
  progress: ProgressPayload | null;
  capturedCount: number;
  totalTargets: number | null;
  latestDetections: Corner[] | null;
  noBoard: boolean;
  result: CompletePayload | null;
  lastError: ErrorPayload | null;
}

export class GuidanceClient {
  private seq = 0;
  private lastServerSeq = 0;
  private sessionId: string;
  private phase: Phase = "connecting";
  private target: TargetPayload | null = null;
  private progress: ProgressPayload | null = null;
  private capturedCount = 0;
  private latestDetections: Corner[] | null = null;
  private noBoard = false;
  private result: CompletePayload | null = null;
  private lastError: ErrorPayload | null = null;
  private listeners: ((snapshot: ClientSnapshot) => void)[] = [];

  constructor(private transport: Transport, sessionId = "") {
    this.sessionId = sessionId;
    transport.onMessage((message) => this.handleServer(message));
  }

  onChange(listener: (snapshot: ClientSnapshot) => void): void {
    this.listeners.push(listener);
  }

  get snapshot(): ClientSnapshot {
    return {
      phase: this.phase,
      sessionId: this.sessionId,
      target: this.target,
      progress: this.progress,
      capturedCount: this.capturedCount,
      totalTargets: this.target ? this.target.total_targets : null,
      latestDetections: this.latestDetections,
      noBoard: this.noBoard,
      result: this.result,
      lastError: this.lastError,
    };
  }

  hello(): void {
    this.send("client_hello");
  }

  submitFrame(frame: DetectedFrame): void {
    if (frame.corners === null) {
      // Detector failure is shown locally; nothing crosses the wire.
      this.latestDetections = null;
      this.noBoard = true;
      this.notify();
      return;
    }
    this.latestDetections = frame.corners;
    this.send("corner_update", { frame_token: frame.frameToken, corners: frame.corners });
  }

  requestManualCapture(frameToken: string): void {
    this.send("manual_capture_request", { frame_token: frameToken });
  }

  private send(
    type: "client_hello" | "corner_update" | "manual_capture_request",
    payload: Record<string, unknown> = {},
  ): void {
    this.seq += 1;
    this.transport.send(makeMessage(type, this.sessionId, this.seq, payload));
  }

  private handleServer(message: WireMessage): void {
    if (message.seq <= this.lastServerSeq) {
      return; // stale or duplicated frame; the server never rewinds
    }
    this.lastServerSeq = message.seq;
    if (message.session_id) {
      this.sessionId = message.session_id;
    }
    switch (message.type) {
      case "server_target":
        this.target = message.payload as unknown as TargetPayload;
        this.progress = null;
        this.phase = "guiding";
        break;
      case "server_progress": {
        const progress = message.payload as unknown as ProgressPayload;
        this.progress = progress;
        this.noBoard = progress.distance === null;
        break;
      }
      case "server_capture": {
        const capture = message.payload as unknown as CapturePayload;
        this.capturedCount = capture.target_index + 1;
        this.progress = null;
        break;
      }
      case "server_complete":
        this.result = message.payload as unknown as CompletePayload;
        this.phase = "complete";
        break;
      case "server_error":
        this.lastError = message.payload as unknown as ErrorPayload;
        break;
      default:
        break;
    }
    this.notify();
  }

  private notify(): void {
    const snapshot = this.snapshot;
    for (const listener of this.listeners) {
      listener(snapshot);
    }
  }
}
