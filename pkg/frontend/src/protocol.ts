// Wire protocol shared with the guidance service: JSON messages framed as
// "<byte length>\n<json>\n". Every message carries a session id and a
// per-direction monotonically increasing sequence number.

export const SCHEMA_VERSION = 1;

export type Corner = [number, [number, number]];

export type ClientType = "client_hello" | "corner_update" | "manual_capture_request";
export type ServerType =
  | "server_target"
  | "server_progress"
  | "server_capture"
  | "server_complete"
  | "server_error";

export interface WireMessage {
  schema_version: number;
  type: ClientType | ServerType;
  session_id: string;
  seq: number;
  payload: Record<string, unknown>;
}

export interface TargetPayload {
  target_index: number;
  expected_corners: [number, number][];
  outer_four: [number, number, number, number];
  total_targets: number;
}

export interface ProgressPayload {
  distance: number | null;
  adjustments: [number, number][] | null;
  dwell_count: number;
}

export interface CapturePayload {
  target_index: number;
}

export interface CompletePayload {
  result_ref: string | null;
  mre: number;
  converged: boolean;
}

export interface ErrorPayload {
  code: string;
  detail: string;
}

export function makeMessage(
  type: ClientType,
  sessionId: string,
  seq: number,
  payload: Record<string, unknown> = {},
): WireMessage {
  return { schema_version: SCHEMA_VERSION, type, session_id: sessionId, seq, payload };
}

export function encodeFrame(message: WireMessage): string {
  const body = JSON.stringify(message);
  const length = new TextEncoder().encode(body).length;
  return `${length}\n${body}\n`;
}

// Incremental decoder for a byte/text stream carrying framed messages.
export class FrameDecoder {
  private buffer = "";

  feed(chunk: string): WireMessage[] {
    this.buffer += chunk;
    const out: WireMessage[] = [];
    for (;;) {
      const newline = this.buffer.indexOf("\n");
      if (newline < 0) break;
      const header = this.buffer.slice(0, newline);
      const length = Number(header);
      if (!Number.isInteger(length) || length < 0) {
        throw new Error(`invalid frame length header: ${JSON.stringify(header)}`);
      }
      const bytes = new TextEncoder().encode(this.buffer);
      const headerBytes = new TextEncoder().encode(header).length;
      const total = headerBytes + 1 + length + 1;
      if (bytes.length < total) break;
      const body = new TextDecoder().decode(bytes.slice(headerBytes + 1, headerBytes + 1 + length));
      this.buffer = new TextDecoder().decode(bytes.slice(total));
      out.push(JSON.parse(body) as WireMessage);
    }
    return out;
  }
}
