// Transcript replay: drive the client from a recorded session instead of
// a live service and camera. The recorded corner streams stand in for
// the detector, and the recorded server messages are delivered after
// each matching client message, so a full session renders headlessly.

import { GuidanceClient, ClientSnapshot, Transport } from "./client.js";
import { Corner, WireMessage } from "./protocol.js";

export interface TranscriptEntry {
  direction: "client" | "server";
  message: WireMessage;
}

export function parseTranscript(text: string): TranscriptEntry[] {
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as TranscriptEntry);
}

export class ReplayTransport implements Transport {
  private handler: ((message: WireMessage) => void) | null = null;
  private cursor = 0;

  constructor(private transcript: TranscriptEntry[]) {}

  onMessage(handler: (message: WireMessage) => void): void {
    this.handler = handler;
  }

  send(message: WireMessage): void {
    // Align with the next recorded client message, then deliver every
    // server message that followed it in the recording.
    let matched = false;
    while (this.cursor < this.transcript.length) {
      const entry = this.transcript[this.cursor];
      this.cursor += 1;
      if (entry.direction === "client") {
        if (entry.message.type !== message.type || entry.message.seq !== message.seq) {
          throw new Error(
            `replay diverged: sent ${message.type}#${message.seq}, ` +
              `recorded ${entry.message.type}#${entry.message.seq}`,
          );
        }
        matched = true;
        break;
      }
    }
    if (!matched) {
      throw new Error(
        `replay diverged: sent ${message.type}#${message.seq} past the end of the recording`,
      );
    }
    while (this.cursor < this.transcript.length) {
      const entry = this.transcript[this.cursor];
      if (entry.direction !== "server") break;
      this.cursor += 1;
      this.handler?.(entry.message);
    }
  }
}

// The recorded corner tracks double as the stub detector.
export function recordedFrames(
  transcript: TranscriptEntry[],
): { frameToken: string; corners: Corner[] }[] {
  return transcript
    .filter((e) => e.direction === "client" && e.message.type === "corner_update")
    .map((e) => ({
      frameToken: String(e.message.payload["frame_token"]),
      corners: e.message.payload["corners"] as Corner[],
    }));
}

export interface ReplayResult {
  client: GuidanceClient;
  snapshots: ClientSnapshot[]; // one per handled message or submitted frame
}

export function replaySession(transcript: TranscriptEntry[]): ReplayResult {
  const transport = new ReplayTransport(transcript);
  const hello = transcript.find(
    (e) => e.direction === "client" && e.message.type === "client_hello",
  );
  const client = new GuidanceClient(transport, hello ? hello.message.session_id : "");
  const snapshots: ClientSnapshot[] = [];
  client.onChange((snapshot) => snapshots.push(snapshot));

  client.hello();
  for (const frame of recordedFrames(transcript)) {
    client.submitFrame(frame);
    if (client.snapshot.phase === "complete") break;
  }
  return { client, snapshots };
}
