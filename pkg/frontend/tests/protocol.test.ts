import { describe, expect, it } from "vitest";

import { FrameDecoder, encodeFrame, makeMessage } from "../src/protocol.js";

describe("framing", () => {
  it("round trips a message", () => {
    const msg = makeMessage("client_hello", "abc", 1);
    const decoder = new FrameDecoder();
    expect(decoder.feed(encodeFrame(msg))).toEqual([msg]);
  });

  it("decodes across chunk boundaries", () => {
    const msg = makeMessage("corner_update", "abc", 2, {
      frame_token: "f0",
      corners: [[0, [1.5, 2.5]]],
    });
    const raw = encodeFrame(msg);
    const decoder = new FrameDecoder();
    const collected = [];
    for (let i = 0; i < raw.length; i += 5) {
      collected.push(...decoder.feed(raw.slice(i, i + 5)));
    }
    expect(collected).toEqual([msg]);
  });

  it("decodes several frames from one buffer", () => {
    const msgs = [1, 2, 3].map((seq) => makeMessage("client_hello", "s", seq));
    const raw = msgs.map(encodeFrame).join("");
    expect(new FrameDecoder().feed(raw)).toEqual(msgs);
  });

  it("rejects a bad length header", () => {
    expect(() => new FrameDecoder().feed("oops\n{}\n")).toThrow(/frame length/);
  });
});
