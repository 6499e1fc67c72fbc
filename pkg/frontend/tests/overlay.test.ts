import { describe, expect, it } from "vitest";

import { ClientSnapshot } from "../src/client.js";
import { buildOverlayModel } from "../src/overlay.js";

function snapshot(overrides: Partial<ClientSnapshot> = {}): ClientSnapshot {
  const expected: [number, number][] = [];
  for (let i = 0; i < 54; i++) expected.push([100 + i, 200 + i]);
  return {
    phase: "guiding",
    sessionId: "s",
    target: {
      target_index: 2,
      expected_corners: expected,
      outer_four: [0, 8, 45, 53],
      total_targets: 6,
    },
    progress: {
      distance: 4.2,
      adjustments: [
        [1, 2],
        [3, 4],
        [-1, 0],
        [0, -2],
      ],
      dwell_count: 1,
    },
    capturedCount: 2,
    totalTargets: 6,
    latestDetections: expected.map((uv, i) => [i, [uv[0] + 5, uv[1] - 3]] as [number, [number, number]]),
    noBoard: false,
    result: null,
    lastError: null,
    ...overrides,
  };
}

describe("overlay model", () => {
  it("arrows start at detected corners and carry the protocol deltas verbatim", () => {
    const model = buildOverlayModel(snapshot());
    expect(model.arrows).toHaveLength(4);
    expect(model.arrows[0]).toEqual({ fromX: 105, fromY: 197, dx: 1, dy: 2 });
    expect(model.arrows[1].dx).toBe(3);
    expect(model.arrows[1].dy).toBe(4);
  });

  it("zero adjustments mean zero-length arrows and a matched state", () => {
    const model = buildOverlayModel(
      snapshot({
        progress: {
          distance: 0,
          adjustments: [
            [0, 0],
            [0, 0],
            [0, 0],
            [0, 0],
          ],
          dwell_count: 3,
        },
      }),
    );
    for (const arrow of model.arrows) {
      expect(Math.hypot(arrow.dx, arrow.dy)).toBe(0);
    }
    expect(model.matched).toBe(true);
  });

  it("polygon follows the target's outer corners in draw order", () => {
    const model = buildOverlayModel(snapshot());
    // outer_four order is TL, TR, BL, BR; the polygon walks the perimeter
    expect(model.targetPolygon).toEqual([
      [100, 200],
      [108, 208],
      [153, 253],
      [145, 245],
    ]);
  });

  it("shows a no-board banner when the detector loses the board", () => {
    const model = buildOverlayModel(
      snapshot({ noBoard: true, latestDetections: null, progress: null }),
    );
    expect(model.phaseBanner).toBe("NO BOARD");
    expect(model.arrows).toHaveLength(0);
  });

  it("completion wins the banner", () => {
    const model = buildOverlayModel(
      snapshot({ phase: "complete", result: { result_ref: "r/1", mre: 0.12, converged: true } }),
    );
    expect(model.phaseBanner).toBe("CALIBRATION COMPLETE");
  });

  it("progress label counts captures", () => {
    expect(buildOverlayModel(snapshot()).progressLabel).toBe("2/6");
  });
});
