// Overlay model: a pure function of the latest server state and the
// latest local detections. Arrow vectors come verbatim from the
// server's adjustment payload; the client recomputes no geometry.

import { ClientSnapshot } from "./client.js";

export interface ArrowSegment {
  fromX: number;
  fromY: number;
  dx: number; // exactly ServerProgress.adjustments[i]
  dy: number;
}

export interface OverlayModel {
  targetPolygon: [number, number][] | null; // expected outer corners, draw order
  detectedOuter: [number, number][] | null;
  arrows: ArrowSegment[];
  distanceLabel: string;
  progressLabel: string;
  phaseBanner: string;
  matched: boolean;
  targetIndex: number | null;
}

// outer_four arrives as (top-left, top-right, bottom-left, bottom-right);
// polygon drawing wants perimeter order.
const POLYGON_ORDER = [0, 1, 3, 2];

export function buildOverlayModel(snapshot: ClientSnapshot): OverlayModel {
  const target = snapshot.target;
  const progress = snapshot.progress;

  let targetPolygon: [number, number][] | null = null;
  if (target) {
    const outer = target.outer_four.map((i) => target.expected_corners[i]);
    targetPolygon = POLYGON_ORDER.map((k) => outer[k]);
  }

  let detectedOuter: [number, number][] | null = null;
  if (target && snapshot.latestDetections) {
    const byIndex = new Map(snapshot.latestDetections.map(([i, uv]) => [i, uv]));
    const pts = target.outer_four.map((i) => byIndex.get(i));
    if (pts.every((p) => p !== undefined)) {
      detectedOuter = pts as [number, number][];
    }
  }

  const arrows: ArrowSegment[] = [];
  if (progress && progress.adjustments && detectedOuter) {
    progress.adjustments.forEach(([dx, dy], i) => {
      arrows.push({ fromX: detectedOuter![i][0], fromY: detectedOuter![i][1], dx, dy });
    });
  }

  let banner = "";
  if (snapshot.phase === "connecting") banner = "CONNECTING";
  else if (snapshot.phase === "complete") banner = "CALIBRATION COMPLETE";
  else if (snapshot.lastError) banner = `ERROR: ${snapshot.lastError.code}`;
  else if (snapshot.noBoard) banner = "NO BOARD";

  const matched = !!progress && progress.dwell_count > 0;

  return {
    targetPolygon,
    detectedOuter,
    arrows,
    distanceLabel:
      progress && progress.distance !== null ? `${progress.distance.toFixed(1)} px` : "--",
    progressLabel:
      snapshot.totalTargets !== null
        ? `${snapshot.capturedCount}/${snapshot.totalTargets}`
        : "-/-",
    phaseBanner: banner,
    matched,
    targetIndex: target ? target.target_index : null,
  };
}
