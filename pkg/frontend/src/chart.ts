/**
 * Loss-chart geometry. Pure scaling of service-reported numbers into SVG
 * coordinates; no loss value is ever computed client-side.
 */

import type { ProgressEvent } from "./types.js";

export interface ChartPoint {
  step: number;
  rsl: number;
  gcl: number;
  total: number;
}

export function pointFromEvent(event: ProgressEvent): ChartPoint {
  return { step: event.step, rsl: event.rsl, gcl: event.gcl, total: event.total };
}

/** "x1,y1 x2,y2 ..." polyline for one series, scaled into width x height. */
export function polyline(
  points: ChartPoint[],
  series: "rsl" | "gcl" | "total",
  width: number,
  height: number,
  totalSteps: number,
): string {
  if (points.length === 0) return "";
  const values = points.map((p) => p[series]);
  const maxValue = Math.max(...values, 1e-12);
  const denom = Math.max(totalSteps, 1);
  return points
    .map((p) => {
      const x = (p.step / denom) * width;
      const y = height - (p[series] / maxValue) * height;
      return `${x.toFixed(2)},${y.toFixed(2)}`;
    })
    .join(" ");
}
