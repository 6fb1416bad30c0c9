/** Deterministic per-cluster overlay colors: a bijection within one image. */

const GOLDEN_ANGLE = 137.50776405003785;

export function clusterColor(clusterId: number, alpha = 0.55): string {
  const hue = (clusterId * GOLDEN_ANGLE) % 360;
  const lightness = 45 + (clusterId % 3) * 10;
  return `hsla(${hue.toFixed(4)}, 70%, ${lightness}%, ${alpha})`;
}

export function colorTable(nClusters: number, alpha = 0.55): string[] {
  return Array.from({ length: nClusters }, (_, i) => clusterColor(i, alpha));
}
