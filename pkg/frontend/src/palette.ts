/**
 * Deterministic colors: a class always renders the same hue, derived by
 * hashing its label, so colors survive knowledge-base version changes.
 */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

/** FNV-1a over the UTF-16 code units; stable across sessions. */
export function hashLabel(label: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < label.length; i++) {
    h ^= label.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return h >>> 0;
}

function hslToRgb(h: number, s: number, l: number): Rgb {
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const hp = h / 60;
  const x = c * (1 - Math.abs((hp % 2) - 1));
  let r = 0, g = 0, b = 0;
  if (hp < 1) [r, g, b] = [c, x, 0];
  else if (hp < 2) [r, g, b] = [x, c, 0];
  else if (hp < 3) [r, g, b] = [0, c, x];
  else if (hp < 4) [r, g, b] = [0, x, c];
  else if (hp < 5) [r, g, b] = [x, 0, c];
  else [r, g, b] = [c, 0, x];
  const m = l - c / 2;
  return {
    r: Math.round((r + m) * 255),
    g: Math.round((g + m) * 255),
    b: Math.round((b + m) * 255),
  };
}

/** Pixels no class claims render black, like the "others" pseudo-label. */
export const OTHERS_COLOR: Rgb = { r: 0, g: 0, b: 0 };

export function classColor(label: string): Rgb {
  const h = hashLabel(label);
  const hue = h % 360;
  const sat = 0.55 + ((h >>> 9) % 30) / 100;
  const lum = 0.45 + ((h >>> 17) % 20) / 100;
  return hslToRgb(hue, sat, lum);
}

export function cssColor(c: Rgb): string {
  return `rgb(${c.r}, ${c.g}, ${c.b})`;
}
