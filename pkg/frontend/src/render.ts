/**
 * Overlay composition for the annotator canvas. The pixel math lives in
 * pure functions over typed arrays so it stays testable without a 2D
 * context; drawing is a thin wrapper at the bottom.
 */

import { KbModel, NodeView, TreeModel } from "./model.js";
import { Mask, maskGet } from "./rle.js";
import { OTHERS_COLOR, classColor } from "./palette.js";

const FILL_ALPHA = 140;
const OTHERS_ALPHA = 90;
const SELECTED_ALPHA = 200;

/**
 * RGBA overlay, deepest semantic node wins per pixel. Pixels no region
 * claims render as "others" (black) once annotation has started, and
 * fully transparent on a bare root.
 */
export function computeOverlay(
  model: TreeModel,
  kb: KbModel,
  selectedId: number | null,
): Uint8ClampedArray {
  const { width, height } = model;
  const size = width * height;
  const classAt = new Int32Array(size).fill(-1);
  const depthAt = new Int32Array(size).fill(-1);
  let annotated = false;
  for (const node of model.bfs()) {
    if (node.isInstance) continue;
    annotated = true;
    const { data } = node.mask;
    for (let i = 0; i < size; i++) {
      if (data[i] && node.depth >= depthAt[i]) {
        depthAt[i] = node.depth;
        classAt[i] = node.classId;
      }
    }
  }

  const out = new Uint8ClampedArray(size * 4);
  const cache = new Map<number, [number, number, number]>();
  for (let i = 0; i < size; i++) {
    const cls = classAt[i];
    const o = i * 4;
    if (cls >= 0) {
      let rgb = cache.get(cls);
      if (!rgb) {
        const c = classColor(kb.label(cls));
        rgb = [c.r, c.g, c.b];
        cache.set(cls, rgb);
      }
      out[o] = rgb[0];
      out[o + 1] = rgb[1];
      out[o + 2] = rgb[2];
      out[o + 3] = FILL_ALPHA;
    } else if (annotated) {
      out[o] = OTHERS_COLOR.r;
      out[o + 1] = OTHERS_COLOR.g;
      out[o + 2] = OTHERS_COLOR.b;
      out[o + 3] = OTHERS_ALPHA;
    }
  }

  if (selectedId !== null) {
    const node = model.nodes.get(selectedId);
    if (node) {
      paintSelection(out, node, width, height);
    }
  }
  return out;
}

function paintSelection(
  out: Uint8ClampedArray,
  node: NodeView,
  width: number,
  height: number,
): void {
  for (const i of outlinePixels(node.mask)) {
    const o = i * 4;
    out[o] = 255;
    out[o + 1] = 255;
    out[o + 2] = 255;
    out[o + 3] = 255;
  }
  if (!node.isInstance) return;
  // instances tint their interior so overlapping siblings stay readable
  const { data } = node.mask;
  for (let i = 0; i < width * height; i++) {
    if (data[i]) out[i * 4 + 3] = Math.max(out[i * 4 + 3], SELECTED_ALPHA);
  }
}

/** Indices of mask pixels with at least one unset 4-neighbor. */
export function outlinePixels(mask: Mask): number[] {
  const border: number[] = [];
  for (let b = 0; b < mask.height; b++) {
    for (let a = 0; a < mask.width; a++) {
      if (!maskGet(mask, a, b)) continue;
      if (
        !maskGet(mask, a - 1, b) ||
        !maskGet(mask, a + 1, b) ||
        !maskGet(mask, a, b - 1) ||
        !maskGet(mask, a, b + 1)
      ) {
        border.push(b * mask.width + a);
      }
    }
  }
  return border;
}

/** Draws image plus overlay; a no-op when no 2D context is available. */
export function drawScene(
  canvas: HTMLCanvasElement,
  image: HTMLImageElement | null,
  model: TreeModel,
  kb: KbModel,
  selectedId: number | null,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  canvas.width = model.width;
  canvas.height = model.height;
  ctx.clearRect(0, 0, model.width, model.height);
  if (image && image.complete && image.naturalWidth > 0) {
    ctx.drawImage(image, 0, 0, model.width, model.height);
  } else {
    ctx.fillStyle = "#202830";
    ctx.fillRect(0, 0, model.width, model.height);
  }
  const overlay = computeOverlay(model, kb, selectedId);
  const scratch = document.createElement("canvas");
  scratch.width = model.width;
  scratch.height = model.height;
  const sctx = scratch.getContext("2d");
  if (!sctx) return;
  const pixels = sctx.createImageData(model.width, model.height);
  pixels.data.set(overlay);
  sctx.putImageData(pixels, 0, 0);
  ctx.drawImage(scratch, 0, 0);
}
