/**
 * Annotator app: load an image, click objects, watch the mask come back.
 *
 * Left click = positive, right click (or the polarity toggle) = negative.
 * The canvas repaints only from server responses.  An optional ground-truth
 * mask file enables the IoU panel (evaluation mode); annotators normally
 * work without it.
 */

import { fitTransform, ViewTransform } from "./coords.js";
import { compositeOverlay, maskIou } from "./overlay.js";
import { HttpTransport } from "./protocol.js";
import { decodeRle } from "./rle.js";
import { UiSession } from "./session.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

interface AppState {
  session: UiSession;
  image: ImageBitmap | null;
  imagePixels: Uint8ClampedArray | null;
  view: ViewTransform;
  zoomLevel: number;
  negative: boolean;
  gtMask: Uint8Array | null;
  netStart: number;
}

const state: AppState = {
  session: new UiSession(new HttpTransport("")),
  image: null,
  imagePixels: null,
  view: new ViewTransform(1),
  zoomLevel: 1,
  negative: false,
  gtMask: null,
  netStart: 0,
};

function status(text: string, isError = false): void {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "error" : "";
}

function repaint(maskRle: number[] | null): void {
  const canvas = $<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!state.image || !state.imagePixels) return;
  const { width, height } = state.session;

  let pixels = state.imagePixels;
  if (maskRle) {
    try {
      const mask = decodeRle(maskRle, width, height);
      pixels = compositeOverlay(state.imagePixels, mask);
      if (state.gtMask) {
        $("iou").textContent = `IoU ${maskIou(mask, state.gtMask).toFixed(3)}`;
      }
    } catch (e) {
      status(`bad mask payload: ${e}`, true);
      return;
    }
  }
  const frame = new ImageData(new Uint8ClampedArray(pixels), width, height);
  const off = document.createElement("canvas");
  off.width = width;
  off.height = height;
  off.getContext("2d")!.putImageData(frame, 0, 0);
  ctx.imageSmoothingEnabled = state.view.zoom < 1;
  ctx.drawImage(
    off,
    state.view.panX,
    state.view.panY,
    width * state.view.zoom,
    height * state.view.zoom,
  );
  drawMarkers(ctx);
}

function drawMarkers(ctx: CanvasRenderingContext2D): void {
  for (const m of state.session.markers) {
    const p = state.view.imageToDisplay(m.x, m.y);
    ctx.beginPath();
    drawStar(ctx, p.x, p.y, 7);
    ctx.fillStyle = m.positive ? "#21c55d" : "#ef4444";
    ctx.fill();
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 1;
    ctx.stroke();
  }
}

function drawStar(ctx: CanvasRenderingContext2D, cx: number, cy: number, r: number): void {
  for (let i = 0; i < 10; i++) {
    const radius = i % 2 === 0 ? r : r * 0.45;
    const angle = (Math.PI / 5) * i - Math.PI / 2;
    const x = cx + radius * Math.cos(angle);
    const y = cy + radius * Math.sin(angle);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.closePath();
}

function refreshToolbar(): void {
  $<HTMLButtonElement>("undo").disabled = !state.session.canUndo;
  $("polarity").textContent = state.negative ? "negative" : "positive";
  $("polarity").className = state.negative ? "neg" : "pos";
  $("count").textContent = `${state.session.markers.length} clicks`;
}

function applyZoom(level: number): void {
  state.zoomLevel = level;
  const canvas = $<HTMLCanvasElement>("view");
  const fit = fitTransform(state.session.width, state.session.height,
    canvas.width, canvas.height);
  state.view = new ViewTransform(fit.zoom * level, fit.panX, fit.panY);
  repaint(state.session.maskRle);
}

async function loadImageFile(file: File): Promise<void> {
  const bitmap = await createImageBitmap(file);
  state.image = bitmap;
  const off = document.createElement("canvas");
  off.width = bitmap.width;
  off.height = bitmap.height;
  const c = off.getContext("2d")!;
  c.drawImage(bitmap, 0, 0);
  state.imagePixels = c.getImageData(0, 0, bitmap.width, bitmap.height).data;

  const imageId = file.name.replace(/\.[^.]+$/, "");
  status(`opening session for "${imageId}"...`);
  try {
    await state.session.open(imageId);
  } catch (e) {
    status(`open failed (is "${imageId}" preprocessed?): ${e}`, true);
    return;
  }
  if (state.session.width !== bitmap.width || state.session.height !== bitmap.height) {
    status(
      `dims mismatch: file is ${bitmap.width}x${bitmap.height}, ` +
      `server cache is ${state.session.width}x${state.session.height}`, true);
    return;
  }
  applyZoom(1);
  refreshToolbar();
  status(`session ${state.session.sessionId.slice(0, 8)} ready`);
}

function wire(): void {
  const canvas = $<HTMLCanvasElement>("view");

  state.session.onFrame((maskRle, _markers, latencyMs) => {
    repaint(maskRle);
    refreshToolbar();
    if (state.session.lastError) {
      status(state.session.lastError, true);
    } else if (latencyMs !== null) {
      const net = performance.now() - state.netStart;
      const cold = state.session.lastCold ? " (cold encode)" : "";
      $("latency").textContent =
        `model ${latencyMs.toFixed(0)} ms | round-trip ${net.toFixed(0)} ms${cold}`;
      status("ok");
    }
  });

  canvas.addEventListener("contextmenu", (e) => e.preventDefault());
  canvas.addEventListener("pointerdown", (e) => {
    if (!state.image) return;
    const rect = canvas.getBoundingClientRect();
    const p = state.view.displayToImage(e.clientX - rect.left, e.clientY - rect.top);
    if (!state.view.inBounds(p, state.session.width, state.session.height)) return;
    const negative = e.button === 2 || state.negative;
    state.netStart = performance.now();
    void state.session.placeClick(p.x, p.y, !negative);
    refreshToolbar();
  });

  $("undo").addEventListener("click", () => {
    state.netStart = performance.now();
    void state.session.undoAction();
    refreshToolbar();
  });
  $("polarity").addEventListener("click", () => {
    state.negative = !state.negative;
    refreshToolbar();
  });
  $<HTMLSelectElement>("zoom").addEventListener("change", (e) => {
    applyZoom(parseFloat((e.target as HTMLSelectElement).value));
  });
  $<HTMLInputElement>("file").addEventListener("change", (e) => {
    const f = (e.target as HTMLInputElement).files?.[0];
    if (f) void loadImageFile(f);
  });
  $<HTMLInputElement>("gtfile").addEventListener("change", async (e) => {
    const f = (e.target as HTMLInputElement).files?.[0];
    if (!f) return;
    const bmp = await createImageBitmap(f);
    const off = document.createElement("canvas");
    off.width = bmp.width;
    off.height = bmp.height;
    const c = off.getContext("2d")!;
    c.drawImage(bmp, 0, 0);
    const data = c.getImageData(0, 0, bmp.width, bmp.height).data;
    const gt = new Uint8Array(bmp.width * bmp.height);
    for (let i = 0; i < gt.length; i++) gt[i] = data[i * 4] > 127 ? 1 : 0;
    state.gtMask = gt;
    $("iou").textContent = "IoU pending";
  });
}

document.addEventListener("DOMContentLoaded", wire);
