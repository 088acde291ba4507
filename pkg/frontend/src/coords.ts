/**
 * Display <-> image coordinate mapping under zoom and pan.
 *
 * Image pixels are integer cells; a pixel maps to the display point at its
 * center, which makes display->image->display a fixed point at any zoom.
 */

export interface Point {
  x: number;
  y: number;
}

export class ViewTransform {
  constructor(
    public zoom: number,
    public panX = 0,
    public panY = 0,
  ) {
    if (!(zoom > 0)) throw new Error(`zoom must be positive, got ${zoom}`);
  }

  displayToImage(dx: number, dy: number): Point {
    return {
      x: Math.floor((dx - this.panX) / this.zoom),
      y: Math.floor((dy - this.panY) / this.zoom),
    };
  }

  imageToDisplay(ix: number, iy: number): Point {
    return {
      x: (ix + 0.5) * this.zoom + this.panX,
      y: (iy + 0.5) * this.zoom + this.panY,
    };
  }

  /** Clamp an image-space point into bounds (clicks must stay inside). */
  inBounds(p: Point, width: number, height: number): boolean {
    return p.x >= 0 && p.x < width && p.y >= 0 && p.y < height;
  }
}

/** Fit an image into a viewport, preserving aspect ratio (contain). */
export function fitTransform(
  imgW: number,
  imgH: number,
  viewW: number,
  viewH: number,
): ViewTransform {
  const zoom = Math.min(viewW / imgW, viewH / imgH);
  const panX = (viewW - imgW * zoom) / 2;
  const panY = (viewH - imgH * zoom) / 2;
  return new ViewTransform(zoom, panX, panY);
}
