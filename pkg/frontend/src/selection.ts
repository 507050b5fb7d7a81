import { QueryBody } from './types.js';
import { ViewerState } from './viewer.js';

export const MIN_SELECTION_PX = 200;
export const MAX_SELECTION_PX = 400;

export interface BaseRect {
  x: number;
  y: number;
  w: number;
  h: number;
}

/**
 * Rectangle selection in base pixels, drawn at the current level. The
 * search button only enables while the level-pixel dimensions are inside
 * the allowed 200..400 window (the server re-checks independently).
 */
export class SelectionState {
  private anchor: { x: number; y: number } | null = null;
  rect: BaseRect | null = null;
  dragging = false;

  startDrag(baseX: number, baseY: number, downsample: number): void {
    const snap = (v: number) => Math.round(v / downsample) * downsample;
    this.anchor = { x: snap(baseX), y: snap(baseY) };
    this.rect = { x: this.anchor.x, y: this.anchor.y, w: 0, h: 0 };
    this.dragging = true;
  }

  dragTo(baseX: number, baseY: number, downsample: number): void {
    if (!this.dragging || !this.anchor) {
      return;
    }
    const snap = (v: number) => Math.round(v / downsample) * downsample;
    const bx = snap(baseX);
    const by = snap(baseY);
    this.rect = {
      x: Math.min(this.anchor.x, bx),
      y: Math.min(this.anchor.y, by),
      w: Math.abs(bx - this.anchor.x),
      h: Math.abs(by - this.anchor.y),
    };
  }

  endDrag(): void {
    this.dragging = false;
  }

  clear(): void {
    this.anchor = null;
    this.rect = null;
    this.dragging = false;
  }

  /** selection size in level pixels at the given downsample */
  levelSize(downsample: number): { w: number; h: number } | null {
    if (!this.rect) {
      return null;
    }
    return {
      w: Math.round(this.rect.w / downsample),
      h: Math.round(this.rect.h / downsample),
    };
  }

  isValid(downsample: number): boolean {
    const size = this.levelSize(downsample);
    if (!size) {
      return false;
    }
    return (
      size.w >= MIN_SELECTION_PX && size.w <= MAX_SELECTION_PX &&
      size.h >= MIN_SELECTION_PX && size.h <= MAX_SELECTION_PX
    );
  }

  sizeHint(downsample: number): string {
    const size = this.levelSize(downsample);
    if (!size) {
      return 'Drag a rectangle to select a query region.';
    }
    if (this.isValid(downsample)) {
      return `${size.w} x ${size.h} px — ready to search`;
    }
    return (
      `${size.w} x ${size.h} px — the selection must be between ` +
      `${MIN_SELECTION_PX} and ${MAX_SELECTION_PX} pixels on each side`
    );
  }

  /**
   * Query body for the drawn rectangle. The dimensions sent are exactly
   * the level-pixel dimensions displayed, and the origin is aligned to
   * the level grid.
   */
  toQueryBody(viewer: ViewerState, k: number): QueryBody {
    if (!this.rect || !viewer.slide) {
      throw new Error('nothing selected');
    }
    if (!this.isValid(viewer.level)) {
      throw new Error('selection outside the allowed size range');
    }
    const size = this.levelSize(viewer.level)!;
    return {
      slide_id: viewer.slide.slide_id,
      x: this.rect.x,
      y: this.rect.y,
      w: size.w,
      h: size.h,
      mag: viewer.magnificationName(),
      k,
    };
  }
}
