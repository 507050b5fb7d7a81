import { Manifest, SlideInfo } from './types.js';

export interface TileAddress {
  slideId: number;
  downsample: number;
  tx: number;
  ty: number;
}

export function tileKey(t: TileAddress): string {
  return `${t.slideId}/${t.downsample}/${t.ty}_${t.tx}`;
}

/**
 * Pan/zoom state over one slide. Zoom snaps to pyramid levels only, so a
 * screen pixel is always an integer number of base pixels and the 200-400
 * selection constraint stays meaningful.
 */
export class ViewerState {
  slide: SlideInfo | null = null;
  tileSize = 512;
  /** current level as its downsample factor (1, 2, 4, 8) */
  level = 1;
  /** viewport center in base px */
  centerX = 0;
  centerY = 0;

  setManifest(manifest: Manifest, slideId: number): void {
    const slide = manifest.slides.find((s) => s.slide_id === slideId);
    if (!slide) {
      throw new Error(`unknown slide ${slideId}`);
    }
    this.slide = slide;
    this.tileSize = manifest.tile_size;
    const downs = slide.levels.map((l) => l.downsample);
    this.level = Math.max(...downs); // start zoomed out
    this.centerX = slide.base_width_px / 2;
    this.centerY = slide.base_height_px / 2;
  }

  levelDownsamples(): number[] {
    return this.slide ? this.slide.levels.map((l) => l.downsample) : [1];
  }

  magnificationName(): string {
    const lvl = this.slide?.levels.find(
      (l) => l.downsample === this.level,
    );
    return lvl ? lvl.magnification : 'M40X';
  }

  /** snap an arbitrary scale (base px per screen px) to the nearest level */
  static snapToLevel(scale: number, downsamples: number[]): number {
    let best = downsamples[0];
    let bestGap = Math.abs(Math.log(scale / best));
    for (const d of downsamples.slice(1)) {
      const gap = Math.abs(Math.log(scale / d));
      if (gap < bestGap) {
        best = d;
        bestGap = gap;
      }
    }
    return best;
  }

  zoomIn(): void {
    const downs = this.levelDownsamples();
    const i = downs.indexOf(this.level);
    if (i > 0) {
      this.level = downs[i - 1];
    }
  }

  zoomOut(): void {
    const downs = this.levelDownsamples();
    const i = downs.indexOf(this.level);
    if (i >= 0 && i < downs.length - 1) {
      this.level = downs[i + 1];
    }
  }

  /** move the viewport by screen pixels */
  pan(dxScreen: number, dyScreen: number): void {
    this.centerX -= dxScreen * this.level;
    this.centerY -= dyScreen * this.level;
    this.clampCenter();
  }

  clampCenter(): void {
    if (!this.slide) {
      return;
    }
    this.centerX = Math.min(Math.max(this.centerX, 0), this.slide.base_width_px);
    this.centerY = Math.min(Math.max(this.centerY, 0), this.slide.base_height_px);
  }

  screenToBase(sx: number, sy: number, canvasW: number, canvasH: number):
      { x: number; y: number } {
    return {
      x: this.centerX + (sx - canvasW / 2) * this.level,
      y: this.centerY + (sy - canvasH / 2) * this.level,
    };
  }

  baseToScreen(bx: number, by: number, canvasW: number, canvasH: number):
      { x: number; y: number } {
    return {
      x: (bx - this.centerX) / this.level + canvasW / 2,
      y: (by - this.centerY) / this.level + canvasH / 2,
    };
  }

  /**
   * Tiles covering the viewport at the current level, clipped to the
   * slide. The list never repeats an address.
   */
  visibleTiles(canvasW: number, canvasH: number): TileAddress[] {
    if (!this.slide) {
      return [];
    }
    const ds = this.level;
    const levelW = Math.ceil(this.slide.base_width_px / ds);
    const levelH = Math.ceil(this.slide.base_height_px / ds);
    const t = this.tileSize;
    const x0 = this.centerX / ds - canvasW / 2;
    const y0 = this.centerY / ds - canvasH / 2;
    const txMin = Math.max(0, Math.floor(x0 / t));
    const tyMin = Math.max(0, Math.floor(y0 / t));
    const txMax = Math.min(
      Math.ceil(levelW / t) - 1,
      Math.floor((x0 + canvasW - 1) / t),
    );
    const tyMax = Math.min(
      Math.ceil(levelH / t) - 1,
      Math.floor((y0 + canvasH - 1) / t),
    );
    const out: TileAddress[] = [];
    for (let ty = tyMin; ty <= tyMax; ty++) {
      for (let tx = txMin; tx <= txMax; tx++) {
        out.push({ slideId: this.slide.slide_id, downsample: ds, tx, ty });
      }
    }
    return out;
  }
}

/**
 * Tracks in-flight and cached tiles so a frame never requests the same
 * tile twice.
 */
export class TileRequestTracker {
  private seen = new Set<string>();

  /** tiles from `wanted` that still need a network request */
  newRequests(wanted: TileAddress[]): TileAddress[] {
    const out: TileAddress[] = [];
    for (const t of wanted) {
      const key = tileKey(t);
      if (!this.seen.has(key)) {
        this.seen.add(key);
        out.push(t);
      }
    }
    return out;
  }

  forget(t: TileAddress): void {
    this.seen.delete(tileKey(t)); // failed load: allow a retry
  }

  reset(): void {
    this.seen.clear();
  }
}
