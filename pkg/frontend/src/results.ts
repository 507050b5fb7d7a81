import { QueryResult } from './types.js';

/**
 * Results panel state: ranked thumbnails, one result magnified at a
 * time, and jump targets that recenter the viewer on a clicked hit.
 */
export class ResultsPanel {
  results: QueryResult[] = [];
  exhausted = false;
  magnifiedIndex: number | null = null;

  setResults(results: QueryResult[], exhausted: boolean): void {
    this.results = results;
    this.exhausted = exhausted;
    this.magnifiedIndex = null;
  }

  magnify(index: number): QueryResult | null {
    if (index < 0 || index >= this.results.length) {
      return null;
    }
    this.magnifiedIndex = index;
    return this.results[index];
  }

  /** viewer target for a clicked result: its center, at its level */
  jumpTarget(index: number):
      { slideId: number; centerX: number; centerY: number;
        downsample: number } | null {
    const r = this.results[index];
    if (!r) {
      return null;
    }
    const downsample = { M40X: 1, M20X: 2, M10X: 4, M5X: 8 }[
      r.magnification
    ] ?? 1;
    const half = (r.side_px * downsample) / 2;
    return {
      slideId: r.slide_id,
      centerX: r.x + half,
      centerY: r.y + half,
      downsample,
    };
  }
}
