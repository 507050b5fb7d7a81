import { ApiClient } from './api.js';
import { StudyNext, StudySessionInfo } from './types.js';

/** Rubric rows shown next to the 0..100 scale in grading mode. */
export const RUBRIC_ROWS: { score: number; text: string }[] = [
  { score: 0, text: 'Tumor presence differs and the patches look visually different.' },
  { score: 25, text: 'Tumor presence differs but histologic features match.' },
  { score: 50, text: 'Tumor presence matches but the grade does not.' },
  { score: 75, text: 'Grades match, or both patches are normal.' },
  { score: 100, text: 'Grades match (or both normal) with at least one histologic feature match.' },
];

const FORBIDDEN_FIELDS = ['provenance', 'arm', 'distance', 'distances'];

/**
 * Blinded rating flow: fetch the next query with its four result images,
 * collect one rating per result, then advance. Navigation away is
 * blocked while ratings are unsaved, and any arm-identifying field in a
 * pre-close payload is treated as a contract violation.
 */
export class StudyFlow {
  private api: ApiClient;
  session: StudySessionInfo | null = null;
  current: StudyNext | null = null;
  ratings: Map<number, number | string> = new Map();
  done = false;

  constructor(api: ApiClient) {
    this.api = api;
  }

  static assertBlinded(payload: StudyNext): void {
    const present = FORBIDDEN_FIELDS.filter((f) => f in (payload as object));
    if (present.length > 0) {
      throw new Error(
        `blinding contract violation: server sent ${present.join(', ')}`,
      );
    }
    for (const r of payload.results ?? []) {
      const extra = Object.keys(r).filter(
        (k) => k !== 'result_index' && k !== 'image_url',
      );
      if (extra.length > 0) {
        throw new Error(
          `blinding contract violation: result carries ${extra.join(', ')}`,
        );
      }
    }
  }

  async start(opts: { rater_id: string; n_queries: number;
      scoring: string; seed: number }): Promise<StudySessionInfo> {
    this.session = await this.api.studySession(opts);
    this.done = false;
    await this.loadNext();
    return this.session;
  }

  async loadNext(): Promise<StudyNext | null> {
    if (!this.session) {
      throw new Error('no open session');
    }
    const next = await this.api.studyNext(this.session.session_id);
    if (next.done) {
      this.done = true;
      this.current = null;
      return null;
    }
    StudyFlow.assertBlinded(next);
    this.current = next;
    this.ratings = new Map(
      (next.rated ?? []).map((i) => [i, 0 as number | string]),
    );
    return next;
  }

  /** one rating widget per result image */
  widgetCount(): number {
    return this.current?.results?.length ?? 0;
  }

  scale(): (number | string)[] {
    return this.current?.scale ?? [];
  }

  validScore(score: number | string): boolean {
    return this.scale().some((s) => s === score);
  }

  async rate(resultIndex: number, score: number | string): Promise<void> {
    if (!this.session || !this.current) {
      throw new Error('no active query');
    }
    if (!this.validScore(score)) {
      throw new Error(
        `score ${String(score)} is not on the ${this.current.scoring} scale`,
      );
    }
    await this.api.studyRate(
      this.session.session_id,
      this.current.query_index!,
      resultIndex,
      score,
    );
    this.ratings.set(resultIndex, score);
  }

  hasUnsavedRatings(): boolean {
    return this.current !== null
      && this.ratings.size < this.widgetCount();
  }

  /** true when navigation is allowed (all widgets rated or no query) */
  canAdvance(): boolean {
    return !this.hasUnsavedRatings();
  }

  progress(): { done: number; total: number } {
    if (!this.current) {
      return { done: 0, total: this.session?.n_queries ?? 0 };
    }
    return {
      done: this.current.query_index ?? 0,
      total: this.current.total_queries ?? 0,
    };
  }

  async advance(): Promise<StudyNext | null> {
    if (!this.canAdvance()) {
      throw new Error('rate all results before moving on');
    }
    return this.loadNext();
  }

  async close() {
    if (!this.session) {
      throw new Error('no open session');
    }
    const summary = await this.api.studyClose(this.session.session_id);
    this.done = true;
    this.current = null;
    return summary;
  }
}
