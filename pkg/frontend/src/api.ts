import {
  Manifest,
  QueryBody,
  QueryResponse,
  StudyCloseSummary,
  StudyNext,
  StudySessionInfo,
} from './types.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Server error with the response body kept verbatim for display. */
export class ApiError extends Error {
  status: number;
  body: string;

  constructor(status: number, body: string) {
    super(`HTTP ${status}: ${body}`);
    this.status = status;
    this.body = body;
  }
}

export class ApiClient {
  private base: string;
  private fetchFn: FetchLike;

  constructor(base = '', fetchFn: FetchLike = (u, i) => fetch(u, i)) {
    this.base = base.replace(/\/$/, '');
    this.fetchFn = fetchFn;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    const text = await resp.text();
    if (!resp.ok) {
      throw new ApiError(resp.status, text);
    }
    return JSON.parse(text) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  slides(): Promise<Manifest> {
    return this.request<Manifest>('/api/v1/slides');
  }

  query(body: QueryBody): Promise<QueryResponse> {
    return this.post<QueryResponse>('/api/v1/query', body);
  }

  tileUrl(slideId: number, downsample: number, tx: number, ty: number): string {
    return `${this.base}/api/v1/tile/${slideId}/${downsample}/${tx}/${ty}`;
  }

  patchUrl(patchId: number): string {
    return `${this.base}/api/v1/patch/${patchId}.png`;
  }

  studySession(opts: {
    rater_id: string;
    n_queries: number;
    scoring: string;
    seed: number;
  }): Promise<StudySessionInfo> {
    return this.post<StudySessionInfo>('/api/v1/study/session', opts);
  }

  studyNext(sessionId: string): Promise<StudyNext> {
    return this.request<StudyNext>(
      `/api/v1/study/next?session_id=${encodeURIComponent(sessionId)}`,
    );
  }

  studyRate(
    sessionId: string,
    queryIndex: number,
    resultIndex: number,
    score: number | string,
  ): Promise<{ ok: boolean }> {
    return this.post('/api/v1/study/rate', {
      session_id: sessionId,
      query_index: queryIndex,
      result_index: resultIndex,
      score,
    });
  }

  studyClose(sessionId: string): Promise<StudyCloseSummary> {
    return this.post('/api/v1/study/close', { session_id: sessionId });
  }
}
