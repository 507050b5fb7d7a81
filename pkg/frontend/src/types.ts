export interface LevelInfo {
  magnification: string;
  downsample: number;
}

export interface SlideInfo {
  slide_id: number;
  name: string;
  base_width_px: number;
  base_height_px: number;
  levels: LevelInfo[];
}

export interface Manifest {
  tile_size: number;
  slides: SlideInfo[];
}

export interface QueryResult {
  rank: number;
  patch_id: number;
  slide_id: number;
  magnification: string;
  x: number;
  y: number;
  side_px: number;
  best_orientation: string;
  distance: number | null;
  thumbnail_url: string;
  labels: Record<string, unknown> | null;
}

export interface QueryResponse {
  results: QueryResult[];
  exhausted: boolean;
}

export interface QueryBody {
  slide_id: number;
  x: number;
  y: number;
  w: number;
  h: number;
  mag: string;
  k: number;
  exclude_self?: boolean;
  min_separation_px?: number;
}

export interface StudySessionInfo {
  session_id: string;
  n_queries: number;
  scoring: string;
  results_per_query: number;
}

export interface StudyResultSlot {
  result_index: number;
  image_url: string;
}

export interface StudyNext {
  done: boolean;
  session_id?: string;
  query_index?: number;
  total_queries?: number;
  scoring?: string;
  scale?: (number | string)[];
  query_image_url?: string;
  results?: StudyResultSlot[];
  rated?: number[];
}

export interface StudyCloseSummary {
  session_id: string;
  scoring: string;
  arms: string[];
  aggregates: Record<string, { ratings: number; mean_score: number | null; unclear: number }>;
}
