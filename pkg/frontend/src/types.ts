// Wire types mirroring the session API. The server owns the truth; the client
// never mutates these shapes.

export interface EventNode {
  id: string;
  parent_id: string | null;
  stage: number;
  text: string;
  temperature: number | null;
  calib_status: string;
  fact_score: number | null;
  fact_ref: string | null;
  keyframe: string | null;
  status_history: string[];
}

export interface SessionSnapshot {
  session_id: string;
  root_id: string;
  nodes: EventNode[];
  selected_path: string[];
  config: Record<string, unknown>;
  state: string;
  traces: unknown[];
  visualization: { session_id: string; pairs: [string, string | null][] } | null;
  keyframes: { id: string; caption: string; image_path: string }[];
  metrics: { fc: number | null; lc: number | null } | null;
  estimates: WorldLineEstimate[] | null;
  created_at: number;
  updated_at: number;
}

export interface WorldLineEstimate {
  leaf_id: string;
  path: string[];
  probability: number;
  loss_severity: number;
  label: string;
}

export interface VisualizationPayload {
  session_id: string;
  pairs: [string, string | null][];
  keyframes: { id: string; caption: string; url: string }[];
}

export interface GraphPayload {
  nodes: { id: string; label: string; category: string }[];
  edges: { from: string; to: string; relation: string }[];
  dot: string;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
