import type { EventNode, SessionSnapshot } from "./types.ts";

// View state is a pure function of the latest fetched snapshot; nothing here
// mutates or augments server truth.

export interface NodeView {
  id: string;
  stage: number;
  row: number;
  text: string;
  committed: boolean;
  isRoot: boolean;
  badges: Badge[];
  keyframe: string | null;
}

export interface Badge {
  kind: string;
  label: string;
}

export interface SessionView {
  sessionId: string;
  state: string;
  finalized: boolean;
  stages: NodeView[][];
  committedPath: string[];
  candidates: NodeView[];
  metrics: { fc: number | null; lc: number | null } | null;
}

export function validateSnapshot(data: unknown): SessionSnapshot {
  const snap = data as SessionSnapshot;
  if (!snap || typeof snap !== "object") throw new Error("snapshot is not an object");
  if (typeof snap.session_id !== "string" || !snap.session_id) throw new Error("snapshot missing session_id");
  if (typeof snap.state !== "string") throw new Error("snapshot missing state");
  if (!Array.isArray(snap.nodes) || snap.nodes.length === 0) throw new Error("snapshot has no nodes");
  if (!Array.isArray(snap.selected_path) || snap.selected_path.length === 0) {
    throw new Error("snapshot has no selected_path");
  }
  const ids = new Set<string>();
  for (const node of snap.nodes) {
    if (typeof node.id !== "string" || typeof node.text !== "string" || typeof node.stage !== "number") {
      throw new Error(`malformed node ${JSON.stringify(node).slice(0, 60)}`);
    }
    ids.add(node.id);
  }
  if (typeof snap.root_id !== "string" || !ids.has(snap.root_id)) throw new Error("root_id unresolved");
  for (const pathId of snap.selected_path) {
    if (!ids.has(pathId)) throw new Error(`selected_path references unknown node ${pathId}`);
  }
  return snap;
}

function nodeBadges(node: EventNode): Badge[] {
  const badges: Badge[] = [];
  if (node.fact_score !== null && node.fact_score !== undefined) {
    badges.push({ kind: "fact-score", label: `fact ${node.fact_score.toFixed(2)}` });
  }
  const history = node.status_history ?? [];
  if (history.includes("fact_revised")) badges.push({ kind: "revision-badge", label: "revised" });
  if (history.includes("logic_regenerated")) badges.push({ kind: "regen-badge", label: "regenerated" });
  if (history.includes("fact_unresolved") || history.includes("logic_unresolved")) {
    badges.push({ kind: "unresolved-flag", label: "unresolved" });
  }
  if (node.calib_status === "fully_calibrated") badges.push({ kind: "calibrated", label: "calibrated" });
  return badges;
}

export function buildSessionView(snap: SessionSnapshot): SessionView {
  const committed = new Set(snap.selected_path);
  const byStage = new Map<number, EventNode[]>();
  for (const node of snap.nodes) {
    const bucket = byStage.get(node.stage) ?? [];
    bucket.push(node);
    byStage.set(node.stage, bucket);
  }

  const stages: NodeView[][] = [];
  for (let stage = 0; byStage.has(stage); stage++) {
    const column = (byStage.get(stage) ?? []).slice().sort((a, b) => a.id.localeCompare(b.id));
    stages.push(
      column.map((node, row) => ({
        id: node.id,
        stage,
        row,
        text: node.text,
        committed: committed.has(node.id),
        isRoot: node.id === snap.root_id,
        badges: nodeBadges(node),
        keyframe: node.keyframe,
      })),
    );
  }

  const endpoint = snap.selected_path[snap.selected_path.length - 1];
  const candidates =
    snap.state === "awaiting_selection"
      ? snap.nodes
          .filter((n) => n.parent_id === endpoint)
          .sort((a, b) => a.id.localeCompare(b.id))
          .map((node) => ({
            id: node.id,
            stage: node.stage,
            row: 0,
            text: node.text,
            committed: false,
            isRoot: false,
            badges: nodeBadges(node),
            keyframe: node.keyframe,
          }))
      : [];

  return {
    sessionId: snap.session_id,
    state: snap.state,
    finalized: snap.state === "finalized",
    stages,
    committedPath: [...snap.selected_path],
    candidates,
    metrics: snap.metrics ?? null,
  };
}
