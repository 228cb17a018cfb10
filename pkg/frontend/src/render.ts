import type { GraphPayload, SessionSnapshot, VisualizationPayload, WorldLineEstimate } from "./types.ts";
import type { NodeView, SessionView } from "./view.ts";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function badgeRow(doc: Document, node: NodeView): HTMLElement {
  const row = el(doc, "div", "badges");
  for (const badge of node.badges) {
    row.appendChild(el(doc, "span", `badge ${badge.kind}`, badge.label));
  }
  return row;
}

export function renderTree(doc: Document, container: HTMLElement, view: SessionView): void {
  container.innerHTML = "";
  const columns = el(doc, "div", "stage-columns");
  view.stages.forEach((column, stage) => {
    const columnEl = el(doc, "div", "stage-column");
    columnEl.appendChild(el(doc, "h3", undefined, stage === 0 ? "initial instance" : `stage ${stage}`));
    for (const node of column) {
      const card = el(doc, "div", node.committed ? "node-card committed" : "node-card");
      card.dataset.nodeId = node.id;
      card.appendChild(el(doc, "div", "node-text", node.text));
      card.appendChild(badgeRow(doc, node));
      columnEl.appendChild(card);
    }
    columns.appendChild(columnEl);
  });
  container.appendChild(columns);
}

export function renderCandidates(
  doc: Document,
  container: HTMLElement,
  view: SessionView,
  onSelect: (nodeId: string) => void,
): void {
  container.innerHTML = "";
  for (const candidate of view.candidates) {
    const card = el(doc, "div", "candidate-card");
    card.dataset.nodeId = candidate.id;
    card.appendChild(el(doc, "div", "node-text", candidate.text));
    card.appendChild(badgeRow(doc, candidate));
    card.addEventListener("click", () => onSelect(candidate.id));
    container.appendChild(card);
  }
}

export function renderMetrics(doc: Document, container: HTMLElement, view: SessionView): void {
  container.innerHTML = "";
  if (!view.metrics) return;
  const gauges = el(doc, "div", "gauges");
  const entries: [string, number | null][] = [
    ["factual consistency", view.metrics.fc],
    ["logical consistency", view.metrics.lc],
  ];
  for (const [label, value] of entries) {
    const gauge = el(doc, "div", "gauge");
    gauge.appendChild(el(doc, "div", "label", label));
    const bar = el(doc, "div", "bar");
    const fill = el(doc, "div", "fill");
    fill.style.width = value === null ? "0%" : `${(value * 100).toFixed(1)}%`;
    bar.appendChild(fill);
    gauge.appendChild(bar);
    gauge.appendChild(el(doc, "div", "value", value === null ? "n/a" : `${(value * 100).toFixed(1)}%`));
    gauges.appendChild(gauge);
  }
  container.appendChild(gauges);
}

export function renderFinalPath(
  doc: Document,
  container: HTMLElement,
  snapshot: SessionSnapshot,
  visualization: VisualizationPayload | null,
): void {
  container.innerHTML = "";
  if (snapshot.state !== "finalized") return;
  container.appendChild(el(doc, "h2", undefined, "Committed world line"));
  const strip = el(doc, "div", "final-path");
  const byId = new Map(snapshot.nodes.map((n) => [n.id, n]));
  const keyframeUrl = new Map((visualization?.keyframes ?? []).map((k) => [k.id, k.url]));
  const pairs = visualization?.pairs ?? snapshot.selected_path.map((id) => [id, byId.get(id)?.keyframe ?? null] as [string, string | null]);

  for (const [nodeId, keyframe] of pairs) {
    const node = byId.get(nodeId);
    if (!node) continue;
    const card = el(doc, "div", "path-card");
    card.dataset.nodeId = nodeId;
    if (keyframe && keyframeUrl.has(keyframe)) {
      const img = el(doc, "img");
      img.src = keyframeUrl.get(keyframe)!;
      img.alt = node.text;
      card.appendChild(img);
    } else if (keyframe) {
      card.appendChild(el(doc, "div", "badge", `keyframe ${keyframe}`));
    } else {
      // an event whose best alignment fell below the gate renders an explicit placeholder
      card.appendChild(el(doc, "div", "keyframe-placeholder", "no keyframe"));
    }
    card.appendChild(el(doc, "div", undefined, `Stage ${node.stage}`));
    card.appendChild(el(doc, "div", "node-text", node.text));
    strip.appendChild(card);
  }
  container.appendChild(strip);
}

export function renderEstimates(doc: Document, container: HTMLElement, estimates: WorldLineEstimate[]): void {
  container.innerHTML = "";
  if (!estimates.length) return;
  container.appendChild(el(doc, "h2", undefined, "World lines (model-estimated)"));
  estimates.forEach((estimate, i) => {
    const row = el(doc, "div", "estimate-row");
    row.appendChild(el(doc, "span", undefined, `line ${i}`));
    const bar = el(doc, "div", "bar");
    const fill = el(doc, "div", "fill");
    fill.style.width = `${(estimate.probability * 100).toFixed(0)}%`;
    bar.appendChild(fill);
    row.appendChild(bar);
    row.appendChild(
      el(doc, "span", undefined, `p=${estimate.probability.toFixed(2)} sev=${estimate.loss_severity}`),
    );
    container.appendChild(row);
  });
}

export function renderGraph(doc: Document, container: HTMLElement, graph: GraphPayload): void {
  container.innerHTML = "";
  if (!graph.nodes.length) return;
  container.appendChild(el(doc, "h2", undefined, "Knowledge graph"));
  const chips = el(doc, "div", "graph-nodes");
  const labels = new Map<string, string>();
  for (const node of graph.nodes) {
    labels.set(node.id, node.label);
    chips.appendChild(el(doc, "span", `graph-chip ${node.category}`, `${node.label} (${node.category})`));
  }
  container.appendChild(chips);
  const edges = el(doc, "div", "graph-edges");
  for (const edge of graph.edges) {
    edges.appendChild(
      el(doc, "div", "graph-edge",
         `${labels.get(edge.from) ?? edge.from} → ${labels.get(edge.to) ?? edge.to} (${edge.relation})`),
    );
  }
  container.appendChild(edges);
}
