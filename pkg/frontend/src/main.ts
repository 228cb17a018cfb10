import { ApiClient, ApiError } from "./api.ts";
import {
  renderCandidates,
  renderEstimates,
  renderFinalPath,
  renderGraph,
  renderMetrics,
  renderTree,
} from "./render.ts";
import type { SessionSnapshot } from "./types.ts";
import { buildSessionView, validateSnapshot } from "./view.ts";

const POLL_INTERVAL_MS = 2000;

export class App {
  readonly api: ApiClient;
  private doc: Document;
  private sessionId: string | null = null;
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(doc: Document, api: ApiClient) {
    this.doc = doc;
    this.api = api;
  }

  bind(): void {
    this.byId("create-button").addEventListener("click", () => void this.handleCreate());
    this.byId("expand-button").addEventListener("click", () => void this.handleExpand());
    this.byId("finalize-button").addEventListener("click", () => void this.handleFinalize());
    this.byId("refresh-button").addEventListener("click", () => void this.refresh());
  }

  private byId(id: string): HTMLElement {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node;
  }

  private banner(kind: "error" | "conflict" | null, message = ""): void {
    const banner = this.byId("banner");
    if (!kind) {
      banner.className = "banner hidden";
      banner.textContent = "";
      return;
    }
    banner.className = `banner ${kind}-banner`;
    banner.textContent = message;
  }

  async handleCreate(): Promise<void> {
    const initial = (this.byId("initial-text") as HTMLTextAreaElement).value.trim();
    const configText = (this.byId("config-json") as HTMLTextAreaElement).value.trim();
    let config: Record<string, unknown> | undefined;
    if (configText) {
      try {
        config = JSON.parse(configText);
      } catch {
        this.banner("error", "config overrides are not valid JSON");
        return;
      }
    }
    try {
      const snapshot = await this.api.createSession(initial, config);
      this.sessionId = snapshot.session_id;
      this.byId("create-panel").classList.add("hidden");
      this.byId("session-panel").classList.remove("hidden");
      this.byId("session-label").textContent = snapshot.session_id;
      this.render(snapshot);
      this.banner(null);
    } catch (error) {
      this.showError(error);
    }
  }

  async handleExpand(): Promise<void> {
    if (!this.sessionId) return;
    try {
      await this.api.expand(this.sessionId);
      this.banner(null);
      await this.refresh();
    } catch (error) {
      await this.handleMutationError(error);
    }
  }

  async handleSelect(nodeId: string): Promise<void> {
    if (!this.sessionId) return;
    try {
      // no optimistic UI: re-render only from the server's snapshot
      const snapshot = await this.api.select(this.sessionId, nodeId);
      this.banner(null);
      this.render(snapshot);
      await this.loadFinalArtifacts(snapshot);
    } catch (error) {
      await this.handleMutationError(error);
    }
  }

  async handleFinalize(): Promise<void> {
    if (!this.sessionId) return;
    try {
      const snapshot = await this.api.finalize(this.sessionId);
      this.banner(null);
      this.render(snapshot);
      await this.loadFinalArtifacts(snapshot);
    } catch (error) {
      await this.handleMutationError(error);
    }
  }

  private async handleMutationError(error: unknown): Promise<void> {
    if (error instanceof ApiError && error.status === 409) {
      this.banner("conflict", `state changed elsewhere: ${error.message}`);
      await this.refresh();
      return;
    }
    this.showError(error);
  }

  private showError(error: unknown): void {
    const message = error instanceof Error ? error.message : String(error);
    this.banner("error", message);
  }

  async refresh(): Promise<SessionSnapshot | null> {
    if (!this.sessionId) return null;
    try {
      const snapshot = await this.api.getSession(this.sessionId);
      this.render(snapshot);
      await this.loadFinalArtifacts(snapshot);
      return snapshot;
    } catch (error) {
      this.showError(error);
      return null;
    }
  }

  render(data: unknown): void {
    let snapshot: SessionSnapshot;
    try {
      snapshot = validateSnapshot(data);
    } catch (error) {
      // schema mismatch: error banner only, never a partial render
      this.showError(error);
      return;
    }
    const view = buildSessionView(snapshot);
    this.byId("state-badge").textContent = view.state;
    renderTree(this.doc, this.byId("tree-view"), view);
    renderMetrics(this.doc, this.byId("metrics-view"), view);
    renderCandidates(this.doc, this.byId("candidates-view"), view, (nodeId) => void this.handleSelect(nodeId));
    this.byId("candidates-heading").classList.toggle("hidden", view.candidates.length === 0);
    renderFinalPath(this.doc, this.byId("final-view"), snapshot, null);
    (this.byId("expand-button") as HTMLButtonElement).disabled =
      view.finalized || view.state === "calibrating";
    (this.byId("finalize-button") as HTMLButtonElement).disabled = view.finalized;
    this.managePolling(view.state);
  }

  private async loadFinalArtifacts(data: unknown): Promise<void> {
    const snapshot = data as SessionSnapshot;
    if (!this.sessionId || snapshot.state !== "finalized") return;
    try {
      const visualization = await this.api.visualization(this.sessionId);
      renderFinalPath(this.doc, this.byId("final-view"), snapshot, visualization);
    } catch {
      // keyframe strip stays in its snapshot-only form
    }
    try {
      const { estimates } = await this.api.estimates(this.sessionId);
      renderEstimates(this.doc, this.byId("estimates-view"), estimates);
    } catch {
      // estimates are optional decoration
    }
    try {
      const graph = await this.api.graph(this.sessionId);
      renderGraph(this.doc, this.byId("graph-view"), graph);
    } catch {
      // graph view is optional decoration
    }
  }

  private managePolling(state: string): void {
    const shouldPoll = state === "calibrating";
    if (shouldPoll && this.pollTimer === null) {
      this.pollTimer = setInterval(() => void this.refresh(), POLL_INTERVAL_MS);
    } else if (!shouldPoll && this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }
}

export function initApp(baseUrl = "", doc: Document = document): App {
  const app = new App(doc, new ApiClient(baseUrl));
  app.bind();
  return app;
}

declare global {
  interface Window {
    __WLDS_NO_AUTOSTART__?: boolean;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined" && !window.__WLDS_NO_AUTOSTART__) {
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", () => initApp(""));
  } else {
    initApp("");
  }
}
