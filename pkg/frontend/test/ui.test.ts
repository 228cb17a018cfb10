// Scripted browser test: a jsdom-rendered operator console drives a real
// mock-backed server over HTTP, from session creation through the finalized
// view. delta_align is pinned to 1.0 so only verbatim caption matches bind,
// leaving exactly one path event without a keyframe.

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import net from "node:net";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { JSDOM } from "jsdom";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.ts";
import { App } from "../src/main.ts";

const here = dirname(fileURLToPath(import.meta.url));
const repoRoot = join(here, "..", "..");

const PNG_B64 =
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAIAAACQd1PeAAAADElEQVR4nGM4ceIEAAS0AlkWLoFAAAAAAElFTkSuQmCC";

const ROOT_TEXT = "A waste bin on the subway platform caught fire, emitting thick smoke.";
const STAGES = [
  [
    "Heavy smoke spreads along the platform ceiling toward the exits.",
    "Staff attack the fire with a portable extinguisher.",
    "Passengers nearby move away from the burning bin.",
  ],
  [
    "The station alarm sounds and the smoke exhaust system starts.",
    "Staff call the operations control center for support.",
    "A platform attendant fetches a second extinguisher.",
  ],
  [
    "Passengers are guided along marked exits to street level.",
    "Trains are held outside the station during the clearance.",
    "The fire is declared out after a final inspection.",
  ],
];

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const server = net.createServer();
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        const port = address.port;
        server.close(() => resolve(port));
      } else {
        reject(new Error("no port assigned"));
      }
    });
  });
}

async function waitFor(predicate: () => boolean, label: string, timeoutMs = 30_000): Promise<void> {
  const start = Date.now();
  while (!predicate()) {
    if (Date.now() - start > timeoutMs) throw new Error(`timeout waiting for ${label}`);
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
}

let serverProcess: ChildProcess;
let baseUrl: string;
let workDir: string;

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "wlds-ui-"));

  // scripted generation replies; judges/embeddings use the mock's synthesis
  const script = STAGES.flat().map((text) => ({ capability: "generate", reply: text }));
  const scriptPath = join(workDir, "script.json");
  writeFileSync(scriptPath, JSON.stringify(script));

  // keyframe captions match the root and the two first-candidate selections
  // verbatim; the stage-3 selection has no match and must render a placeholder
  const png = Buffer.from(PNG_B64, "base64");
  const captions = [ROOT_TEXT, STAGES[0][0], STAGES[1][0]];
  const manifestLines = captions.map((caption, i) => {
    writeFileSync(join(workDir, `frame${i}.png`), png);
    return JSON.stringify({ id: `frame${i}`, caption, image_path: `frame${i}.png` });
  });
  const libraryPath = join(workDir, "library.jsonl");
  writeFileSync(libraryPath, manifestLines.join("\n") + "\n");

  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  serverProcess = spawn(
    "python3",
    [
      "-m", "worldline.cli", "serve",
      "--mock", scriptPath,
      "--store", join(workDir, "store"),
      "--port", String(port),
      "--host", "127.0.0.1",
      "--kb", join(repoRoot, "data", "demo_kb.jsonl"),
      "--library", libraryPath,
      "--no-image-gen",
    ],
    { env: { ...process.env, PYTHONPATH: join(repoRoot, "src") }, stdio: ["ignore", "pipe", "pipe"] },
  );
  const stderr: string[] = [];
  serverProcess.stderr?.on("data", (chunk) => stderr.push(String(chunk)));

  const started = Date.now();
  for (;;) {
    if (Date.now() - started > 60_000) {
      throw new Error(`server did not come up:\n${stderr.join("")}`);
    }
    try {
      const response = await fetch(`${baseUrl}/sessions/probe`);
      if (response.status === 404) break;
    } catch {
      // not listening yet
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
});

afterAll(() => {
  serverProcess?.kill("SIGTERM");
});

describe("operator console against a mock-backed server", () => {
  it("steers a session from creation to the finalized view", async () => {
    const html = readFileSync(join(here, "..", "index.html"), "utf-8");
    const dom = new JSDOM(html, { url: baseUrl });
    const doc = dom.window.document;
    const app = new App(doc, new ApiClient(baseUrl));
    app.bind();

    (doc.getElementById("initial-text") as HTMLTextAreaElement).value = ROOT_TEXT;
    (doc.getElementById("config-json") as HTMLTextAreaElement).value =
      JSON.stringify({ delta_align: 1.0, rng_seed: 0 });
    (doc.getElementById("create-button") as HTMLElement).click();

    await waitFor(
      () => !doc.getElementById("session-panel")!.classList.contains("hidden"),
      "session panel",
    );
    expect(doc.getElementById("state-badge")!.textContent).toBe("created");
    expect(doc.querySelectorAll("#tree-view .node-card").length).toBe(1);

    for (let stage = 0; stage < 3; stage++) {
      (doc.getElementById("expand-button") as HTMLElement).click();
      await waitFor(
        () => doc.querySelectorAll("#candidates-view .candidate-card").length === 3,
        `stage ${stage + 1} candidates`,
      );
      const cards = doc.querySelectorAll("#candidates-view .candidate-card");
      expect(cards.length).toBe(3);
      (cards[0] as HTMLElement).click();
      await waitFor(
        () => doc.querySelectorAll("#candidates-view .candidate-card").length === 0,
        `stage ${stage + 1} selection applied`,
      );
    }

    await waitFor(
      () => doc.getElementById("state-badge")!.textContent === "finalized",
      "finalized state",
    );
    await waitFor(
      () => doc.querySelectorAll("#final-view .path-card").length === 4,
      "final path cards",
    );

    // FC/LC gauges for the committed path
    const gauges = doc.querySelectorAll("#metrics-view .gauge");
    expect(gauges.length).toBe(2);
    expect(doc.getElementById("metrics-view")!.textContent).toContain("100.0%");

    // three verbatim caption matches bind at delta_align = 1.0; the stage-3
    // event has no matching caption and generation is off -> one placeholder
    await waitFor(
      () => doc.querySelectorAll("#final-view img").length === 3,
      "keyframe thumbnails",
    );
    const placeholders = doc.querySelectorAll("#final-view .keyframe-placeholder");
    expect(placeholders.length).toBe(1);
    expect(placeholders[0].textContent).toBe("no keyframe");

    // committed world line is highlighted in the tree
    expect(doc.querySelectorAll("#tree-view .node-card.committed").length).toBe(4);

    // thumbnails come from the session media endpoint and resolve
    const firstImg = doc.querySelector("#final-view img") as HTMLImageElement;
    const media = await fetch(firstImg.src);
    expect(media.status).toBe(200);

    // reload-from-server reconstructs the same view: nothing lives only client-side
    const fresh = new JSDOM(html, { url: baseUrl });
    const freshApp = new App(fresh.window.document, new ApiClient(baseUrl));
    freshApp.bind();
    const sessionId = doc.getElementById("session-label")!.textContent!;
    (freshApp as unknown as { sessionId: string | null }).sessionId = sessionId;
    fresh.window.document.getElementById("session-panel")!.classList.remove("hidden");
    await freshApp.refresh();
    await waitFor(
      () => fresh.window.document.querySelectorAll("#final-view .path-card").length === 4,
      "reloaded final view",
    );
    expect(fresh.window.document.querySelectorAll("#final-view .keyframe-placeholder").length).toBe(1);
  });

  it("keeps server truth on conflicting operations (409 banner + refresh)", async () => {
    const html = readFileSync(join(here, "..", "index.html"), "utf-8");
    const dom = new JSDOM(html, { url: baseUrl });
    const doc = dom.window.document;
    const app = new App(doc, new ApiClient(baseUrl));
    app.bind();

    (doc.getElementById("initial-text") as HTMLTextAreaElement).value = "A cable tray ignites in a service corridor.";
    (doc.getElementById("create-button") as HTMLElement).click();
    await waitFor(
      () => !doc.getElementById("session-panel")!.classList.contains("hidden"),
      "session panel",
    );

    // selecting before any expansion is an illegal state server-side
    await app.handleSelect("n0001");
    const banner = doc.getElementById("banner")!;
    expect(banner.classList.contains("conflict-banner")).toBe(true);
    expect(banner.textContent).toContain("state changed elsewhere");
    // the view was refreshed from the server rather than mutated locally
    expect(doc.getElementById("state-badge")!.textContent).toBe("created");
  });
});
