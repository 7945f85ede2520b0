/**
 * End-to-end browser-flow test against the real HTTP server: one
 * participant completes the 20+30 study (with a mid-session "reload" and a
 * duplicate submission), one annotator completes a 20-item task with 10
 * probes and sees the exact score the recurrence predicts, and no payload
 * the client ever received contains ground truth.
 *
 * The scoring oracle reads the server's append-only event log from disk —
 * ground truth legitimately lives server-side; the client never sees it.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationRunner } from "../src/annotate.js";
import { ApiClient } from "../src/api.js";
import { decodePpm } from "../src/ppm.js";
import { SessionRunner } from "../src/session.js";

const PORT = 8742;
const BASE = `http://127.0.0.1:${PORT}`;

let dataDir: string;
let server: ChildProcess | null = null;
const api = new ApiClient(BASE);

function cli(...args: string[]): void {
  const result = spawnSync("python3", ["-m", "cytoprobe.cli", ...args], {
    encoding: "utf-8",
  });
  if (result.status !== 0) {
    throw new Error(`cli ${args[0]} failed: ${result.stderr || result.stdout}`);
  }
}

async function waitForServer(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const r = await fetch(`${BASE}/health`);
      if (r.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("server did not come up");
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
}

beforeAll(async () => {
  dataDir = mkdtempSync(join(tmpdir(), "cytoprobe-e2e-"));
  // corpus: 35 phantoms + 21 cgan + 21 dm via the admin CLI (untrained
  // desk-scale models; pixel quality is irrelevant to the protocol)
  cli("phantoms", "--per-class", "5", "--seed", "1", "--out", dataDir);
  const cfg = join(dataDir, "train.json");
  writeFileSync(cfg, JSON.stringify({ hidden: [8, 8, 8, 8], noise_dim: 4, T: 10, seed: 5 }));
  const ganCkpt = join(dataDir, "gan-ckpt.json");
  const dmCkpt = join(dataDir, "dm-ckpt.json");
  cli("train", "gan", "--data", dataDir, "--out", ganCkpt, "--config", cfg, "--epochs", "0");
  cli("train", "dm", "--data", dataDir, "--out", dmCkpt, "--config", cfg, "--epochs", "0");
  cli("synthesize", "--model", ganCkpt, "--per-class", "3", "--seed", "2", "--out", dataDir, "--append");
  cli("synthesize", "--model", dmCkpt, "--per-class", "3", "--seed", "3", "--out", dataDir, "--append");

  server = spawn(
    "python3",
    ["-m", "cytoprobe.cli", "serve", "--data", dataDir, "--host", "127.0.0.1", "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForServer();
});

afterAll(() => {
  server?.kill();
});

describe("participant flow", () => {
  it("completes the 20-pair + 30-single study with resume and dedup", async () => {
    const { study_id } = await api.createStudy(7);
    const { session_id } = await api.startSession(study_id, "e2e-participant", "other");

    const seen: string[] = [];
    const kinds: Record<string, number> = { pair: 0, single: 0 };

    // first "page load": answer three trials, then abandon the runner
    const firstRunner = new SessionRunner(api, session_id);
    let firstAnswer: { trialId: string; token: string; ack: unknown } | null = null;
    for (let i = 0; i < 3; i++) {
      const next = await api.nextTrial(session_id);
      expect(next.done).toBe(false);
      const trial = next.trial!;
      seen.push(trial.trial_id);
      kinds[trial.kind] += 1;
      // stimuli decode as true 64x64 PPM content
      const url = trial.kind === "pair" ? trial.images.left : trial.image;
      const image = decodePpm(await api.imageBytes(url));
      expect(image.width).toBe(64);
      expect(image.height).toBe(64);
      const answer = trial.kind === "pair" ? "left" : "real";
      const ack = await firstRunner.submit(trial.trial_id, answer);
      expect(ack.answered).toBe(i + 1);
      if (i === 0) {
        firstAnswer = {
          trialId: trial.trial_id,
          token: firstRunner.tokenFor(trial.trial_id),
          ack,
        };
      }
    }

    // double-click simulation: replaying the same token returns the original
    // acknowledgement and records nothing new
    const dup = await api.submitResponse(session_id, firstAnswer!.trialId, "left", firstAnswer!.token);
    expect(dup).toEqual(firstAnswer!.ack);
    // and without a token the server rejects the duplicate outright
    await expect(
      api.submitResponse(session_id, firstAnswer!.trialId, "left", ""),
    ).rejects.toMatchObject({ status: 409 });

    // "reload": a fresh runner resumes from server state at trial 4
    const resumed = await api.nextTrial(session_id);
    expect(resumed.progress.answered).toBe(3);
    const runner = new SessionRunner(api, session_id);
    const progress = await runner.run({
      present: async (trial) => {
        seen.push(trial.trial_id);
        kinds[trial.kind] += 1;
        return trial.kind === "pair" ? "right" : "fake";
      },
    });

    expect(progress.state).toBe("completed");
    expect(progress.answered).toBe(50);
    expect(kinds.pair).toBe(20);
    expect(kinds.single).toBe(30);
    expect(new Set(seen).size).toBe(50);

    const done = await api.nextTrial(session_id);
    expect(done.done).toBe(true);
  });
});

describe("annotator flow", () => {
  it("scores a 20-item task with 10 probes exactly per the recurrence", async () => {
    const manifest = await api.issueTask("e2e-annotator", 0.5, 10);
    expect(manifest.items.length).toBe(20);
    expect(manifest.items.every((item) => item.id.startsWith("item-"))).toBe(true);

    // ground truth from the server-side event log (never from a payload)
    const events = readFileSync(join(dataDir, "events.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    const issued = events.find(
      (e) => e.kind === "task_issued" && e.payload.plan.task_id === manifest.task_id,
    );
    expect(issued).toBeDefined();
    const planItems: Array<{ item_id: string; is_probe: boolean; true_class: string | null }> =
      issued.payload.plan.items;
    expect(planItems.filter((p) => p.is_probe).length).toBe(10);

    // every item gets labeled "mast"; expected score from the recurrence:
    // +100 per correct probe plus min(streak*10, 50) bonus, miss resets
    const guess = "mast";
    let expectedPoints = 0;
    let streak = 0;
    for (const item of planItems) {
      if (!item.is_probe) continue;
      if (item.true_class === guess) {
        expectedPoints += 100 + Math.min(streak * 10, 50);
        streak += 1;
      } else {
        streak = 0;
      }
    }

    const updates: number[] = [];
    const runner = new AnnotationRunner(api, manifest, 10);
    const finalAck = await runner.run({
      present: async (item) => {
        const image = decodePpm(await api.imageBytes(item.image));
        expect(image.width).toBe(64);
        return guess;
      },
      scoreUpdated: (ack) => updates.push(ack.high_score),
    });

    expect(updates.length).toBe(2); // one live panel update per batch
    expect(finalAck.high_score).toBe(expectedPoints);
    expect(finalAck.streak).toBe(streak);

    const score = await api.annotatorScore("e2e-annotator");
    expect(score.high_score).toBe(expectedPoints);
    expect(score.probes_seen).toBe(10);

    const board = await api.leaderboard();
    expect(board.some((row) => row.annotator === "e2e-annotator")).toBe(true);
  });

  it("a fully correct annotator earns the exact streak-bonus total", async () => {
    const manifest = await api.issueTask("e2e-perfect", 0.5, 10);
    const events = readFileSync(join(dataDir, "events.jsonl"), "utf-8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    const issued = events.find(
      (e) => e.kind === "task_issued" && e.payload.plan.task_id === manifest.task_id,
    );
    // the test (not the client) may read server-side truth to script answers
    const truth = new Map<string, string>();
    for (const item of issued.payload.plan.items) {
      if (item.is_probe) truth.set(item.item_id, item.true_class);
    }
    expect(truth.size).toBe(10);

    const runner = new AnnotationRunner(api, manifest, 20);
    const ack = await runner.run({
      present: async (item) => truth.get(item.id) ?? manifest.classes[0],
    });
    // 10 consecutive correct probes: 100+110+120+130+140+150*5 = 1350
    expect(ack.points_delta).toBe(1350);
    expect(ack.streak).toBe(10);
    expect(ack.reliability).toBeGreaterThan(0.65); // Wilson bound at 10/10
  });
});

describe("zero knowledge", () => {
  it("raw payload bodies never mention provenance or probe truth", async () => {
    const { study_id } = await api.createStudy(99);
    const { session_id } = await api.startSession(study_id, "zk-check");
    const raw: string[] = [];
    for (let i = 0; i < 5; i++) {
      const r = await fetch(`${BASE}/sessions/${session_id}/next`);
      raw.push(await r.text());
      const body = JSON.parse(raw[raw.length - 1]);
      await fetch(`${BASE}/sessions/${session_id}/responses`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          trial_id: body.trial.trial_id,
          answer: body.trial.kind === "pair" ? "left" : "real",
        }),
      });
    }
    const manifest = await fetch(`${BASE}/tasks`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator: "zk-ann", probe_fraction: 0.5, real_count: 6 }),
    });
    raw.push(await manifest.text());
    for (const text of raw) {
      for (const needle of ["cgan", "phantom", "truth", "fake_side", "is_probe", "true_class", "provenance", "generator"]) {
        expect(text, `payload leaked ${needle}: ${text}`).not.toContain(needle);
      }
    }
  });
});
