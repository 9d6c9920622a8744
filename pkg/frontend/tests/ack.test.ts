/**
 * Acknowledgment round trip against the real engine: a decision arrives on
 * the live stream, the console overrides the recommended action, and the
 * override lands in the engine's append-only decision log.
 */

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { EngineClient } from "../src/api.js";
import { ConsoleStore } from "../src/store.js";
import { DecisionStreamClient } from "../src/stream.js";
import { waitFor } from "./helpers.js";

const PORT = 8461;
const BASE = `http://127.0.0.1:${PORT}`;
const here = path.dirname(fileURLToPath(import.meta.url));

let engine: ChildProcess | undefined;
let logPath: string;

beforeAll(async () => {
  logPath = path.join(mkdtempSync(path.join(tmpdir(), "swconsole-")), "decisions.jsonl");
  engine = spawn("python3", [path.join(here, "run_test_engine.py"), logPath, String(PORT)], {
    stdio: ["ignore", "inherit", "inherit"],
  });
  await waitFor(
    async () => {
      try {
        return (await fetch(`${BASE}/healthz`)).ok;
      } catch {
        return false;
      }
    },
    55_000,
    250,
  );
}, 60_000);

afterAll(async () => {
  engine?.kill();
  await new Promise((r) => setTimeout(r, 200));
});

describe("console against the real engine", () => {
  it(
    "streams decisions and writes an acknowledged override into the decision log",
    async () => {
      // push an attack-shaped batch so the engine emits decisions
      const events = [
        { ts: 1, user: "victim", event: "port_scan" },
        { ts: 2, user: "victim", event: "port_scan" },
        { ts: 3, user: "victim", event: "remote_exploit" },
        { ts: 4, user: "victim", event: "get_kernel_version" },
        { ts: 5, user: "victim", event: "access_mem_disk" },
        { ts: 6, user: "victim", event: "compile" },
      ];
      const accepted = await fetch(`${BASE}/events`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(events),
      });
      expect(accepted.status).toBe(202);
      const { decisions } = (await accepted.json()) as { decisions: number };
      expect(decisions).toBeGreaterThan(0);

      const store = new ConsoleStore();
      const stream = new DecisionStreamClient(
        { url: `${BASE}/decisions/stream`, initialBackoffMs: 50 },
        { onRecord: (record) => store.addDecision(record) },
      );
      stream.start();
      await waitFor(() => store.cards.length >= decisions, 15_000);
      await stream.stop();

      const card = store.cards[store.cards.length - 1]!;
      const client = new EngineClient({ baseUrl: BASE, analyst: "alice" });
      const recommended = card.record.action;
      const override = recommended === "a2" ? "a3" : "a2";
      const ok = await client.acknowledge(store, card.record.decision_id, override);
      expect(ok).toBe(true);
      expect(store.card(card.record.decision_id)!.ackState).toBe("acked");

      // engine reflects the override via the API ...
      const doc = await client.decision(card.record.decision_id);
      expect(doc?.ack?.action).toBe(override);
      expect(doc?.ack?.override).toBe(true);
      expect(doc?.ack?.analyst).toBe("alice");

      // ... and in the append-only decision log on disk
      const lines = readFileSync(logPath, "utf-8")
        .trim()
        .split("\n")
        .map((l) => JSON.parse(l) as Record<string, unknown>);
      const acks = lines.filter(
        (l) => l.type === "ack" && l.decision_id === card.record.decision_id,
      );
      expect(acks).toHaveLength(1);
      expect(acks[0]).toMatchObject({ action: override, analyst: "alice", override: true });

      // idempotency: a second click while acked is a no-op (no second POST)
      const again = await client.acknowledge(store, card.record.decision_id, recommended);
      expect(again).toBe(false);
    },
    30_000,
  );
});
