/**
 * Console entry point: wire the stream client, store, and renderer together.
 * The engine base URL and analyst name come from query parameters, e.g.
 *   console.html?engine=http://127.0.0.1:8321&analyst=alice
 * If the live stream stays stale, a 5 s polling fallback keeps cards coming.
 */

import { EngineClient } from "./api.js";
import { renderConsole } from "./render.js";
import { ConsoleStore } from "./store.js";
import { DecisionStreamClient } from "./stream.js";

const POLL_FALLBACK_MS = 5000;

export function startConsole(root: HTMLElement): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get("engine") ?? "http://127.0.0.1:8321";
  const analyst = params.get("analyst") ?? "analyst";
  const token = params.get("token") ?? undefined;

  const store = new ConsoleStore();
  const client = new EngineClient({ baseUrl, analyst, token });
  const repaint = () => renderConsole(root, store, client);

  const stream = new DecisionStreamClient(
    {
      url: `${baseUrl}/decisions/stream`,
      headers: token ? { "x-auth-token": token } : undefined,
    },
    {
      onRecord: (record) => {
        store.addDecision(record);
        repaint();
      },
      onStatus: (status) => {
        if (status === "live") store.markLive();
        if (status === "stale") store.markStale();
        repaint();
      },
    },
  );
  stream.start();

  window.setInterval(() => {
    if (store.staleSince === null) return;
    void client.pollDecisions(stream.lastEventId).then((records) => {
      let changed = false;
      for (const record of records) {
        if (store.addDecision(record)) {
          stream.lastEventId = record.decision_id;
          changed = true;
        }
      }
      if (changed) repaint();
    });
  }, POLL_FALLBACK_MS);

  repaint();
}

declare global {
  interface Window {
    stagewatchConsole?: typeof startConsole;
  }
}

if (typeof window !== "undefined") {
  window.stagewatchConsole = startConsole;
  const root = document.getElementById("console-root");
  if (root) startConsole(root);
}
