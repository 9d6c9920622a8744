import http from "node:http";
import { AddressInfo } from "node:net";

import { ActionId, DecisionRecord } from "../src/types.js";

export function makeRecord(i: number, user = "u1", action: ActionId = "a2"): DecisionRecord {
  const confidence = new Array(11).fill(0.05);
  confidence[5] = 0.5;
  return {
    type: "decision",
    decision_id: `d${String(i).padStart(8, "0")}`,
    user,
    time: 1000 + i,
    stage_estimate: 5,
    confidence,
    action,
    trigger_event: { ts: 1000 + i, user, event: "compile" },
  };
}

export function frame(record: DecisionRecord): string {
  return `id: ${record.decision_id}\ndata: ${JSON.stringify(record)}\n\n`;
}

export interface MockStreamServer {
  url: string;
  requests: string[];
  close: () => Promise<void>;
}

/**
 * SSE endpoint serving `records`, cutting the socket after `dropAfter`
 * frames on the first connection. Reconnections honor ?after= but re-send
 * `overlap` already-delivered records first, to exercise client dedup. A
 * malformed frame is injected once when `malformedAt` is reached.
 */
export function startMockStream(
  records: DecisionRecord[],
  options: { dropAfter?: number; overlap?: number; malformedAt?: number } = {},
): Promise<MockStreamServer> {
  const requests: string[] = [];
  let firstConnection = true;
  const server = http.createServer((req, res) => {
    const url = new URL(req.url ?? "/", "http://localhost");
    requests.push(req.url ?? "/");
    if (url.pathname !== "/decisions/stream") {
      res.writeHead(404).end();
      return;
    }
    res.writeHead(200, {
      "content-type": "text/event-stream",
      "cache-control": "no-cache",
    });
    const after = url.searchParams.get("after");
    let start = after ? records.findIndex((r) => r.decision_id === after) + 1 : 0;
    if (start > 0 && options.overlap) {
      start = Math.max(0, start - options.overlap); // deliberate re-delivery
    }
    const drop = firstConnection ? options.dropAfter : undefined;
    firstConnection = false;
    void (async () => {
      let sent = 0;
      for (let i = start; i < records.length; i++) {
        if (options.malformedAt !== undefined && i === options.malformedAt && drop !== undefined) {
          res.write("id: junk\ndata: {not json\n\n");
        }
        res.write(frame(records[i]!));
        sent += 1;
        // let the frame flush before possibly cutting the socket
        await new Promise((r) => setTimeout(r, 1));
        if (drop !== undefined && sent >= drop) {
          res.destroy(); // simulate a dropped connection mid-stream
          return;
        }
      }
      res.end();
    })();
  });
  return new Promise((resolve) => {
    server.listen(0, "127.0.0.1", () => {
      const { port } = server.address() as AddressInfo;
      resolve({
        url: `http://127.0.0.1:${port}/decisions/stream`,
        requests,
        close: () => new Promise((done) => server.close(() => done())),
      });
    });
  });
}

export async function waitFor(
  predicate: () => boolean | Promise<boolean>,
  timeoutMs = 10_000,
  intervalMs = 20,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await predicate()) return;
    await new Promise((r) => setTimeout(r, intervalMs));
  }
  throw new Error("timed out waiting for condition");
}
