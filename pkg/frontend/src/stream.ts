/**
 * Resumable subscription to the engine's decision stream.
 *
 * Reads server-sent events over fetch (works in browsers and node), tracks
 * the last seen decision id, and on any disconnect retries with exponential
 * backoff, resuming via the `after` query parameter so nothing is duplicated
 * or lost. Malformed frames are skipped and counted, never fatal.
 */

import { DecisionRecord, isDecisionRecord } from "./types.js";

export type StreamStatus = "connecting" | "live" | "stale" | "stopped";

export interface StreamCallbacks {
  onRecord: (record: DecisionRecord) => void;
  onStatus?: (status: StreamStatus) => void;
}

export interface StreamOptions {
  /** e.g. http://127.0.0.1:8321/decisions/stream */
  url: string;
  lastEventId?: string;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
  fetchFn?: typeof fetch;
  headers?: Record<string, string>;
}

interface SseFrame {
  id?: string;
  data: string;
}

/** Incremental parser for the `id:`/`data:` frame format. */
export class SseParser {
  private buffer = "";

  push(chunk: string): SseFrame[] {
    this.buffer += chunk;
    const frames: SseFrame[] = [];
    let split;
    while ((split = this.buffer.indexOf("\n\n")) >= 0) {
      const raw = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const frame: SseFrame = { data: "" };
      const dataLines: string[] = [];
      for (const line of raw.split("\n")) {
        if (line.startsWith("id:")) frame.id = line.slice(3).trim();
        else if (line.startsWith("data:")) dataLines.push(line.slice(5).trim());
        // comment / retry lines are ignored
      }
      frame.data = dataLines.join("\n");
      if (frame.data || frame.id) frames.push(frame);
    }
    return frames;
  }
}

export class DecisionStreamClient {
  lastEventId?: string;
  malformedCount = 0;
  reconnectCount = 0;
  status: StreamStatus = "stopped";

  private stopped = true;
  private controller?: AbortController;
  private loopPromise?: Promise<void>;

  constructor(
    private readonly options: StreamOptions,
    private readonly callbacks: StreamCallbacks,
  ) {
    this.lastEventId = options.lastEventId;
  }

  start(): void {
    if (!this.stopped) return;
    this.stopped = false;
    this.loopPromise = this.runLoop();
  }

  async stop(): Promise<void> {
    this.stopped = true;
    this.controller?.abort();
    this.setStatus("stopped");
    await this.loopPromise?.catch(() => undefined);
  }

  /** Resolves when the client has observed `count` records in total. */
  async drained(): Promise<void> {
    await this.loopPromise;
  }

  private setStatus(status: StreamStatus): void {
    this.status = status;
    this.callbacks.onStatus?.(status);
  }

  private streamUrl(): string {
    if (!this.lastEventId) return this.options.url;
    const sep = this.options.url.includes("?") ? "&" : "?";
    return `${this.options.url}${sep}after=${encodeURIComponent(this.lastEventId)}`;
  }

  private async runLoop(): Promise<void> {
    const fetchFn = this.options.fetchFn ?? fetch;
    let backoff = this.options.initialBackoffMs ?? 100;
    const maxBackoff = this.options.maxBackoffMs ?? 5000;
    let first = true;
    while (!this.stopped) {
      if (!first) {
        this.reconnectCount += 1;
        await sleep(backoff);
        backoff = Math.min(backoff * 2, maxBackoff);
        if (this.stopped) return;
      }
      first = false;
      this.setStatus("connecting");
      this.controller = new AbortController();
      try {
        const headers: Record<string, string> = {
          accept: "text/event-stream",
          ...this.options.headers,
        };
        if (this.lastEventId) headers["last-event-id"] = this.lastEventId;
        const response = await fetchFn(this.streamUrl(), {
          headers,
          signal: this.controller.signal,
        });
        if (!response.ok || response.body === null) {
          throw new Error(`stream request failed: ${response.status}`);
        }
        this.setStatus("live");
        backoff = this.options.initialBackoffMs ?? 100;
        await this.consume(response.body);
        if (this.stopped) return;
        // orderly end of response: treat like a drop and resume
        this.setStatus("stale");
      } catch (err) {
        if (this.stopped) return;
        this.setStatus("stale");
      }
    }
  }

  private async consume(body: ReadableStream<Uint8Array>): Promise<void> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    while (true) {
      const { done, value } = await reader.read();
      if (done) return;
      for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
        this.handleFrame(frame);
      }
    }
  }

  private handleFrame(frame: SseFrame): void {
    let parsed: unknown;
    try {
      parsed = JSON.parse(frame.data);
    } catch {
      this.malformedCount += 1;
      console.warn(`stagewatch console: skipped malformed frame (${this.malformedCount} so far)`);
      return;
    }
    if (!isDecisionRecord(parsed)) {
      this.malformedCount += 1;
      console.warn(`stagewatch console: skipped non-decision frame (${this.malformedCount} so far)`);
      return;
    }
    if (frame.id) this.lastEventId = frame.id;
    else this.lastEventId = parsed.decision_id;
    this.callbacks.onRecord(parsed);
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
