/**
 * Engine API calls made by the console: acknowledgments and timeline reads
 * (the polling fallback when the live stream is unavailable).
 */

import { ConsoleStore } from "./store.js";
import { ActionId, DecisionRecord, isDecisionRecord } from "./types.js";

export interface EngineClientOptions {
  baseUrl: string;
  analyst: string;
  fetchFn?: typeof fetch;
  token?: string;
}

export class EngineClient {
  constructor(private readonly options: EngineClientOptions) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.options.token) headers["x-auth-token"] = this.options.token;
    return headers;
  }

  /**
   * POST the analyst's chosen action for one decision. Idempotent per
   * decision id: repeat clicks while a request is in flight (or after
   * success) do nothing. A rejected ack returns the card to pending with an
   * error badge.
   */
  async acknowledge(store: ConsoleStore, decisionId: string, action: ActionId): Promise<boolean> {
    const fetchFn = this.options.fetchFn ?? fetch;
    if (!store.beginAck(decisionId)) return false;
    try {
      const response = await fetchFn(
        `${this.options.baseUrl}/decisions/${encodeURIComponent(decisionId)}/ack`,
        {
          method: "POST",
          headers: this.headers(),
          body: JSON.stringify({ action, analyst: this.options.analyst }),
        },
      );
      if (!response.ok) {
        store.failAck(decisionId, `engine rejected ack (${response.status})`);
        return false;
      }
      store.confirmAck(decisionId, action, this.options.analyst);
      return true;
    } catch (err) {
      store.failAck(decisionId, `ack failed: ${String(err)}`);
      return false;
    }
  }

  async decision(decisionId: string): Promise<DecisionRecord | null> {
    const fetchFn = this.options.fetchFn ?? fetch;
    const response = await fetchFn(
      `${this.options.baseUrl}/decisions/${encodeURIComponent(decisionId)}`,
      { headers: this.headers() },
    );
    if (!response.ok) return null;
    const doc: unknown = await response.json();
    return isDecisionRecord(doc) ? doc : null;
  }

  /** Poll fallback: fetch a bounded batch of decisions after the given id. */
  async pollDecisions(after: string | undefined, limit = 100): Promise<DecisionRecord[]> {
    const fetchFn = this.options.fetchFn ?? fetch;
    const params = new URLSearchParams({ limit: String(limit), idle_timeout: "0.2" });
    if (after) params.set("after", after);
    const response = await fetchFn(`${this.options.baseUrl}/decisions/stream?${params}`, {
      headers: this.headers(),
    });
    if (!response.ok) return [];
    const text = await response.text();
    const records: DecisionRecord[] = [];
    for (const frame of text.split("\n\n")) {
      const dataLine = frame.split("\n").find((l) => l.startsWith("data:"));
      if (!dataLine) continue;
      try {
        const parsed: unknown = JSON.parse(dataLine.slice(5).trim());
        if (isDecisionRecord(parsed)) records.push(parsed);
      } catch {
        // skip malformed frames; the live client counts these
      }
    }
    return records;
  }
}
