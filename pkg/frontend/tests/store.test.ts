import { describe, expect, it } from "vitest";

import { ConsoleStore } from "../src/store.js";
import { confidenceIsNormalized } from "../src/types.js";
import { makeRecord } from "./helpers.js";

describe("ConsoleStore", () => {
  it("keeps one card per decision id", () => {
    const store = new ConsoleStore();
    const record = makeRecord(1);
    expect(store.addDecision(record)).toBe(true);
    expect(store.addDecision(record)).toBe(false);
    expect(store.cards).toHaveLength(1);
    expect(store.duplicateCount).toBe(1);
  });

  it("builds per-user timeline lanes in decision order", () => {
    const store = new ConsoleStore();
    store.addDecision(makeRecord(1, "alice"));
    store.addDecision(makeRecord(2, "bob"));
    store.addDecision(makeRecord(3, "alice"));
    expect(store.users()).toEqual(["alice", "bob"]);
    const lane = store.timelines.get("alice")!;
    expect(lane.map((e) => e.decisionId)).toEqual(["d00000001", "d00000003"]);
    expect(lane.every((e) => confidenceIsNormalized(e.confidence))).toBe(true);
  });

  it("rejects unnormalized confidence vectors", () => {
    const store = new ConsoleStore();
    const record = makeRecord(1);
    record.confidence = new Array(11).fill(0.2); // sums to 2.2
    expect(store.addDecision(record)).toBe(false);
    expect(store.rejectedCount).toBe(1);
  });

  it("ack transitions run pending -> acking -> acked only", () => {
    const store = new ConsoleStore();
    store.addDecision(makeRecord(1));
    expect(store.beginAck("d00000001")).toBe(true);
    expect(store.beginAck("d00000001")).toBe(false); // double-click: one POST
    store.confirmAck("d00000001", "a2", "alice");
    expect(store.card("d00000001")!.ackState).toBe("acked");
    expect(store.beginAck("d00000001")).toBe(false); // acked is final
  });

  it("failed acks return to pending with an error badge", () => {
    const store = new ConsoleStore();
    store.addDecision(makeRecord(1));
    store.beginAck("d00000001");
    store.failAck("d00000001", "engine rejected ack (503)");
    const card = store.card("d00000001")!;
    expect(card.ackState).toBe("pending");
    expect(card.errorBadge).toContain("503");
    expect(store.beginAck("d00000001")).toBe(true); // retry allowed
  });

  it("tracks stream staleness", () => {
    const store = new ConsoleStore();
    expect(store.staleSince).toBeNull();
    store.markStale(123);
    expect(store.staleSince).toBe(123);
    store.markStale(456);
    expect(store.staleSince).toBe(123); // first stale moment wins
    store.markLive();
    expect(store.staleSince).toBeNull();
  });
});
