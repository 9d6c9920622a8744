/**
 * Console state: decision cards in arrival order plus per-user timelines.
 *
 * The store never mutates engine state; it only records decisions as they
 * arrive and tracks acknowledgment transitions (pending -> acking -> acked,
 * with failed acks dropping back to pending under an error badge). Cards are
 * deduplicated by decision id, so replays after a reconnect are harmless.
 */

import {
  ActionId,
  DecisionCard,
  DecisionRecord,
  TimelineEntry,
  confidenceIsNormalized,
} from "./types.js";

export class ConsoleStore {
  readonly cards: DecisionCard[] = [];
  readonly timelines = new Map<string, TimelineEntry[]>();
  duplicateCount = 0;
  rejectedCount = 0;
  staleSince: number | null = null;

  private readonly byId = new Map<string, DecisionCard>();

  /** Returns true when the record produced a new card. */
  addDecision(record: DecisionRecord): boolean {
    if (this.byId.has(record.decision_id)) {
      this.duplicateCount += 1;
      return false;
    }
    if (!confidenceIsNormalized(record.confidence)) {
      this.rejectedCount += 1;
      console.warn(
        `stagewatch console: decision ${record.decision_id} has an unnormalized confidence vector`,
      );
      return false;
    }
    const card: DecisionCard = {
      record,
      ackState: record.ack ? "acked" : "pending",
      ackAction: record.ack?.action,
      ackAnalyst: record.ack?.analyst,
    };
    this.byId.set(record.decision_id, card);
    this.cards.push(card);
    const lane = this.timelines.get(record.user) ?? [];
    lane.push({
      time: record.time,
      stage: record.stage_estimate,
      confidence: record.confidence,
      action: record.action,
      decisionId: record.decision_id,
    });
    this.timelines.set(record.user, lane);
    return true;
  }

  card(decisionId: string): DecisionCard | undefined {
    return this.byId.get(decisionId);
  }

  /** Marks the card in-flight; false when a POST is already out or done. */
  beginAck(decisionId: string): boolean {
    const card = this.byId.get(decisionId);
    if (!card || card.ackState !== "pending") return false;
    card.ackState = "acking";
    card.errorBadge = undefined;
    return true;
  }

  confirmAck(decisionId: string, action: ActionId, analyst: string): void {
    const card = this.byId.get(decisionId);
    if (!card) return;
    card.ackState = "acked";
    card.ackAction = action;
    card.ackAnalyst = analyst;
    card.errorBadge = undefined;
  }

  failAck(decisionId: string, reason: string): void {
    const card = this.byId.get(decisionId);
    if (!card) return;
    card.ackState = "pending";
    card.errorBadge = reason;
  }

  markStale(now = Date.now()): void {
    if (this.staleSince === null) this.staleSince = now;
  }

  markLive(): void {
    this.staleSince = null;
  }

  users(): string[] {
    return [...this.timelines.keys()].sort();
  }
}
