export type ActionId = "a1" | "a2" | "a3";

export const ACTIONS: ActionId[] = ["a1", "a2", "a3"];

export const ACTION_LABELS: Record<ActionId, string> = {
  a1: "no-op",
  a2: "monitor",
  a3: "stop",
};

export const STAGE_NAMES = [
  "benign",
  "discovery",
  "initial access",
  "gathering",
  "command & control",
  "preparation",
  "persistence",
  "lateral movement",
  "defense evasion",
  "collection",
  "exfiltration",
] as const;

// fixed 11-stage palette, benign green through exfiltration dark red
export const STAGE_PALETTE = [
  "#2e7d32",
  "#558b2f",
  "#9e9d24",
  "#f9a825",
  "#ff8f00",
  "#ef6c00",
  "#e65100",
  "#d84315",
  "#c62828",
  "#ad1457",
  "#6a1b9a",
] as const;

/** One decision record as emitted on the engine's SSE stream. */
export interface DecisionRecord {
  type: "decision";
  decision_id: string;
  user: string;
  time: number;
  stage_estimate: number;
  confidence: number[];
  action: ActionId;
  trigger_event: { ts: number; user: string; event: string; monitor?: string };
  converged?: boolean;
  ack?: { action: ActionId; analyst: string; override: boolean } | null;
}

export type AckState = "pending" | "acking" | "acked";

export interface DecisionCard {
  record: DecisionRecord;
  ackState: AckState;
  ackAction?: ActionId;
  ackAnalyst?: string;
  errorBadge?: string;
}

export interface TimelineEntry {
  time: number;
  stage: number;
  confidence: number[];
  action: ActionId;
  decisionId: string;
}

export function isDecisionRecord(value: unknown): value is DecisionRecord {
  if (typeof value !== "object" || value === null) return false;
  const rec = value as Record<string, unknown>;
  return (
    rec.type === "decision" &&
    typeof rec.decision_id === "string" &&
    typeof rec.user === "string" &&
    typeof rec.time === "number" &&
    typeof rec.stage_estimate === "number" &&
    Array.isArray(rec.confidence) &&
    rec.confidence.length === 11 &&
    (rec.action === "a1" || rec.action === "a2" || rec.action === "a3")
  );
}

/** Display tolerance: a confidence vector must sum to 1 within this. */
export const CONFIDENCE_TOLERANCE = 1e-3;

export function confidenceIsNormalized(confidence: number[]): boolean {
  const total = confidence.reduce((acc, x) => acc + x, 0);
  return Math.abs(total - 1.0) <= CONFIDENCE_TOLERANCE;
}
