/**
 * Thin DOM layer: paints the store into user lanes and decision cards.
 * All state lives in ConsoleStore; this module only reflects it.
 */

import { EngineClient } from "./api.js";
import { ConsoleStore } from "./store.js";
import {
  ACTIONS,
  ACTION_LABELS,
  DecisionCard,
  STAGE_NAMES,
  STAGE_PALETTE,
} from "./types.js";

export function renderConsole(
  root: HTMLElement,
  store: ConsoleStore,
  client: EngineClient,
): void {
  root.textContent = "";
  root.appendChild(renderStatusBar(store));

  const lanes = document.createElement("div");
  lanes.className = "lanes";
  for (const user of store.users()) {
    lanes.appendChild(renderLane(user, store));
  }
  root.appendChild(lanes);

  const cards = document.createElement("div");
  cards.className = "cards";
  for (const card of store.cards) {
    cards.appendChild(renderCard(card, store, client));
  }
  root.appendChild(cards);
}

function renderStatusBar(store: ConsoleStore): HTMLElement {
  const bar = document.createElement("div");
  bar.className = "status-bar";
  if (store.staleSince !== null) {
    bar.classList.add("stale");
    const ago = Math.round((Date.now() - store.staleSince) / 1000);
    bar.textContent = `stream stale for ${ago}s - reconnecting`;
  } else {
    bar.textContent = `live - ${store.cards.length} decisions`;
  }
  return bar;
}

function renderLane(user: string, store: ConsoleStore): HTMLElement {
  const lane = document.createElement("div");
  lane.className = "lane";
  const label = document.createElement("span");
  label.className = "lane-user";
  label.textContent = user;
  lane.appendChild(label);
  for (const entry of store.timelines.get(user) ?? []) {
    const dot = document.createElement("span");
    dot.className = "lane-dot";
    dot.style.backgroundColor = STAGE_PALETTE[entry.stage] ?? "#999";
    dot.title = `t=${entry.time} ${STAGE_NAMES[entry.stage]} -> ${ACTION_LABELS[entry.action]}`;
    lane.appendChild(dot);
  }
  return lane;
}

function renderCard(card: DecisionCard, store: ConsoleStore, client: EngineClient): HTMLElement {
  const el = document.createElement("div");
  el.className = `card ack-${card.ackState}`;
  el.dataset.decisionId = card.record.decision_id;

  const stage = card.record.stage_estimate;
  const head = document.createElement("div");
  head.className = "card-head";
  head.style.borderLeft = `6px solid ${STAGE_PALETTE[stage] ?? "#999"}`;
  head.textContent =
    `${card.record.user} - ${STAGE_NAMES[stage]} ` +
    `(${Math.round((card.record.confidence[stage] ?? 0) * 100)}%) - ` +
    `recommended: ${ACTION_LABELS[card.record.action]}`;
  el.appendChild(head);

  if (card.errorBadge) {
    const badge = document.createElement("span");
    badge.className = "error-badge";
    badge.textContent = card.errorBadge;
    el.appendChild(badge);
  }

  const buttons = document.createElement("div");
  buttons.className = "card-actions";
  for (const action of ACTIONS) {
    const button = document.createElement("button");
    button.textContent = ACTION_LABELS[action];
    button.disabled = card.ackState !== "pending";
    button.addEventListener("click", () => {
      void client.acknowledge(store, card.record.decision_id, action);
    });
    buttons.appendChild(button);
  }
  if (card.ackState === "acked" && card.ackAction) {
    const ack = document.createElement("span");
    ack.className = "acked-by";
    const overridden = card.ackAction !== card.record.action ? " (override)" : "";
    ack.textContent = `acked ${ACTION_LABELS[card.ackAction]}${overridden} by ${card.ackAnalyst}`;
    buttons.appendChild(ack);
  }
  el.appendChild(buttons);
  return el;
}
