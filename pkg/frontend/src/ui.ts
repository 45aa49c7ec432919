// DOM rendering for the transcript. View-only: all state lives in
// Transcript, all data in service payloads.

import type { ActionCard, RecordRow, TurnView } from "./turns.js";
import { sortRows } from "./turns.js";

export interface UiCallbacks {
  onDecide: (card: ActionCard, decision: "affirm" | "deny") => void;
}

const TABLE_COLUMNS: (keyof RecordRow)[] = ["signature", "kind", "source", "last_reported"];

export function renderTranscript(
  container: HTMLElement,
  views: TurnView[],
  callbacks: UiCallbacks,
): void {
  container.replaceChildren();
  for (const view of views) {
    container.appendChild(renderTurn(view, callbacks));
  }
  container.scrollTop = container.scrollHeight;
}

function renderTurn(view: TurnView, callbacks: UiCallbacks): HTMLElement {
  const bubble = el("div", `turn turn-${view.role}`);
  const text = el("div", "turn-text");
  text.textContent = view.text;
  bubble.appendChild(text);
  if (view.chips?.length) bubble.appendChild(renderChips(view.chips));
  if (view.table?.length) bubble.appendChild(renderTable(view.table));
  if (view.card) bubble.appendChild(renderCard(view.card, callbacks));
  const stamp = el("div", "turn-time");
  stamp.textContent = view.timestamp;
  bubble.appendChild(stamp);
  return bubble;
}

function renderChips(chips: string[]): HTMLElement {
  const wrap = el("div", "chips");
  for (const name of chips) {
    const chip = el("span", "chip");
    chip.textContent = name;
    wrap.appendChild(chip);
  }
  return wrap;
}

function renderTable(rows: RecordRow[]): HTMLElement {
  const table = el("table", "records") as HTMLTableElement;
  let sortKey: keyof RecordRow = "last_reported";
  let ascending = false;

  const paint = () => {
    table.replaceChildren();
    const head = table.createTHead().insertRow();
    for (const column of TABLE_COLUMNS) {
      const cell = document.createElement("th");
      cell.textContent = column + (column === sortKey ? (ascending ? " ^" : " v") : "");
      cell.addEventListener("click", () => {
        ascending = column === sortKey ? !ascending : true;
        sortKey = column;
        paint();
      });
      head.appendChild(cell);
    }
    const body = table.createTBody();
    for (const row of sortRows(rows, sortKey, ascending)) {
      const tr = body.insertRow();
      for (const column of TABLE_COLUMNS) {
        tr.insertCell().textContent = row[column];
      }
    }
  };
  paint();
  return table;
}

function renderCard(card: ActionCard, callbacks: UiCallbacks): HTMLElement {
  const box = el("div", "action-card");
  const summary = el("pre", "card-summary");
  summary.textContent = card.summary;
  box.appendChild(summary);

  if (card.dismissed) {
    box.appendChild(badge("stale - dismissed"));
    return box;
  }
  if (card.decision) {
    box.appendChild(badge(card.decision === "affirm" ? "approved" : "denied"));
    return box;
  }

  for (const decision of ["affirm", "deny"] as const) {
    const button = document.createElement("button");
    button.textContent = decision === "affirm" ? "Approve" : "Deny";
    button.className = `decide decide-${decision}`;
    button.addEventListener("click", () => {
      // disable both buttons immediately; Transcript.beginDecision is the
      // real exactly-once gate, this is just the visual debounce
      box.querySelectorAll("button").forEach((b) => ((b as HTMLButtonElement).disabled = true));
      callbacks.onDecide(card, decision);
    });
    box.appendChild(button);
  }
  return box;
}

function badge(label: string): HTMLElement {
  const span = el("span", "decision-badge");
  span.textContent = label;
  return span;
}

function el(tag: string, className: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}

export function renderStatus(node: HTMLElement, status: string): void {
  node.textContent = status ? `· ${status}` : "";
}

export function renderAudit(node: HTMLElement, entries: { kind: string; session_seq: number; timestamp: string }[]): void {
  node.replaceChildren();
  for (const entry of entries) {
    const line = el("div", "audit-line");
    line.textContent = `#${entry.session_seq} ${entry.timestamp} ${entry.kind}`;
    node.appendChild(line);
  }
}
