// The transcript state machine: pure, DOM-free, fully unit-tested.
// Every rendered value must come from a service payload; nothing is
// computed or invented here beyond picking fields out of turn documents.

import type { TurnDoc } from "./api.js";

export interface RecordRow {
  signature: string;
  kind: string;
  source: string;
  last_reported: string;
}

export interface ActionCard {
  id: number;
  summary: string;
  plan: unknown[];
  decision: "affirm" | "deny" | null;
  inFlight: boolean;
  dismissed: boolean;
}

export interface TurnView {
  role: "user" | "assistant";
  text: string;
  timestamp: string;
  table?: RecordRow[];
  chips?: string[];
  card?: ActionCard;
  queued?: boolean;
}

interface RecordDoc {
  signature?: { kind?: string; value?: string };
  source?: string;
  last_reported?: string;
}

function rowsFromRecords(records: RecordDoc[]): RecordRow[] {
  return records.map((rec) => ({
    signature: rec.signature?.value ?? "",
    kind: rec.signature?.kind ?? "",
    source: rec.source ?? "",
    last_reported: rec.last_reported ?? "",
  }));
}

// Pull every record list out of a result payload (per-step query payloads).
export function recordsFromTurn(turn: TurnDoc): RecordRow[] {
  if (turn.kind !== "result" || !turn.payload) return [];
  const report = turn.payload["report"] as
    | { steps?: { payload?: { records?: RecordDoc[] } }[] }
    | undefined;
  if (!report?.steps) return [];
  const rows: RecordRow[] = [];
  for (const step of report.steps) {
    for (const rec of step.payload?.records ?? []) {
      rows.push(...rowsFromRecords([rec]));
    }
  }
  return rows;
}

export function sortRows(rows: RecordRow[], key: keyof RecordRow, ascending: boolean): RecordRow[] {
  const sorted = [...rows].sort((a, b) => a[key].localeCompare(b[key]));
  return ascending ? sorted : sorted.reverse();
}

export class Transcript {
  views: TurnView[] = [];
  status = "";
  private nextCardId = 1;
  private clock: () => string;

  constructor(clock?: () => string) {
    this.clock = clock ?? (() => new Date().toISOString());
  }

  addUserMessage(text: string): TurnView {
    const view: TurnView = { role: "user", text, timestamp: this.clock() };
    this.views.push(view);
    return view;
  }

  addAgentTurn(turn: TurnDoc): TurnView {
    const view: TurnView = { role: "assistant", text: turn.text, timestamp: this.clock() };
    if (turn.kind === "result") {
      const rows = recordsFromTurn(turn);
      if (rows.length) view.table = rows;
    } else if (turn.kind === "clarification") {
      view.chips = [...(turn.missing_slots ?? [])];
    } else if (turn.kind === "confirmation") {
      view.card = {
        id: this.nextCardId++,
        summary: turn.text,
        plan: turn.plan ?? [],
        decision: null,
        inFlight: false,
        dismissed: false,
      };
    }
    this.views.push(view);
    return view;
  }

  markQueued(): void {
    this.status = "queued";
  }

  // The exactly-once gate: returns true only for the first decision attempt
  // on a live card. Double clicks and repeat calls never pass twice.
  beginDecision(card: ActionCard): boolean {
    if (card.decision !== null || card.inFlight || card.dismissed) return false;
    card.inFlight = true;
    return true;
  }

  completeDecision(card: ActionCard, decision: "affirm" | "deny"): void {
    card.inFlight = false;
    card.decision = decision;
  }

  failDecision(card: ActionCard, stale: boolean): void {
    card.inFlight = false;
    if (stale) card.dismissed = true; // NothingPending: the card is stale
  }

  pendingCard(): ActionCard | null {
    for (let i = this.views.length - 1; i >= 0; i--) {
      const card = this.views[i].card;
      if (card && card.decision === null && !card.dismissed) return card;
    }
    return null;
  }

  applyStreamEvent(event: Record<string, unknown>): void {
    if (event["event"] === "progress") {
      this.status = String(event["stage"] ?? "");
      return;
    }
    if (event["event"] === "turn") {
      const turn = event["turn"] as TurnDoc;
      const last = this.views[this.views.length - 1];
      // HTTP responses already append the turn; only adopt stream turns we missed
      if (!last || last.role !== "assistant" || last.text !== turn.text) {
        this.addAgentTurn(turn);
      }
      this.status = "";
    }
  }

  // Every data value the view layer will render, for fabrication checks.
  renderedValues(view: TurnView): string[] {
    const values: string[] = [view.text];
    for (const row of view.table ?? []) {
      values.push(row.signature, row.kind, row.source, row.last_reported);
    }
    values.push(...(view.chips ?? []));
    if (view.card) values.push(view.card.summary);
    return values.filter((v) => v.length > 0);
  }
}
