// Console bootstrap: connect form, message box, feed-sync button, audit pane.

import { ApiError, SentinelClient } from "./api.js";
import { Transcript } from "./turns.js";
import type { ActionCard } from "./turns.js";
import { renderAudit, renderStatus, renderTranscript } from "./ui.js";

interface Session {
  client: SentinelClient;
  sessionId: string;
  transcript: Transcript;
  socket: WebSocket | null;
}

let session: Session | null = null;

const $ = (id: string) => document.getElementById(id) as HTMLElement;

function paint(): void {
  if (!session) return;
  renderTranscript($("transcript"), session.transcript.views, { onDecide: decide });
  renderStatus($("status"), session.transcript.status);
}

function showError(message: string): void {
  $("error").textContent = message;
}

async function connect(): Promise<void> {
  showError("");
  const baseUrl = ($("base-url") as HTMLInputElement).value.trim() || window.location.origin;
  const token = ($("token") as HTMLInputElement).value.trim() || undefined;
  const client = new SentinelClient(baseUrl, token);
  try {
    await client.health();
    const sessionId = await client.createSession();
    const transcript = new Transcript();
    const socket = client.openStream(sessionId, (event) => {
      transcript.applyStreamEvent(event);
      paint();
    });
    if (socket) {
      socket.onclose = () => {
        // resume the same session after a dropped stream
        if (session?.sessionId === sessionId) {
          session.socket = client.openStream(sessionId, (event) => {
            session?.transcript.applyStreamEvent(event);
            paint();
          });
        }
      };
    }
    session = { client, sessionId, transcript, socket };
    $("session-label").textContent = `session ${sessionId}`;
    $("chat").classList.remove("hidden");
    paint();
  } catch (err) {
    // auth and network failures surface inline, never as a blank page
    showError(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
  }
}

async function send(): Promise<void> {
  if (!session) return;
  const input = $("message") as HTMLInputElement;
  const text = input.value.trim();
  if (!text) return;
  input.value = "";
  session.transcript.addUserMessage(text); // optimistic bubble
  paint();
  try {
    const turn = await session.client.postMessage(session.sessionId, text);
    session.transcript.addAgentTurn(turn);
    session.transcript.status = "";
  } catch (err) {
    if (err instanceof ApiError && err.code === "Busy") {
      session.transcript.markQueued();
    } else {
      showError(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
    }
  }
  paint();
}

async function decide(card: ActionCard, decision: "affirm" | "deny"): Promise<void> {
  if (!session) return;
  if (!session.transcript.beginDecision(card)) return; // one decision, ever
  try {
    const turn = await session.client.confirm(session.sessionId, decision);
    session.transcript.completeDecision(card, decision);
    session.transcript.addAgentTurn(turn);
  } catch (err) {
    const stale = err instanceof ApiError && err.code === "NothingPending";
    session.transcript.failDecision(card, stale);
    if (!stale) showError(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
  }
  paint();
}

async function syncFeeds(): Promise<void> {
  if (!session) return;
  try {
    await session.client.syncFeeds();
    $("status").textContent = "· feeds synced";
  } catch (err) {
    showError(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err));
  }
}

async function toggleAudit(): Promise<void> {
  if (!session) return;
  const pane = $("audit");
  if (!pane.classList.toggle("hidden")) {
    const entries = await session.client.auditEntries(session.sessionId);
    renderAudit(pane, entries);
  }
}

$("connect").addEventListener("click", () => void connect());
$("send").addEventListener("click", () => void send());
($("message") as HTMLInputElement).addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") void send();
});
$("sync-feeds").addEventListener("click", () => void syncFeeds());
$("toggle-audit").addEventListener("click", () => void toggleAudit());
