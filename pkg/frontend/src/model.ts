/** View-model construction: pure functions from server snapshots to what the
 * panel renders. The rendered state is always a verbatim reflection of the
 * most recent successful /api/state response; this module never invents
 * appliance state, it only annotates (staleness, tracked submissions). */

import type { ControlWord, QueuedCommand, StateSnapshot } from "./types.js";
import { LEVEL_MAX, OPCODE } from "./types.js";

/** A node is stale when the server has not heard from it for this long. */
export const STALE_AFTER_MS = 10_000;

export interface TrackedCommand {
  seq: number;
  word: ControlWord;
  submitted_at: number;
}

export interface ViewState {
  snapshot: StateSnapshot | null; // last successful response, verbatim
  lastRefresh: number | null; // wall ms of that response
  offline: boolean; // last refresh attempt failed
  tracked: TrackedCommand[]; // manual submissions being watched
  error: string | null; // inline validation message, if any
}

export function initialViewState(): ViewState {
  return { snapshot: null, lastRefresh: null, offline: false, tracked: [], error: null };
}

export function applyRefresh(state: ViewState, snapshot: StateSnapshot, now: number): ViewState {
  return { ...state, snapshot, lastRefresh: now, offline: false };
}

/** Refresh failed: previous snapshot is retained but flagged offline/stale. */
export function applyRefreshFailure(state: ViewState): ViewState {
  return { ...state, offline: true };
}

export function trackSubmission(
  state: ViewState, seq: number, word: ControlWord, now: number,
): ViewState {
  return {
    ...state,
    error: null,
    tracked: [...state.tracked, { seq, word, submitted_at: now }].slice(-20),
  };
}

export function applyRejection(state: ViewState, message: string): ViewState {
  return { ...state, error: message };
}

/** Server time of a snapshot: the freshest timestamp it carries. */
export function serverNow(snapshot: StateSnapshot): number {
  let t = 0;
  for (const n of snapshot.nodes) t = Math.max(t, n.last_seen);
  for (const c of snapshot.recent) {
    t = Math.max(t, c.created_at, c.delivered_at ?? 0, c.resolved_at ?? 0);
  }
  return t;
}

/** Nodes stale when unheard-of for STALE_AFTER_MS of server time, or when the
 * panel itself is offline. */
export function isNodeStale(
  node: { last_seen: number }, snapshot: StateSnapshot, offline: boolean,
): boolean {
  if (offline) return true;
  return serverNow(snapshot) - node.last_seen > STALE_AFTER_MS;
}

/** Live status badge for a tracked submission, from the snapshot only. */
export function badgeFor(seq: number, snapshot: StateSnapshot | null): string {
  const cmd = snapshot?.recent.find((c) => c.seq === seq);
  return cmd ? cmd.status : "SUBMITTED";
}

export function recentNewestFirst(snapshot: StateSnapshot): QueuedCommand[] {
  return [...snapshot.recent].sort((a, b) => b.seq - a.seq);
}

// Command builders for the three control widgets ---------------------------

export function toggleWord(node: number, appliance: number, on: boolean): ControlWord {
  return { node, appliance, opcode: on ? OPCODE.ON : OPCODE.OFF, value: 0 };
}

export function levelWord(
  node: number, appliance: number, kind: "LIGHT" | "FAN" | "BLINDS", level: number,
): ControlWord {
  const clamped = Math.max(0, Math.min(LEVEL_MAX[kind], Math.round(level)));
  return { node, appliance, opcode: OPCODE.SET_LEVEL, value: clamped };
}
