/** HTML renderers: view state in, markup out. Pure string builders so the
 * widget logic is testable without a browser. */

import type { ApplianceState, NodeRecord, StateSnapshot } from "./types.js";
import { LEVEL_MAX } from "./types.js";
import { ViewState, badgeFor, isNodeStale, recentNewestFirst } from "./model.js";

function esc(text: string | number): string {
  return String(text).replace(/[&<>"']/g, (ch) =>
    ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;", "'": "&#39;" }[ch] as string),
  );
}

export function renderBanner(state: ViewState): string {
  const parts: string[] = [];
  if (state.offline) {
    parts.push('<div class="banner banner-offline">server unreachable, showing last known state</div>');
  }
  if (state.error) {
    parts.push(`<div class="banner banner-error">${esc(state.error)}</div>`);
  }
  return parts.join("");
}

export function renderFanSelector(node: number, state: ApplianceState): string {
  const options = [0, 1, 2, 3]
    .map(
      (speed) =>
        `<button class="fan-speed${state.on && state.level === speed ? " active" : ""}" ` +
        `data-node="${node}" data-appliance="${state.appliance}" data-speed="${speed}">${speed}</button>`,
    )
    .join("");
  return `<div class="fan-selector">${options}</div>`;
}

export function renderSlider(node: number, state: ApplianceState): string {
  return (
    `<input type="range" min="0" max="${LEVEL_MAX[state.kind]}" value="${state.level}" ` +
    `class="level-slider" data-node="${node}" data-appliance="${state.appliance}" ` +
    `data-kind="${state.kind}">`
  );
}

export function renderTile(node: NodeRecord, state: ApplianceState, stale: boolean): string {
  const control =
    state.kind === "FAN" ? renderFanSelector(node.node, state) : renderSlider(node.node, state);
  return `
    <div class="tile${stale ? " stale" : ""}" data-node="${node.node}" data-appliance="${state.appliance}">
      <div class="tile-head">
        <span class="tile-name">n${node.node} · ${esc(state.kind.toLowerCase())} ${state.appliance}</span>
        <span class="tile-level">${state.on ? `${state.level}` : "off"}</span>
      </div>
      <label class="switch">
        <input type="checkbox" class="power-toggle" data-node="${node.node}"
               data-appliance="${state.appliance}" ${state.on ? "checked" : ""}>
        <span>${state.on ? "ON" : "OFF"}</span>
      </label>
      ${control}
    </div>`;
}

export function renderNodes(state: ViewState): string {
  const snapshot = state.snapshot;
  if (!snapshot || snapshot.nodes.length === 0) {
    return '<p class="empty">no nodes discovered yet</p>';
  }
  return snapshot.nodes
    .map((node) => {
      const stale = isNodeStale(node, snapshot, state.offline);
      const tiles = node.appliances.map((a) => renderTile(node, a, stale)).join("");
      return `<section class="node"><h2>node ${node.node}${stale ? " (stale)" : ""}</h2>
        <div class="tiles">${tiles}</div></section>`;
    })
    .join("");
}

export function renderActivity(state: ViewState): string {
  const snapshot = state.snapshot;
  if (!snapshot) return "";
  const mine = new Set(state.tracked.map((t) => t.seq));
  const rows = recentNewestFirst(snapshot)
    .slice(0, 15)
    .map((c) => {
      const badge = badgeFor(c.seq, snapshot);
      return `<tr class="${mine.has(c.seq) ? "mine" : ""}">
        <td>#${c.seq}</td><td>${esc(c.source)}</td>
        <td>n${c.node}/${c.appliance} op${c.opcode} v${c.value}</td>
        <td><span class="badge badge-${badge.toLowerCase()}">${badge}</span></td>
      </tr>`;
    })
    .join("");
  return `<table class="activity"><thead>
    <tr><th>seq</th><th>source</th><th>command</th><th>status</th></tr>
    </thead><tbody>${rows}</tbody></table>`;
}

export function renderApp(state: ViewState): string {
  return `${renderBanner(state)}
    <div class="columns">
      <div class="col-nodes">${renderNodes(state)}</div>
      <div class="col-activity"><h2>activity</h2>${renderActivity(state)}</div>
    </div>`;
}
