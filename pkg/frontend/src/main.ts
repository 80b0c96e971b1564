/** Browser wiring: one polling loop, one in-flight refresh at a time, manual
 * submissions queued FIFO. All state shown comes from the last successful
 * server snapshot; a submission only changes the view once a refresh
 * reports it back. */

import { ApiError, PanelApi } from "./api.js";
import {
  ViewState,
  applyRefresh,
  applyRefreshFailure,
  applyRejection,
  initialViewState,
  levelWord,
  toggleWord,
  trackSubmission,
} from "./model.js";
import { renderApp } from "./render.js";
import type { ApplianceKindName, ControlWord } from "./types.js";

const REFRESH_MS = 2000;

const api = new PanelApi("");
let view: ViewState = initialViewState();
let refreshing = false;
const submitQueue: ControlWord[] = [];
let submitting = false;

function paint(): void {
  const root = document.getElementById("app");
  if (root) root.innerHTML = renderApp(view);
}

async function refresh(): Promise<void> {
  if (refreshing) return; // one in-flight refresh at a time
  refreshing = true;
  try {
    const snapshot = await api.getState();
    view = applyRefresh(view, snapshot, Date.now());
  } catch {
    view = applyRefreshFailure(view);
  } finally {
    refreshing = false;
    paint();
  }
}

async function pumpSubmissions(): Promise<void> {
  if (submitting) return;
  submitting = true;
  try {
    while (submitQueue.length > 0) {
      const word = submitQueue.shift() as ControlWord;
      try {
        const seq = await api.postManual(word);
        view = trackSubmission(view, seq, word, Date.now());
      } catch (err) {
        if (err instanceof ApiError) {
          view = applyRejection(view, err.message);
        } else {
          view = applyRejection(view, "network failure, command not sent; retry");
        }
      }
    }
  } finally {
    submitting = false;
    paint();
    void refresh();
  }
}

function submit(word: ControlWord): void {
  submitQueue.push(word);
  void pumpSubmissions();
}

function onPanelEvent(event: Event): void {
  const el = event.target as HTMLElement;
  if (el.classList.contains("power-toggle")) {
    const on = (el as HTMLInputElement).checked;
    submit(toggleWord(num(el, "node"), num(el, "appliance"), on));
  } else if (el.classList.contains("fan-speed")) {
    submit(levelWord(num(el, "node"), num(el, "appliance"), "FAN", num(el, "speed")));
  } else if (el.classList.contains("level-slider")) {
    const kind = (el.dataset.kind ?? "LIGHT") as ApplianceKindName;
    submit(levelWord(num(el, "node"), num(el, "appliance"), kind,
                     Number((el as HTMLInputElement).value)));
  }
}

function num(el: HTMLElement, key: string): number {
  return Number(el.dataset[key] ?? 0);
}

document.addEventListener("change", onPanelEvent);
document.addEventListener("click", (e) => {
  if ((e.target as HTMLElement).classList?.contains("fan-speed")) onPanelEvent(e);
});

paint();
void refresh();
setInterval(() => void refresh(), REFRESH_MS);
