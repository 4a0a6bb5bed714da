/**
 * DOM wiring for the side-by-side study: pointer drag and arrow keys sweep
 * the views, coverage labels track each side, and the vote buttons stay
 * disabled until the ViewerState gate opens.  The server re-checks the same
 * gate, so nothing here is trusted for data integrity.
 */

import { ApiError, StudyApi } from "./api.js";
import type { SessionInfo } from "./api.js";
import { ViewerState } from "./state.js";
import type { PairInfo, Side } from "./state.js";

const api = new StudyApi("");
const SIDES: readonly Side[] = ["left", "right"];
const PREFETCH_AHEAD = 3;

let session: SessionInfo | null = null;
let state: ViewerState | null = null;
let pairShownAt = 0;
let activeSide: Side = "left"; // last side the pointer entered; arrow keys drive it

const $ = (id: string) => document.getElementById(id) as HTMLElement;
const img = (side: Side) => $(`img-${side}`) as HTMLImageElement;
const voteButton = (side: Side) => $(`vote-${side}`) as HTMLButtonElement;

function setMessage(text: string): void {
  $("message").textContent = text;
}

function refreshControls(): void {
  if (!state) return;
  const enabled = state.responseEnabled();
  for (const side of SIDES) {
    $(`cov-${side}`).textContent = `${Math.floor(state.coverage(side) * 100)}%`;
    voteButton(side).disabled = !enabled;
  }
}

function prefetch(side: Side, from: number): void {
  if (!state) return;
  const top = Math.min(from + PREFETCH_AHEAD, state.viewCount - 1);
  for (let i = from + 1; i <= top; i++) {
    // warms the cache only; prefetched views earn no coverage credit
    new Image().src = api.viewUrl(state.pair.pair_id, side, i);
  }
}

function showView(side: Side, index: number): void {
  if (!state) return;
  const el = img(side);
  el.onload = () => {
    // credit the view only once it is actually on screen and still current
    if (state && state.viewIndex(side) === index) {
      state.markRendered(side, index);
      refreshControls();
    }
  };
  el.src = api.viewUrl(state.pair.pair_id, side, index);
  prefetch(side, index);
}

function loadPair(pair: PairInfo): void {
  state = new ViewerState(pair);
  pairShownAt = performance.now();
  $("progress").textContent = `pair ${pair.index + 1} / ${session ? session.total : "?"}`;
  for (const side of SIDES) showView(side, state.viewIndex(side));
  refreshControls();
}

function sweepBy(side: Side, delta: number): void {
  if (!state) return;
  const before = state.viewIndex(side);
  if (state.sweep(side, delta) !== before) showView(side, state.viewIndex(side));
}

function sweepToFraction(side: Side, fraction: number): void {
  if (!state) return;
  const before = state.viewIndex(side);
  if (state.sweepTo(side, fraction) !== before) showView(side, state.viewIndex(side));
}

async function vote(winner: Side): Promise<void> {
  if (!state || !session) return;
  if (!state.responseEnabled()) return; // disabled click: no network call
  try {
    const result = await api.submitResponse({
      session_id: session.session_id,
      pair_id: state.pair.pair_id,
      winner,
      views_seen_left: state.coverage("left"),
      views_seen_right: state.coverage("right"),
      response_time_ms: Math.round(performance.now() - pairShownAt),
    });
    setMessage("");
    if (result.done) {
      state = null;
      $("study").hidden = true;
      $("done").hidden = false;
    } else if (result.next) {
      loadPair(result.next);
    }
  } catch (err) {
    // non-blocking: the pair stays loaded and can be re-answered
    if (err instanceof ApiError) {
      setMessage(`response not accepted: ${err.message}`);
    } else {
      setMessage(`network error: ${err}`);
    }
  }
}

async function start(): Promise<void> {
  const observer = ($("observer") as HTMLInputElement).value.trim() || "anonymous";
  try {
    session = await api.createSession(observer);
  } catch (err) {
    setMessage(err instanceof ApiError ? `cannot start session: ${err.message}` : `network error: ${err}`);
    return;
  }
  setMessage("");
  $("setup").hidden = true;
  $("study").hidden = false;
  loadPair(session.pairs[session.cursor]);
}

function wireViewer(side: Side): void {
  const el = img(side);
  let dragging = false;
  el.addEventListener("pointerenter", () => {
    activeSide = side;
  });
  el.addEventListener("pointerdown", (event) => {
    dragging = true;
    el.setPointerCapture(event.pointerId);
    const rect = el.getBoundingClientRect();
    sweepToFraction(side, (event.clientX - rect.left) / rect.width);
  });
  el.addEventListener("pointermove", (event) => {
    if (!dragging) return;
    const rect = el.getBoundingClientRect();
    sweepToFraction(side, (event.clientX - rect.left) / rect.width);
  });
  el.addEventListener("pointerup", () => {
    dragging = false;
  });
  voteButton(side).addEventListener("click", () => void vote(side));
}

$("start").addEventListener("click", () => void start());
for (const side of SIDES) wireViewer(side);
window.addEventListener("keydown", (event) => {
  if (event.key === "ArrowLeft") sweepBy(activeSide, -1);
  else if (event.key === "ArrowRight") sweepBy(activeSide, +1);
});
