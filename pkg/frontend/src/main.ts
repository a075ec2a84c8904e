import { makeFetcher } from "./api.js";
import { debounce } from "./debounce.js";
import { DemoSession, type RenderState } from "./session.js";

const DEBOUNCE_MS = 30;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

const input = el<HTMLInputElement>("prefix");
const panel = el<HTMLUListElement>("suggestions");
const banner = el<HTMLDivElement>("banner");
const context = el<HTMLSpanElement>("context");
const stats = el<HTMLSpanElement>("stats");
const latency = el<HTMLSpanElement>("latency");
const historyList = el<HTMLUListElement>("history");

// ?api=http://host:port targets a server other than the one serving /demo/
const apiBase = new URLSearchParams(location.search).get("api") ?? "";

function render(state: RenderState): void {
  banner.hidden = state.error === null;
  banner.textContent = state.error ?? "";
  latency.textContent =
    state.latencyMs === null ? "" : `${state.latencyMs.toFixed(2)} ms (${state.source})`;
  panel.replaceChildren(
    ...state.suggestions.map((s, i) => {
      const li = document.createElement("li");
      const score = document.createElement("span");
      score.className = "score";
      score.textContent = s.score.toFixed(4);
      li.append(s.query, score);
      li.addEventListener("click", () => {
        session.acceptSuggestion(i);
      });
      return li;
    }),
  );
}

const session = new DemoSession(makeFetcher(apiBase), (state) => {
  render(state);
  syncChrome();
});

function syncChrome(): void {
  input.value = session.currentPrefix;
  context.textContent =
    session.previousQuery === "" ? "(session start)" : session.previousQuery;
  const rate =
    session.submits === 0 ? "n/a" : `${(session.acceptanceRate * 100).toFixed(0)}%`;
  stats.textContent =
    `accepted ${session.accepts} of ${session.submits} submits (rate ${rate})`;
  historyList.replaceChildren(
    ...session.history.map((q) => {
      const li = document.createElement("li");
      li.textContent = q;
      return li;
    }),
  );
}

const requestSuggestions = debounce((prefix: string) => {
  void session.onKeystroke(prefix);
}, DEBOUNCE_MS);

input.addEventListener("input", () => {
  requestSuggestions(input.value);
});

input.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") {
    session.submitFreeText(input.value);
  }
});

syncChrome();
