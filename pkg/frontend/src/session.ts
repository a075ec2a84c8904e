/** One ranked completion as served by GET /suggest. */
export interface Suggestion {
  query: string;
  score: number;
}

/** Response body of GET /suggest. */
export interface SuggestResponse {
  suggestions: Suggestion[];
  latency_ms: number;
  source: string;
}

/** Everything the view needs to repaint the panel. */
export interface RenderState {
  prefix: string;
  suggestions: Suggestion[];
  latencyMs: number | null;
  source: string | null;
  error: string | null;
}

export type Fetcher = (
  previousQuery: string,
  prefix: string,
  k: number,
) => Promise<SuggestResponse>;

export type RenderFn = (state: RenderState) => void;

const EMPTY_PANEL: RenderState = {
  prefix: "",
  suggestions: [],
  latencyMs: null,
  source: null,
  error: null,
};

/**
 * Session state behind the demo page, kept free of DOM references so it
 * can be driven directly from tests.
 *
 * The previous query only ever changes when the user commits one, either
 * by accepting a suggestion or by submitting free text. Keystrokes update
 * the current prefix and trigger a fetch, nothing else.
 *
 * Responses may resolve out of order. Every request takes a ticket from a
 * monotone counter and a response is rendered only if its ticket is newer
 * than the newest one rendered so far, so a slow response for an old
 * prefix can never overwrite the panel for the current one.
 */
export class DemoSession {
  previousQuery = "";
  currentPrefix = "";
  history: string[] = [];
  accepts = 0;
  submits = 0;
  lastResponse: SuggestResponse | null = null;

  private readonly fetcher: Fetcher;
  private readonly onRender: RenderFn;
  private readonly k: number;
  private issued = 0;
  private renderedTicket = 0;

  constructor(fetcher: Fetcher, onRender: RenderFn, k = 8) {
    if (k < 1) throw new Error("k must be >= 1");
    this.fetcher = fetcher;
    this.onRender = onRender;
    this.k = k;
  }

  /** accepts / submits, 0 before the first submit. */
  get acceptanceRate(): number {
    return this.submits === 0 ? 0 : this.accepts / this.submits;
  }

  /**
   * Handle the input box changing to `prefix`.
   *
   * An empty box clears the panel without a request. A network failure
   * surfaces as an error banner for the newest prefix only; the input
   * stays usable and a later success paints over it.
   */
  async onKeystroke(prefix: string): Promise<void> {
    this.currentPrefix = prefix;
    const ticket = ++this.issued;
    if (prefix === "") {
      this.renderedTicket = ticket;
      this.lastResponse = null;
      this.onRender(EMPTY_PANEL);
      return;
    }
    let state: RenderState;
    try {
      const resp = await this.fetcher(this.previousQuery, prefix, this.k);
      if (ticket <= this.renderedTicket) return;
      this.lastResponse = resp;
      state = {
        prefix,
        suggestions: resp.suggestions,
        latencyMs: resp.latency_ms,
        source: resp.source,
        error: null,
      };
    } catch (err) {
      if (ticket <= this.renderedTicket) return;
      this.lastResponse = null;
      state = {
        prefix,
        suggestions: [],
        latencyMs: null,
        source: null,
        error: err instanceof Error ? err.message : String(err),
      };
    }
    this.renderedTicket = ticket;
    this.onRender(state);
  }

  /**
   * Accept the suggestion at `index` in the last rendered response.
   *
   * Out-of-range indices (or no response on screen) are a no-op returning
   * false. Otherwise the suggestion becomes the previous query, lands in
   * the history, and counts as both an accept and a submit.
   */
  acceptSuggestion(index: number): boolean {
    const resp = this.lastResponse;
    if (resp === null) return false;
    if (!Number.isInteger(index) || index < 0 || index >= resp.suggestions.length) {
      return false;
    }
    this.accepts += 1;
    this.commit(resp.suggestions[index].query);
    return true;
  }

  /**
   * Submit the typed text as-is, bypassing the suggestions. Counts as a
   * submit but not an accept. Blank text is ignored.
   */
  submitFreeText(text: string): boolean {
    const query = text.trim();
    if (query === "") return false;
    this.commit(query);
    return true;
  }

  private commit(query: string): void {
    this.submits += 1;
    this.history.push(query);
    this.previousQuery = query;
    this.currentPrefix = "";
    this.lastResponse = null;
    // an in-flight response belongs to the old context; drop it
    this.renderedTicket = ++this.issued;
    this.onRender(EMPTY_PANEL);
  }
}
