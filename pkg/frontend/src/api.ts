import type { Fetcher, SuggestResponse } from "./session.js";

/**
 * Build a Fetcher hitting `baseUrl`/suggest. The default empty base keeps
 * requests same-origin, which is what the bundled demo mount uses; point
 * it elsewhere to talk to a server on another port.
 */
export function makeFetcher(baseUrl = "", fetchImpl: typeof fetch = fetch): Fetcher {
  const base = baseUrl.replace(/\/$/, "");
  return async (previousQuery, prefix, k) => {
    const params = new URLSearchParams({
      prev: previousQuery,
      prefix,
      k: String(k),
    });
    const resp = await fetchImpl(`${base}/suggest?${params.toString()}`);
    if (!resp.ok) {
      throw new Error(`suggest failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as SuggestResponse;
  };
}
