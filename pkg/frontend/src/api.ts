/** Typed client for the study server's four HTTP endpoints. */

import type { PairInfo, Side } from "./state.js";

export interface SessionInfo {
  session_id: string;
  observer_id: string;
  cursor: number;
  total: number;
  coverage_threshold: number;
  pairs: PairInfo[];
}

export interface ResponsePayload {
  session_id: string;
  pair_id: string;
  winner: Side;
  views_seen_left: number;
  views_seen_right: number;
  response_time_ms?: number;
}

export interface ResponseResult {
  accepted: boolean;
  done: boolean;
  next: PairInfo | null;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
    this.name = "ApiError";
  }
}

async function asError(res: Response): Promise<ApiError> {
  let message = `${res.status} ${res.statusText}`;
  try {
    const body = await res.json();
    if (body && typeof body.error === "string") message = body.error;
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(message, res.status);
}

export class StudyApi {
  constructor(readonly base: string = "") {}

  async createSession(
    observer_id: string,
    opts: { scenes?: string[]; seed?: number } = {},
  ): Promise<SessionInfo> {
    const query = new URLSearchParams({ observer_id });
    if (opts.scenes && opts.scenes.length) query.set("scenes", opts.scenes.join(","));
    if (opts.seed !== undefined) query.set("seed", String(opts.seed));
    const res = await fetch(`${this.base}/session?${query}`);
    if (!res.ok) throw await asError(res);
    return (await res.json()) as SessionInfo;
  }

  /** URL of one lossless view image; side is "left"/"right" as displayed. */
  viewUrl(pair_id: string, side: Side, index: number): string {
    return `${this.base}/pair/${encodeURIComponent(pair_id)}/${side}/${index}`;
  }

  async submitResponse(payload: ResponsePayload): Promise<ResponseResult> {
    const res = await fetch(`${this.base}/response`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) throw await asError(res);
    return (await res.json()) as ResponseResult;
  }

  /** Raw response CSV plus the count of malformed log lines the server skipped. */
  async fetchExport(): Promise<{ csv: string; skipped: number }> {
    const res = await fetch(`${this.base}/export`);
    if (!res.ok) throw await asError(res);
    return {
      csv: await res.text(),
      skipped: Number(res.headers.get("X-Skipped-Lines") ?? "0"),
    };
  }
}
