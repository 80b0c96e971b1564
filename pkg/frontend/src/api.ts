/** Typed client for the control server; the panel's only data source. */

import type { ControlWord, StateSnapshot } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class PanelApi {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  /** GET /api/state; throws ApiError on HTTP errors, TypeError on network loss. */
  async getState(): Promise<StateSnapshot> {
    const resp = await this.fetchImpl(this.baseUrl + "/api/state");
    if (!resp.ok) {
      throw new ApiError(resp.status, `state endpoint returned ${resp.status}`);
    }
    return (await resp.json()) as StateSnapshot;
  }

  /** POST /api/manual; resolves to the assigned queue seq. */
  async postManual(word: ControlWord): Promise<number> {
    const resp = await this.fetchImpl(this.baseUrl + "/api/manual", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(word),
    });
    if (resp.status === 422) {
      const body = (await resp.json()) as { error?: string };
      throw new ApiError(422, body.error ?? "command rejected");
    }
    if (resp.status !== 202) {
      throw new ApiError(resp.status, `manual endpoint returned ${resp.status}`);
    }
    const body = (await resp.json()) as { seq: number };
    return body.seq;
  }
}
