import type { Filter, SampleListing, Verdict } from "./types.js";

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  async fetchSamples(page: number, pageSize: number, filter: Filter): Promise<SampleListing> {
    const url = `${this.base}/api/samples?page=${page}&page_size=${pageSize}&filter=${filter}`;
    let resp: Response;
    try {
      resp = await fetch(url);
    } catch (err) {
      throw new ApiError(`curate server unreachable: ${err}`);
    }
    if (!resp.ok) {
      throw new ApiError(`GET /api/samples failed`, resp.status);
    }
    return (await resp.json()) as SampleListing;
  }

  async postVerdict(sampleId: string, verdict: Verdict, reasonTag: string): Promise<void> {
    let resp: Response;
    try {
      resp = await fetch(`${this.base}/api/verdict`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ sample_id: sampleId, verdict, reason_tag: reasonTag }),
      });
    } catch (err) {
      throw new ApiError(`curate server unreachable: ${err}`);
    }
    if (!resp.ok) {
      throw new ApiError(`POST /api/verdict failed`, resp.status);
    }
  }
}
