import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "./api.js";

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("ApiClient", () => {
  it("fetchSamples hits the documented endpoint with paging and filter", async () => {
    const payload = { page: 2, page_size: 10, total: 0, counts: {}, reason_tags: [], samples: [] };
    const fetchMock = vi.fn().mockResolvedValue({
      ok: true,
      json: () => Promise.resolve(payload),
    });
    vi.stubGlobal("fetch", fetchMock);
    const out = await new ApiClient().fetchSamples(2, 10, "rejected");
    expect(fetchMock).toHaveBeenCalledWith("/api/samples?page=2&page_size=10&filter=rejected");
    expect(out.page).toBe(2);
  });

  it("postVerdict sends the exact wire body", async () => {
    const fetchMock = vi.fn().mockResolvedValue({ ok: true, json: () => Promise.resolve({}) });
    vi.stubGlobal("fetch", fetchMock);
    await new ApiClient().postVerdict("s01", "rejected", "partial object");
    const [url, init] = fetchMock.mock.calls[0];
    expect(url).toBe("/api/verdict");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body)).toEqual({
      sample_id: "s01",
      verdict: "rejected",
      reason_tag: "partial object",
    });
  });

  it("non-200 responses raise ApiError with the status", async () => {
    vi.stubGlobal("fetch", vi.fn().mockResolvedValue({ ok: false, status: 404 }));
    await expect(new ApiClient().postVerdict("ghost", "accepted", "")).rejects.toThrowError(
      ApiError,
    );
  });

  it("network failures surface as ApiError", async () => {
    vi.stubGlobal("fetch", vi.fn().mockRejectedValue(new TypeError("refused")));
    await expect(new ApiClient().fetchSamples(1, 10, "all")).rejects.toThrowError(ApiError);
  });
});
