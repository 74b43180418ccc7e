import { afterEach, describe, expect, it, vi } from "vitest";

import {
  ApiClient,
  ApiError,
  assertNoReviewerIdentifiers,
} from "../src/api.js";

function stubFetch(status: number, payload: unknown): ReturnType<typeof vi.fn> {
  const mock = vi.fn(async () => ({
    ok: status < 400,
    status,
    text: async () => JSON.stringify(payload),
  }));
  vi.stubGlobal("fetch", mock);
  return mock;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("ApiClient", () => {
  it("parses successful responses", async () => {
    stubFetch(200, { status: "ok", corpus: true, scores: false });
    const health = await new ApiClient("http://x").health();
    expect(health.corpus).toBe(true);
    expect(health.scores).toBe(false);
  });

  it("raises ApiError with a string detail", async () => {
    stubFetch(409, { detail: "no scores computed yet; run the score job first" });
    const err = await new ApiClient("http://x").ranked().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.detail).toContain("score job");
  });

  it("flattens pydantic field-error arrays into readable text", async () => {
    stubFetch(422, {
      detail: [
        { loc: ["body", "verdict"], msg: "Field required" },
        { loc: ["body", "auditor_id"], msg: "Field required" },
      ],
    });
    const err = await new ApiClient("http://x")
      .postVerdict("a", "pending", "aud", [])
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.detail).toBe(
      "body.verdict: Field required; body.auditor_id: Field required",
    );
  });

  it("sends the bearer token when configured", async () => {
    const mock = stubFetch(200, { status: "ok", corpus: false, scores: false });
    await new ApiClient("http://x", "sekrit").health();
    const [, init] = mock.mock.calls[0]!;
    expect((init as RequestInit).headers).toMatchObject({
      authorization: "Bearer sekrit",
    });
  });

  it("encodes annotator and app ids in query paths", async () => {
    const mock = stubFetch(200, []);
    await new ApiClient("http://x").queue("ann/odd name", 5);
    const [url] = mock.mock.calls[0]!;
    expect(url).toBe("http://x/api/reviews/queue?annotator=ann%2Fodd%20name&n=5");
  });

  it("rejects queue payloads that leak reviewer identifiers", async () => {
    stubFetch(200, [
      { review_id: "r1", app_id: "a", title: "", body: "", rating: null,
        date: null, reviewer_type: "abuser" },
    ]);
    await expect(new ApiClient("http://x").queue("ann", 5)).rejects.toThrow(
      /reviewer identifier/,
    );
  });
});

describe("assertNoReviewerIdentifiers", () => {
  it("passes clean rows and names the leaked field otherwise", () => {
    expect(() => assertNoReviewerIdentifiers([{ review_id: "r1" }])).not.toThrow();
    expect(() =>
      assertNoReviewerIdentifiers([{ review_id: "r1", story_type: "abuser" }]),
    ).toThrow(/story_type/);
  });
});
