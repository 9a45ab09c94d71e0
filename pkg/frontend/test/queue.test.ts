import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { FeedbackQueue } from "../src/feedbackQueue";

function flakyApi(failures: number, posted: string[]): ApiClient {
  let remaining = failures;
  const fetchImpl = (async (url: RequestInfo | URL, init?: RequestInit) => {
    if (String(url).endsWith("/v1/feedback")) {
      if (remaining > 0) {
        remaining -= 1;
        return new Response("{}", { status: 503 });
      }
      const body = JSON.parse(String(init?.body));
      posted.push(`${body.label_id}:${body.action}`);
      return new Response(JSON.stringify({ ok: true }), { status: 200 });
    }
    return new Response("{}", { status: 404 });
  }) as typeof fetch;
  return new ApiClient("http://svc", fetchImpl);
}

describe("feedback queue", () => {
  it("delivers in FIFO order", async () => {
    const posted: string[] = [];
    const queue = new FeedbackQueue(flakyApi(0, posted), { retryDelayMs: 1 });
    queue.enqueue("a", "keep");
    queue.enqueue("b", "delete");
    queue.enqueue("c", "viewed_mistakes");
    await queue.flush();
    expect(posted).toEqual(["a:keep", "b:delete", "c:viewed_mistakes"]);
    expect(queue.pending).toBe(0);
  });

  it("retries failures without dropping or reordering", async () => {
    const posted: string[] = [];
    const queue = new FeedbackQueue(flakyApi(2, posted), { retryDelayMs: 1 });
    queue.enqueue("a", "keep");
    queue.enqueue("b", "delete");
    await queue.flush();
    expect(posted).toEqual(["a:keep", "b:delete"]);
    expect(queue.acknowledged.map((e) => e.labelId)).toEqual(["a", "b"]);
  });
});
