/** FIFO feedback dispatcher with retry.
 *
 * Decisions must not be lost: every recorded action enters the queue and
 * stays there until the service acknowledges it. Posts go out strictly in
 * order, one at a time, so the decision log preserves the user's sequence.
 */

import type { ApiClient } from "./api";
import type { FeedbackAction } from "./types";

export interface QueuedFeedback {
  labelId: string;
  action: FeedbackAction;
}

export class FeedbackQueue {
  private queue: QueuedFeedback[] = [];
  private draining = false;
  private retryDelayMs: number;
  /** events acknowledged by the service, in post order (for tests/UI) */
  readonly acknowledged: QueuedFeedback[] = [];

  constructor(
    private api: ApiClient,
    opts: { retryDelayMs?: number } = {},
  ) {
    this.retryDelayMs = opts.retryDelayMs ?? 2000;
  }

  get pending(): number {
    return this.queue.length;
  }

  enqueue(labelId: string, action: FeedbackAction): void {
    this.queue.push({ labelId, action });
    void this.drain();
  }

  /** Resolves when the queue is empty (used by tests and page unload). */
  async flush(): Promise<void> {
    while (this.queue.length > 0 || this.draining) {
      await this.drain();
      if (this.queue.length > 0) {
        await sleep(this.retryDelayMs);
      }
    }
  }

  private async drain(): Promise<void> {
    if (this.draining) return;
    this.draining = true;
    try {
      while (this.queue.length > 0) {
        const head = this.queue[0];
        try {
          await this.api.feedback(head.labelId, head.action);
        } catch {
          break; // keep head queued; retry on the next enqueue/flush
        }
        this.queue.shift();
        this.acknowledged.push(head);
      }
    } finally {
      this.draining = false;
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
