/** The intervention session: a queue of candidate labels, the two-stage
 * mistake dialog, and the decision log contract.
 *
 * State machine per item: pending -> kept (service says fine), or
 * pending -> flagged -> kept | deleted (user decides at the dialog).
 * The dialog only ever opens on the service's flagged bit, every terminal
 * action posts feedback, and at most one inference request is in flight.
 */

import type { ApiClient } from "./api";
import { FeedbackQueue } from "./feedbackQueue";
import {
  AI_NOTICE,
  DEFAULT_EXAMPLES,
  MISTAKE_TITLES,
  TipRotation,
} from "./content";
import type {
  DialogAction,
  ExampleCard,
  InterventionDialogState,
  LabelTypeName,
  Screen,
  SessionFile,
  SessionItem,
} from "./types";

export const DIALOG_ACTIONS: readonly [DialogAction, DialogAction, DialogAction] = [
  "confirm-keep",
  "remove",
  "view-common-mistakes",
];

export const DIALOG_BUTTON_TEXT: Record<DialogAction, string> = {
  "confirm-keep": "Yes, I am sure",
  remove: "No, remove the label",
  "view-common-mistakes": "View Common Mistakes",
};

export interface SessionSnapshot {
  items: SessionItem[];
  currentIndex: number | null; // item the dialog/screens refer to
  dialog: InterventionDialogState | null;
  screen: Screen;
  banner: string | null; // non-blocking service-trouble notice
  busy: boolean;
}

type Listener = (snapshot: SessionSnapshot) => void;

export class SessionController {
  private items: SessionItem[] = [];
  private currentIndex: number | null = null;
  private dialog: InterventionDialogState | null = null;
  private screen: Screen = "queue";
  private banner: string | null = null;
  private busy = false;
  private listeners: Listener[] = [];
  private tips: TipRotation;
  readonly feedback: FeedbackQueue;

  constructor(
    private api: ApiClient,
    opts: { tips?: TipRotation; feedback?: FeedbackQueue } = {},
  ) {
    this.tips = opts.tips ?? new TipRotation();
    this.feedback = opts.feedback ?? new FeedbackQueue(api);
  }

  loadSession(session: SessionFile): void {
    this.items = session.items.map((entry) => ({
      label: entry.label,
      imageRef: entry.image ?? null,
      state: "pending",
      pCorrect: null,
    }));
    this.emit();
  }

  snapshot(): SessionSnapshot {
    return {
      items: this.items.map((item) => ({ ...item })),
      currentIndex: this.currentIndex,
      dialog: this.dialog,
      screen: this.screen,
      banner: this.banner,
      busy: this.busy,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  /** Submit a pending item for inference; opens the dialog when flagged. */
  async submitLabel(index: number): Promise<void> {
    const item = this.items[index];
    if (!item || item.state !== "pending") {
      throw new Error(`item ${index} is not pending`);
    }
    if (this.busy) {
      throw new Error("an inference request is already in flight");
    }
    this.busy = true;
    this.emit();
    try {
      const result = await this.api.infer(item.label);
      item.pCorrect = result.p_correct;
      this.banner = null;
      if (result.flagged) {
        item.state = "flagged";
        this.currentIndex = index;
        this.dialog = {
          mistakeTitle: MISTAKE_TITLES[item.label.label_type],
          tip: this.tips.next(item.label.label_type),
          actions: DIALOG_ACTIONS,
          aiNoticeText: AI_NOTICE,
        };
      } else {
        item.state = "kept";
        this.feedback.enqueue(item.label.id, "keep");
      }
    } catch {
      // Service unreachable: stay pending, surface a non-blocking banner.
      this.banner = "Mistake checking is unavailable; the label stays pending.";
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  /** One of the three dialog buttons. */
  dialogAction(action: DialogAction): void {
    if (this.dialog === null || this.currentIndex === null) {
      throw new Error("no intervention dialog is open");
    }
    const item = this.items[this.currentIndex];
    switch (action) {
      case "confirm-keep":
        item.state = "kept";
        this.feedback.enqueue(item.label.id, "keep");
        this.closeDialog();
        break;
      case "remove":
        item.state = "deleted";
        this.feedback.enqueue(item.label.id, "delete");
        this.closeDialog();
        break;
      case "view-common-mistakes":
        this.screen = "common-mistakes";
        this.dialog = null;
        this.feedback.enqueue(item.label.id, "viewed_mistakes");
        break;
    }
    this.emit();
  }

  /** Second-stage navigation: common mistakes -> correct examples. */
  viewCorrectExamples(): void {
    if (this.screen !== "common-mistakes" || this.currentIndex === null) {
      throw new Error("correct examples are reached from the mistakes screen");
    }
    this.screen = "correct-examples";
    this.feedback.enqueue(this.items[this.currentIndex].label.id, "viewed_examples");
    this.emit();
  }

  /** Leaving the example screens returns to the still-flagged item. */
  backToDialog(): void {
    if (this.currentIndex === null) {
      throw new Error("no current item");
    }
    const item = this.items[this.currentIndex];
    this.screen = "queue";
    this.dialog = {
      mistakeTitle: MISTAKE_TITLES[item.label.label_type],
      tip: this.tips.next(item.label.label_type),
      actions: DIALOG_ACTIONS,
      aiNoticeText: AI_NOTICE,
    };
    this.emit();
  }

  /** 1 current-item panel + 3-4 curated cards for the current label type. */
  exampleCards(): { current: SessionItem; cards: ExampleCard[] } {
    if (this.currentIndex === null) {
      throw new Error("no current item");
    }
    const item = this.items[this.currentIndex];
    const cards = DEFAULT_EXAMPLES[item.label.label_type].slice(0, 4);
    return { current: item, cards };
  }

  private closeDialog(): void {
    this.dialog = null;
    this.currentIndex = null;
    this.screen = "queue";
  }

  private emit(): void {
    const snapshot = this.snapshot();
    for (const listener of this.listeners) {
      listener(snapshot);
    }
  }
}
