/** DOM rendering for the intervention demo. All state lives in the
 * SessionController; this module only paints snapshots and forwards clicks.
 */

import { DIALOG_BUTTON_TEXT } from "./session";
import type { SessionController, SessionSnapshot } from "./session";
import type { DialogAction, SessionItem } from "./types";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

const STATE_BADGE: Record<SessionItem["state"], string> = {
  pending: "pending",
  flagged: "needs review",
  kept: "kept",
  deleted: "removed",
};

export function mount(root: HTMLElement, controller: SessionController): void {
  controller.subscribe((snapshot) => render(root, controller, snapshot));
  render(root, controller, controller.snapshot());
}

function render(
  root: HTMLElement,
  controller: SessionController,
  snapshot: SessionSnapshot,
): void {
  root.replaceChildren();

  if (snapshot.banner) {
    root.appendChild(el("div", "banner", snapshot.banner));
  }

  if (snapshot.screen === "common-mistakes" || snapshot.screen === "correct-examples") {
    root.appendChild(renderExamples(controller, snapshot));
    return;
  }

  const queue = el("div", "queue");
  snapshot.items.forEach((item, index) => {
    const row = el("div", `item item-${item.state}`);
    row.appendChild(el("span", "item-type", item.label.label_type));
    row.appendChild(
      el("span", "item-meta", `sev ${item.label.severity ?? "–"} · zoom ${item.label.zoom}`),
    );
    row.appendChild(el("span", "badge", STATE_BADGE[item.state]));
    if (item.state === "pending") {
      const btn = el("button", "submit", "Submit label");
      btn.disabled = snapshot.busy;
      btn.onclick = () => void controller.submitLabel(index);
      row.appendChild(btn);
    }
    queue.appendChild(row);
  });
  root.appendChild(queue);

  if (snapshot.dialog) {
    root.appendChild(renderDialog(controller, snapshot));
  }
}

function renderDialog(controller: SessionController, snapshot: SessionSnapshot): HTMLElement {
  const dialog = snapshot.dialog!;
  const overlay = el("div", "overlay");
  const box = el("div", "dialog");
  box.setAttribute("role", "dialog");

  const title = el("div", "dialog-title");
  title.appendChild(el("span", undefined, dialog.mistakeTitle));
  const info = el("span", "ai-notice-icon", "i");
  info.tabIndex = 0;
  const tooltip = el("span", "ai-notice-tooltip", dialog.aiNoticeText);
  tooltip.hidden = true;
  info.addEventListener("mouseenter", () => (tooltip.hidden = false));
  info.addEventListener("focus", () => (tooltip.hidden = false));
  info.addEventListener("mouseleave", () => (tooltip.hidden = true));
  info.addEventListener("blur", () => (tooltip.hidden = true));
  title.appendChild(info);
  title.appendChild(tooltip);
  box.appendChild(title);

  box.appendChild(el("p", "tip", dialog.tip));

  const buttons = el("div", "dialog-buttons");
  for (const action of dialog.actions) {
    const btn = el("button", `action action-${action}`, DIALOG_BUTTON_TEXT[action]);
    btn.onclick = () => controller.dialogAction(action as DialogAction);
    buttons.appendChild(btn);
  }
  box.appendChild(buttons);
  overlay.appendChild(box);
  return overlay;
}

function renderExamples(
  controller: SessionController,
  snapshot: SessionSnapshot,
): HTMLElement {
  const { current, cards } = controller.exampleCards();
  const wrap = el("div", "examples-screen");
  wrap.appendChild(
    el(
      "h2",
      undefined,
      snapshot.screen === "common-mistakes" ? "Common Mistakes" : "Correct Examples",
    ),
  );

  const currentPanel = el("div", "current-item");
  currentPanel.appendChild(el("h3", undefined, "Your label"));
  currentPanel.appendChild(el("p", undefined, `${current.label.label_type} (severity ${current.label.severity ?? "–"})`));
  wrap.appendChild(currentPanel);

  const grid = el("div", "card-grid");
  for (const card of cards) {
    const node = el("div", "card");
    node.appendChild(el("h4", undefined, card.title));
    node.appendChild(el("p", undefined, card.caption));
    grid.appendChild(node);
  }
  wrap.appendChild(grid);

  const nav = el("div", "nav");
  if (snapshot.screen === "common-mistakes") {
    const toExamples = el("button", "nav-examples", "View Correct Examples");
    toExamples.onclick = () => controller.viewCorrectExamples();
    nav.appendChild(toExamples);
  }
  const back = el("button", "nav-back", "Back to my label");
  back.onclick = () => controller.backToDialog();
  nav.appendChild(back);
  wrap.appendChild(nav);
  return wrap;
}
