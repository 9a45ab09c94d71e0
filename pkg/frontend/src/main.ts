/** Browser bootstrap: load the static session file and mount the demo. */

import { ApiClient } from "./api";
import { TipRotation } from "./content";
import { SessionController } from "./session";
import { mount } from "./ui";
import type { LabelTypeName, SessionFile } from "./types";

/** Tips are an editable content pack; fall back to the built-ins. */
async function loadTips(url: string): Promise<TipRotation> {
  try {
    const response = await fetch(url);
    if (response.ok) {
      return new TipRotation((await response.json()) as Record<LabelTypeName, string[]>);
    }
  } catch {
    // built-ins below
  }
  return new TipRotation();
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const serviceUrl = params.get("service") ?? "http://127.0.0.1:8080";
  const sessionUrl = params.get("session") ?? "./session.json";

  const api = new ApiClient(serviceUrl);
  const controller = new SessionController(api, {
    tips: await loadTips(params.get("tips") ?? "./tips.json"),
  });

  const response = await fetch(sessionUrl);
  if (!response.ok) {
    document.body.textContent = `could not load session file: ${response.status}`;
    return;
  }
  controller.loadSession((await response.json()) as SessionFile);

  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  mount(root, controller);

  window.addEventListener("beforeunload", () => {
    void controller.feedback.flush();
  });
}

void boot();
