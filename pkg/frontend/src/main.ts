import { AnnotateScreen } from "./annotate.js";
import { ApiClient } from "./api.js";
import { TriageScreen } from "./triage.js";

// The bearer token is optional; set localStorage["misuseaudit.token"]
// when the service runs with AUDIT_TOKEN.
function client(): ApiClient {
  return new ApiClient("", localStorage.getItem("misuseaudit.token"));
}

export async function route(root: HTMLElement): Promise<void> {
  const hash = window.location.hash || "#/annotate";
  document.querySelectorAll("nav a").forEach((link) => {
    link.classList.toggle("active", link.getAttribute("href") === hash);
  });
  if (hash === "#/triage") {
    await new TriageScreen(root, client()).init();
  } else {
    await new AnnotateScreen(root, client()).init();
  }
}

function boot(): void {
  const root = document.getElementById("screen");
  if (!root) return;
  window.addEventListener("hashchange", () => void route(root));
  void route(root);
}

boot();
