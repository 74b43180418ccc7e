/**
 * Annotation screen: rate queued reviews on the two 1-4 scales and
 * work the needs-discussion queue.
 *
 * The card advances optimistically on submit and rolls back if the
 * server rejects the rating; in-progress selections persist to
 * localStorage so nothing is lost on a network drop or reload.
 */
import { ApiClient, ApiError, MergedAnnotation, ReviewCard } from "./api.js";
import { clear, el } from "./dom.js";

const QUEUE_BATCH = 20;
const SCALES = ["convincingness", "severity"] as const;
type Scale = (typeof SCALES)[number];

const SCALE_HINTS: Record<Scale, string> = {
  convincingness: "how strongly the review establishes real misuse",
  severity: "how badly the victim is affected",
};

interface Draft {
  convincingness: number | null;
  severity: number | null;
}

function draftKey(annotator: string, reviewId: string): string {
  return `misuseaudit.draft.${annotator}.${reviewId}`;
}

export function loadDraft(annotator: string, reviewId: string): Draft {
  const raw = localStorage.getItem(draftKey(annotator, reviewId));
  if (!raw) return { convincingness: null, severity: null };
  try {
    return JSON.parse(raw) as Draft;
  } catch {
    return { convincingness: null, severity: null };
  }
}

export class AnnotateScreen {
  annotator = "";
  queue: ReviewCard[] = [];
  private draft: Draft = { convincingness: null, severity: null };

  constructor(private root: HTMLElement, private api: ApiClient) {}

  async init(): Promise<void> {
    const remembered = localStorage.getItem("misuseaudit.annotator");
    if (remembered) {
      await this.start(remembered);
    } else {
      this.renderLogin();
    }
  }

  private renderLogin(message = ""): void {
    clear(this.root);
    const input = el("input", {
      id: "annotator-input",
      placeholder: "annotator id",
    });
    const button = el("button", { id: "annotator-start" }, "Start");
    button.addEventListener("click", () => {
      const name = input.value.trim();
      if (name) void this.start(name);
    });
    this.root.append(
      el("h2", {}, "Annotate reviews"),
      message ? el("p", { class: "error" }, message) : "",
      el("div", { class: "login" }, input, button),
    );
  }

  async start(annotator: string): Promise<void> {
    try {
      await this.api.registerAnnotator(annotator);
      this.annotator = annotator;
      localStorage.setItem("misuseaudit.annotator", annotator);
      this.queue = await this.api.queue(annotator, QUEUE_BATCH);
    } catch (err) {
      this.renderLogin(err instanceof Error ? err.message : String(err));
      return;
    }
    await this.renderCard();
  }

  current(): ReviewCard | undefined {
    return this.queue[0];
  }

  async renderCard(banner = ""): Promise<void> {
    clear(this.root);
    const card = this.current();
    this.root.append(el("h2", {}, `Annotate reviews · ${this.annotator}`));
    if (banner) {
      const retry = el("button", { id: "retry" }, "Retry");
      retry.addEventListener("click", () => void this.submit());
      this.root.append(el("div", { class: "banner error" }, banner, retry));
    }
    if (!card) {
      this.root.append(
        el("p", { id: "queue-complete" }, "Queue complete. Nothing left to rate."),
      );
      await this.renderDiscussion();
      return;
    }

    this.draft = loadDraft(this.annotator, card.review_id);
    const meta = [
      card.app_id,
      card.rating === null ? "unrated" : `${card.rating}/5`,
      card.date ?? "",
    ].filter(Boolean).join(" · ");
    const cardBox = el(
      "div",
      { class: "card", "data-review": card.review_id },
      el("h3", {}, card.title || "(untitled)"),
      el("p", { class: "meta" }, meta),
      el("p", { class: "body" }, card.body),
    );
    for (const scale of SCALES) {
      cardBox.append(this.scaleRow(scale));
    }

    const submit = el("button", { id: "submit", disabled: "" }, "Submit rating");
    submit.addEventListener("click", () => void this.submit());
    const skip = el("button", { id: "skip", class: "secondary" }, "Skip");
    skip.addEventListener("click", () => {
      // no POST: the review stays server-side and returns after reload
      this.queue.push(this.queue.shift()!);
      void this.renderCard();
    });
    cardBox.append(el("div", { class: "actions" }, submit, skip));
    this.root.append(cardBox);
    this.syncSubmitState();
    await this.renderDiscussion();
  }

  private scaleRow(scale: Scale): HTMLElement {
    const row = el("div", { class: "scale", "data-scale": scale });
    row.append(el("span", { class: "label" }, `${scale}: ${SCALE_HINTS[scale]}`));
    for (const value of [1, 2, 3, 4]) {
      const button = el(
        "button",
        { class: "likert", "data-value": String(value) },
        String(value),
      );
      if (this.draft[scale] === value) button.classList.add("selected");
      button.addEventListener("click", () => this.select(scale, value));
      row.append(button);
    }
    return row;
  }

  private select(scale: Scale, value: number): void {
    this.draft[scale] = value;
    const card = this.current();
    if (card) {
      localStorage.setItem(
        draftKey(this.annotator, card.review_id),
        JSON.stringify(this.draft),
      );
    }
    const row = this.root.querySelector(`[data-scale="${scale}"]`);
    row?.querySelectorAll(".likert").forEach((button) => {
      button.classList.toggle(
        "selected",
        button.getAttribute("data-value") === String(value),
      );
    });
    this.syncSubmitState();
  }

  private syncSubmitState(): void {
    const submit = this.root.querySelector<HTMLButtonElement>("#submit");
    if (!submit) return;
    const ready =
      this.draft.convincingness !== null && this.draft.severity !== null;
    submit.disabled = !ready;
  }

  async submit(): Promise<void> {
    const card = this.current();
    const { convincingness, severity } = this.draft;
    if (!card || convincingness === null || severity === null) return;

    this.queue.shift(); // optimistic advance
    await this.renderCard();
    try {
      await this.api.submitAnnotation(
        card.review_id,
        this.annotator,
        convincingness,
        severity,
      );
      localStorage.removeItem(draftKey(this.annotator, card.review_id));
      await this.renderDiscussion();
    } catch (err) {
      // roll back: the card returns with its draft intact
      this.queue.unshift(card);
      const reason =
        err instanceof ApiError ? err.detail : "network error; rating kept as draft";
      await this.renderCard(reason);
    }
  }

  async renderDiscussion(): Promise<void> {
    let merged: MergedAnnotation[];
    try {
      merged = await this.api.needsDiscussion();
    } catch {
      return; // discussion list is best-effort decoration
    }
    this.root.querySelector("#discussion")?.remove();
    const box = el("div", { id: "discussion" }, el("h3", {}, "Needs discussion"));
    if (!merged.length) {
      box.append(el("p", { class: "meta" }, "No straddle disagreements."));
    }
    for (const row of merged) {
      box.append(this.discussionRow(row));
    }
    this.root.append(box);
  }

  private discussionRow(row: MergedAnnotation): HTMLElement {
    const line = el(
      "div",
      { class: "discussion-row", "data-review": row.review_id },
      el("span", {}, row.review_id),
      el("span", { class: "meta" }, `alarmingness ${row.alarmingness.toFixed(2)}`),
      el(
        "span",
        { class: row.resolved ? "badge resolved" : "badge open" },
        row.resolved ? "resolved" : "open",
      ),
    );
    if (!row.resolved) {
      const pickers = SCALES.map((scale) => {
        const select = el("select", { "data-resolve": scale });
        for (const value of [1, 2, 3, 4]) {
          select.append(el("option", { value: String(value) }, String(value)));
        }
        return select;
      });
      const resolve = el("button", { class: "resolve" }, "Resolve");
      resolve.addEventListener("click", () => {
        void this.api
          .resolve(
            row.review_id,
            Number(pickers[0]!.value),
            Number(pickers[1]!.value),
          )
          .then(() => this.renderDiscussion());
      });
      line.append(...pickers, resolve);
    }
    return line;
  }
}
