/**
 * Triage screen: ranked app table, expandable top-alarming evidence,
 * and confirm/reject verdicts with evidence selection.
 */
import { AlarmingReview, ApiClient, ApiError, RankedApp, VerdictState } from "./api.js";
import { clear, el } from "./dom.js";

const EVIDENCE_K = 50;
const EVIDENCE_MIN = 2;
const TERMINAL: ReadonlySet<string> = new Set(["confirmed_exploitable", "rejected"]);

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class TriageScreen {
  rows: RankedApp[] = [];
  private evidence = new Map<string, AlarmingReview[]>();
  private reopened = new Set<string>();

  constructor(private root: HTMLElement, private api: ApiClient) {}

  async init(): Promise<void> {
    clear(this.root);
    this.root.append(el("h2", {}, "Triage ranked apps"));
    try {
      this.rows = await this.api.ranked();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.renderNoScores(err.detail);
        return;
      }
      throw err;
    }
    this.renderTable();
  }

  private renderNoScores(detail: string): void {
    const run = el("button", { id: "run-score" }, "Run score job");
    run.addEventListener("click", () => void this.runScoreJob(run));
    this.root.append(
      el(
        "div",
        { class: "banner", id: "no-scores" },
        `No ranking yet (${detail}). Run the score job once reviews are predicted.`,
        run,
      ),
    );
  }

  private async runScoreJob(button: HTMLButtonElement): Promise<void> {
    button.disabled = true;
    try {
      let job = await this.api.startJob("score");
      while (job.state === "queued" || job.state === "running") {
        await sleep(250);
        job = await this.api.job(job.job_id);
      }
      if (job.state === "failed") {
        button.disabled = false;
        this.root.append(el("p", { class: "error" }, job.error ?? "score job failed"));
        return;
      }
      await this.init();
    } catch (err) {
      button.disabled = false;
      this.root.append(
        el("p", { class: "error" }, err instanceof Error ? err.message : String(err)),
      );
    }
  }

  private auditorBar(): HTMLElement {
    const input = el("input", {
      id: "auditor-input",
      placeholder: "auditor id",
      value: localStorage.getItem("misuseaudit.auditor") ?? "",
    });
    input.addEventListener("input", () => {
      localStorage.setItem("misuseaudit.auditor", input.value.trim());
    });
    return el("div", { class: "auditor-bar" }, el("span", {}, "Auditor:"), input);
  }

  auditor(): string {
    return (
      this.root.querySelector<HTMLInputElement>("#auditor-input")?.value.trim() ?? ""
    );
  }

  private renderTable(): void {
    this.root.querySelector("#ranked")?.remove();
    this.root.append(this.auditorBar());
    const table = el("div", { id: "ranked" });
    for (const row of this.rows) {
      table.append(this.appRow(row));
    }
    this.root.append(table);
  }

  private appRow(row: RankedApp): HTMLElement {
    const box = el("div", { class: "app-row", "data-app": row.app_id });
    const verdictBadge = el(
      "span",
      { class: `badge verdict-${row.verdict ?? "none"}` },
      row.verdict ?? "unreviewed",
    );
    const expand = el("button", { class: "expand" }, "Evidence");
    expand.addEventListener("click", () => void this.toggleEvidence(row, box));
    box.append(
      el("span", { class: "rank" }, `#${row.rank}`),
      el("span", { class: "name" }, row.name),
      el("span", { class: "score" }, row.exploitable_score.toFixed(3)),
      el("span", { class: "meta" }, `${row.bucket3_count} high-bucket reviews`),
      verdictBadge,
      expand,
    );
    return box;
  }

  private async toggleEvidence(row: RankedApp, box: HTMLElement): Promise<void> {
    const existing = box.querySelector(".evidence");
    if (existing) {
      existing.remove();
      return;
    }
    let reviews = this.evidence.get(row.app_id);
    if (!reviews) {
      reviews = await this.api.alarming(row.app_id, EVIDENCE_K, EVIDENCE_MIN);
      this.evidence.set(row.app_id, reviews);
    }
    box.append(this.evidencePanel(row, reviews));
  }

  private evidencePanel(row: RankedApp, reviews: AlarmingReview[]): HTMLElement {
    const panel = el("div", { class: "evidence" });
    for (const review of reviews) {
      const checkbox = el("input", {
        type: "checkbox",
        "data-evidence": review.review_id,
      });
      checkbox.addEventListener("change", () => this.syncVerdictControls(panel, row));
      panel.append(
        el(
          "label",
          { class: "evidence-row" },
          checkbox,
          el("span", { class: "score" }, review.alarmingness.toFixed(2)),
          el("span", {}, `${review.title} · ${review.body}`),
        ),
      );
    }
    panel.append(this.verdictControls(row));
    this.syncVerdictControls(panel, row);
    return panel;
  }

  checkedEvidence(panel: HTMLElement): string[] {
    return Array.from(
      panel.querySelectorAll<HTMLInputElement>("input[data-evidence]:checked"),
    ).map((box) => box.getAttribute("data-evidence")!);
  }

  private verdictControls(row: RankedApp): HTMLElement {
    const controls = el("div", { class: "verdict-controls" });
    const hint = el("span", { class: "hint" });
    const confirm = el("button", { class: "confirm" }, "Confirm exploitable");
    const reject = el("button", { class: "reject" }, "Reject");
    const notes = el("input", { class: "notes", placeholder: "notes" });
    confirm.addEventListener("click", () =>
      void this.recordVerdict(row, "confirmed_exploitable", controls),
    );
    reject.addEventListener("click", () =>
      void this.recordVerdict(row, "rejected", controls),
    );
    controls.append(confirm, reject, notes, hint);

    if (TERMINAL.has(row.verdict ?? "") && !this.reopened.has(row.app_id)) {
      const reopen = el("button", { class: "reopen" }, "Reopen");
      reopen.addEventListener("click", () => void this.reopen(row, controls));
      controls.append(reopen);
    }
    return controls;
  }

  private syncVerdictControls(panel: HTMLElement, row: RankedApp): void {
    const controls = panel.querySelector<HTMLElement>(".verdict-controls");
    if (!controls) return;
    const confirm = controls.querySelector<HTMLButtonElement>(".confirm")!;
    const reject = controls.querySelector<HTMLButtonElement>(".reject")!;
    const hint = controls.querySelector<HTMLElement>(".hint")!;
    const locked = TERMINAL.has(row.verdict ?? "") && !this.reopened.has(row.app_id);
    const evidence = this.checkedEvidence(panel);

    reject.disabled = locked;
    // mirrors the server: confirming needs at least one evidence review
    confirm.disabled = locked || evidence.length === 0;
    hint.textContent = locked
      ? "verdict recorded; reopen to change it"
      : evidence.length === 0
        ? "select at least one evidence review to confirm"
        : "";
  }

  private async recordVerdict(
    row: RankedApp,
    verdict: VerdictState,
    controls: HTMLElement,
  ): Promise<void> {
    const panel = controls.closest<HTMLElement>(".evidence")!;
    const evidence = this.checkedEvidence(panel);
    const notes = controls.querySelector<HTMLInputElement>(".notes")!.value;
    const posted = await this.post(row.app_id, verdict, evidence, notes, controls);
    if (!posted) return;
    this.reopened.delete(row.app_id);
    await this.refreshRows();
  }

  private async reopen(row: RankedApp, controls: HTMLElement): Promise<void> {
    const posted = await this.post(row.app_id, "pending", [], "reopened", controls);
    if (!posted) return;
    this.reopened.add(row.app_id);
    await this.refreshRows();
  }

  /** POST a verdict; on rejection show the server detail inline. */
  private async post(
    appId: string,
    verdict: VerdictState,
    evidence: string[],
    notes: string,
    controls: HTMLElement,
  ): Promise<boolean> {
    try {
      await this.api.postVerdict(appId, verdict, this.auditor(), evidence, notes);
      return true;
    } catch (err) {
      const hint = controls.querySelector<HTMLElement>(".hint")!;
      hint.textContent = err instanceof ApiError ? err.detail : String(err);
      return false;
    }
  }

  /** Re-pull the ranking so badges always reflect server state. */
  private async refreshRows(): Promise<void> {
    this.rows = await this.api.ranked();
    const open = new Set(
      Array.from(this.root.querySelectorAll(".app-row .evidence")).map(
        (panel) => panel.closest<HTMLElement>(".app-row")!.getAttribute("data-app")!,
      ),
    );
    this.root.querySelector(".auditor-bar")?.remove();
    this.renderTable();
    for (const appId of open) {
      const row = this.rows.find((r) => r.app_id === appId);
      const box = this.root.querySelector<HTMLElement>(`[data-app="${appId}"]`);
      if (row && box) await this.toggleEvidence(row, box);
    }
  }
}
