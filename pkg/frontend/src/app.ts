import { GatewayError, fetchInbox } from "./gateway.js";
import type { GatewayApi } from "./gateway.js";
import {
  buildEmptyState,
  buildLeaderboard,
  buildNotFound,
  buildTaskCard,
  setCardError,
} from "./render.js";
import type { InboxView, ResponseDoc } from "./types.js";

export interface AppOptions {
  /** Poll interval in milliseconds; 0 disables polling. */
  pollMs?: number;
}

interface CardSlot {
  doc: string;
  element: HTMLElement;
}

/** Inbox controller: polls the gateway, renders cards and the leaderboard,
 * and turns card interactions into single response submissions.
 *
 * State only ever changes after a gateway acknowledgment: a submitted card
 * stays on screen (with its inputs intact) until the refreshed inbox no
 * longer lists the task.  While the gateway is unreachable the last good
 * view stays visible behind a banner, with every submit disabled so nothing
 * stale can be sent. */
export class InboxApp {
  private readonly cards = new Map<string, CardSlot>();
  private readonly inFlight = new Set<string>();
  private view: InboxView | null = null;
  private banner: string | null = null;
  private notFound = false;
  private refreshing = false;
  private timer: ReturnType<typeof setInterval> | null = null;

  private readonly taskList: HTMLElement;
  private readonly bannerBox: HTMLElement;
  private readonly boardBox: HTMLElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: GatewayApi,
    readonly human: string,
    private readonly options: AppOptions = {},
  ) {
    root.textContent = "";
    this.bannerBox = document.createElement("div");
    this.bannerBox.className = "banner";
    this.bannerBox.hidden = true;
    const heading = document.createElement("h1");
    heading.textContent = `Inbox: ${human}`;
    this.taskList = document.createElement("section");
    this.taskList.className = "task-list";
    this.boardBox = document.createElement("div");
    this.boardBox.className = "board-box";
    root.append(this.bannerBox, heading, this.taskList, this.boardBox);
  }

  async start(): Promise<void> {
    await this.refresh();
    const pollMs = this.options.pollMs ?? 3000;
    if (pollMs > 0) {
      this.timer = setInterval(() => {
        void this.refresh();
      }, pollMs);
    }
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async refresh(): Promise<void> {
    if (this.refreshing) return;
    this.refreshing = true;
    try {
      const view = await fetchInbox(this.client, this.human);
      this.view = view;
      this.banner = null;
      this.notFound = false;
      this.render();
    } catch (exc) {
      if (exc instanceof GatewayError && exc.status === 404) {
        this.notFound = true;
        this.render();
      } else {
        const reason = exc instanceof Error ? exc.message : String(exc);
        this.banner = `Gateway unavailable (${reason}); retrying. Submissions are paused.`;
        this.applyBanner();
      }
    } finally {
      this.refreshing = false;
    }
  }

  /** Submit one card.  Exactly one gateway request per accepted click;
   * repeat clicks while a submission is in flight are ignored. */
  async submit(taskId: string, card: HTMLElement): Promise<void> {
    if (this.banner !== null) return;
    if (this.inFlight.has(taskId)) return;
    const response = this.collectResponse(card);
    if (typeof response === "string") {
      setCardError(card, response);
      return;
    }
    setCardError(card, null);
    this.inFlight.add(taskId);
    const button = card.querySelector<HTMLButtonElement>(".submit-btn");
    if (button) button.disabled = true;
    try {
      await this.client.submitResponse(taskId, response);
      await this.refreshAfterAck();
    } catch (exc) {
      const message =
        exc instanceof GatewayError ? `${exc.code}: ${exc.message}` : String(exc);
      setCardError(card, message);
    } finally {
      this.inFlight.delete(taskId);
      if (button && card.isConnected) button.disabled = this.banner !== null;
    }
  }

  /** A post-ack refresh that must not silently lose the acknowledgment: a
   * failing poll here still leaves the banner explaining the pause. */
  private async refreshAfterAck(): Promise<void> {
    await this.refresh();
  }

  private collectResponse(card: HTMLElement): ResponseDoc | string {
    const kind = card.dataset.kind;
    if (kind === "Validate") {
      const verdicts: Record<string, "accurate" | "inaccurate"> = {};
      for (const controls of Array.from(
        card.querySelectorAll<HTMLElement>(".verdict-controls"),
      )) {
        const chosen = controls.dataset.chosen;
        const key = controls.dataset.key;
        if (!key || (chosen !== "accurate" && chosen !== "inaccurate")) continue;
        verdicts[key] = chosen;
      }
      if (Object.keys(verdicts).length === 0) {
        return "Pick accurate or inaccurate for at least one cell.";
      }
      return { kind: "verdict", verdicts };
    }
    if (kind === "Repair") {
      const values: Record<string, string> = {};
      for (const input of Array.from(
        card.querySelectorAll<HTMLInputElement>(".repair-input"),
      )) {
        const key = input.dataset.key;
        const value = input.value.trim();
        if (key && value !== "") values[key] = value;
      }
      if (Object.keys(values).length === 0) {
        return "Enter a replacement value for at least one cell.";
      }
      return { kind: "repair", values };
    }
    const suspects: string[] = [];
    const clean: string[] = [];
    for (const box of Array.from(card.querySelectorAll<HTMLInputElement>(".flag-box"))) {
      const key = box.dataset.key;
      if (!key) continue;
      (box.checked ? suspects : clean).push(key);
    }
    return { kind: "report", suspects, clean };
  }

  private render(): void {
    if (this.notFound) {
      this.cards.clear();
      this.taskList.textContent = "";
      this.taskList.append(buildNotFound(this.human));
      this.boardBox.textContent = "";
      this.applyBanner();
      return;
    }
    if (!this.view) return;

    const seen = new Set<string>();
    const ordered: HTMLElement[] = [];
    for (const task of this.view.tasks) {
      const doc = JSON.stringify(task);
      const slot = this.cards.get(task.id);
      if (slot && slot.doc === doc) {
        ordered.push(slot.element);
      } else {
        const element = buildTaskCard(task, (id, card) => void this.submit(id, card));
        this.cards.set(task.id, { doc, element });
        ordered.push(element);
      }
      seen.add(task.id);
    }
    for (const id of Array.from(this.cards.keys())) {
      if (!seen.has(id)) this.cards.delete(id);
    }
    this.taskList.replaceChildren(...(ordered.length ? ordered : [buildEmptyState(this.human)]));

    this.boardBox.replaceChildren(buildLeaderboard(this.view.leaderboard));
    this.applyBanner();
  }

  private applyBanner(): void {
    this.bannerBox.hidden = this.banner === null;
    this.bannerBox.textContent = this.banner ?? "";
    for (const button of Array.from(
      this.root.querySelectorAll<HTMLButtonElement>(".submit-btn"),
    )) {
      button.disabled = this.banner !== null;
    }
  }
}
