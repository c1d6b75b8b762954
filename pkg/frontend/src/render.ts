import { cellKey } from "./types.js";
import type { FactorRowDoc, PendingTaskDoc, TaskCellDoc } from "./types.js";

/** DOM builders for the inbox.  Pure construction: no network, no app state.
 * Input widgets carry their cell key in data attributes so the controller can
 * collect a response document straight from the card element. */

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

function contextPanel(cell: TaskCellDoc): HTMLElement {
  const panel = el("div", "cell-context");
  const entries = Object.entries(cell.context);
  panel.textContent = entries.length
    ? entries.map(([attr, value]) => `${attr}: ${value}`).join("  ·  ")
    : "(no row context)";
  return panel;
}

function cellHeader(cell: TaskCellDoc): HTMLElement {
  const head = el("div", "cell-head");
  head.append(el("span", "cell-key", cellKey(cell)));
  if (cell.old !== null || cell.new !== null) {
    head.append(el("span", "cell-change", `${JSON.stringify(cell.old)} → ${JSON.stringify(cell.new)}`));
  } else {
    head.append(el("span", "cell-value", JSON.stringify(cell.value)));
  }
  return head;
}

function validateControls(key: string): HTMLElement {
  const controls = el("div", "cell-controls verdict-controls");
  controls.dataset.key = key;
  for (const verdict of ["accurate", "inaccurate"] as const) {
    const button = el("button", `verdict-btn verdict-${verdict}`, verdict);
    button.type = "button";
    button.dataset.verdict = verdict;
    button.addEventListener("click", () => {
      controls.dataset.chosen = verdict;
      for (const sibling of Array.from(controls.querySelectorAll("button"))) {
        sibling.classList.toggle("chosen", sibling === button);
      }
    });
    controls.append(button);
  }
  return controls;
}

function repairControls(key: string, current: string): HTMLElement {
  const controls = el("div", "cell-controls repair-controls");
  const input = el("input", "repair-input");
  input.type = "text";
  input.dataset.key = key;
  input.placeholder = `replacement for ${JSON.stringify(current)}`;
  controls.append(input);
  return controls;
}

function reportControls(key: string): HTMLElement {
  const controls = el("div", "cell-controls report-controls");
  const label = el("label", "flag-label");
  const box = el("input", "flag-box");
  box.type = "checkbox";
  box.dataset.key = key;
  label.append(box, document.createTextNode(" flag as error"));
  controls.append(label);
  return controls;
}

export function buildTaskCard(
  task: PendingTaskDoc,
  onSubmit: (taskId: string, card: HTMLElement) => void,
): HTMLElement {
  const card = el("article", "task-card");
  card.dataset.task = task.id;
  card.dataset.kind = task.kind;

  const head = el("header", "task-head");
  head.append(el("span", "task-id", task.id));
  head.append(el("span", "task-kind", task.kind));
  head.append(el("span", "task-job", `job ${task.job}`));
  card.append(head);

  for (const cell of task.cells) {
    const row = el("div", "cell-row");
    row.append(cellHeader(cell));
    row.append(contextPanel(cell));
    const key = cellKey(cell);
    if (task.kind === "Validate") row.append(validateControls(key));
    else if (task.kind === "Repair") row.append(repairControls(key, cell.value));
    else row.append(reportControls(key));
    card.append(row);
  }

  const footer = el("footer", "task-footer");
  const error = el("div", "card-error");
  error.hidden = true;
  const submit = el("button", "submit-btn", "Submit");
  submit.type = "button";
  submit.addEventListener("click", () => onSubmit(task.id, card));
  footer.append(error, submit);
  card.append(footer);
  return card;
}

export function setCardError(card: HTMLElement, message: string | null): void {
  const error = card.querySelector<HTMLElement>(".card-error");
  if (!error) return;
  error.hidden = message === null;
  error.textContent = message ?? "";
}

export function buildLeaderboard(rows: FactorRowDoc[]): HTMLElement {
  const section = el("section", "leaderboard");
  section.append(el("h2", undefined, "Factor quality"));
  const table = el("table", "leaderboard-table");
  const head = el("tr");
  for (const title of ["factor", "type", "correct", "validated", "quality"]) {
    head.append(el("th", undefined, title));
  }
  table.append(head);
  for (const row of rows) {
    const tr = el("tr", "factor-row");
    tr.dataset.factor = row.factor;
    tr.dataset.correct = String(row.correct);
    tr.dataset.validated = String(row.validated);
    tr.dataset.quality = row.quality === null ? "untested" : String(row.quality);
    tr.append(el("td", undefined, row.factor));
    tr.append(el("td", undefined, row.type));
    tr.append(el("td", undefined, String(row.correct)));
    tr.append(el("td", undefined, String(row.validated)));
    tr.append(el("td", undefined, row.quality === null ? "untested" : row.quality.toFixed(3)));
    table.append(tr);
  }
  section.append(table);
  return section;
}

export function buildEmptyState(human: string): HTMLElement {
  return el("div", "empty-state", `No open tasks for ${human}.`);
}

export function buildNotFound(human: string): HTMLElement {
  const panel = el("div", "not-found");
  panel.append(el("h2", undefined, "Unknown human"));
  panel.append(el("p", undefined, `The gateway has no human ${JSON.stringify(human)} in its pool.`));
  return panel;
}
