/** Wire documents exactly as the gateway emits them.  The UI never derives
 * or recomputes any of these values; it renders what it was given. */

export type TaskKind = "Detect" | "Repair" | "Validate" | "Specify";

export interface TaskCellDoc {
  relation: string;
  row: string;
  attribute: string;
  /** Current value of the cell when the task was opened. */
  value: string;
  /** Pre/post values of the repair under validation; null outside validate tasks. */
  old: string | null;
  new: string | null;
  generation: number;
  /** Row neighborhood: attribute -> value for the cell's whole row. */
  context: Record<string, string>;
}

export interface PendingTaskDoc {
  v: number;
  id: string;
  assignee: string;
  kind: TaskKind;
  job: string;
  cells: TaskCellDoc[];
  evidence: Record<string, Record<string, unknown>>;
  closed: boolean;
}

export interface FactorRowDoc {
  factor: string;
  type: string;
  correct: number;
  validated: number;
  quality: number | null;
  status: "untested" | "scored";
}

export interface ResponseAck {
  v: number;
  task: string;
  seq: number;
  job: string;
  job_status: string;
}

export type ResponseDoc =
  | { kind: "report"; suspects: string[]; clean: string[] }
  | { kind: "repair"; values: Record<string, string> }
  | { kind: "verdict"; verdicts: Record<string, "accurate" | "inaccurate"> };

export interface InboxView {
  human: string;
  tasks: PendingTaskDoc[];
  leaderboard: FactorRowDoc[];
}

export function cellKey(cell: TaskCellDoc): string {
  return `${cell.relation}/${cell.row}/${cell.attribute}`;
}
