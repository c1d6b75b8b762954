import type {
  FactorRowDoc,
  InboxView,
  PendingTaskDoc,
  ResponseAck,
  ResponseDoc,
} from "./types.js";

/** One failed gateway interaction.  `retryable` means the gateway never saw
 * the request (network failure), so trying again is safe and expected. */
export class GatewayError extends Error {
  readonly code: string;
  readonly status: number;
  readonly retryable: boolean;

  constructor(code: string, status: number, message: string, retryable = false) {
    super(message);
    this.name = "GatewayError";
    this.code = code;
    this.status = status;
    this.retryable = retryable;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** What the inbox needs from the gateway; `GatewayClient` is the HTTP
 * implementation, tests substitute scripted ones. */
export interface GatewayApi {
  fetchTasks(human: string): Promise<PendingTaskDoc[]>;
  fetchFactors(): Promise<FactorRowDoc[]>;
  submitResponse(taskId: string, response: ResponseDoc): Promise<ResponseAck>;
}

/** Thin typed client over the gateway wire API.  No caching, no batching:
 * every call is exactly one HTTP request. */
export class GatewayClient implements GatewayApi {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    if (fetchFn) {
      this.fetchFn = fetchFn;
    } else if (typeof globalThis.fetch === "function") {
      this.fetchFn = (input, init) => globalThis.fetch(input, init);
    } else {
      throw new Error("no fetch implementation available");
    }
  }

  async fetchTasks(human: string): Promise<PendingTaskDoc[]> {
    const doc = await this.request("GET", `/humans/${encodeURIComponent(human)}/tasks`);
    return (doc as { tasks: PendingTaskDoc[] }).tasks;
  }

  async fetchFactors(): Promise<FactorRowDoc[]> {
    const doc = await this.request("GET", "/factors");
    return (doc as { factors: FactorRowDoc[] }).factors;
  }

  async submitResponse(taskId: string, response: ResponseDoc): Promise<ResponseAck> {
    const doc = await this.request(
      "POST",
      `/tasks/${encodeURIComponent(taskId)}/response`,
      response,
    );
    return doc as ResponseAck;
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    let res: Response;
    try {
      res = await this.fetchFn(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (exc) {
      const reason = exc instanceof Error ? exc.message : String(exc);
      throw new GatewayError("unreachable", 0, `gateway unreachable: ${reason}`, true);
    }
    if (res.ok) return res.json();
    let code = "http-error";
    let message = `${res.status} ${res.statusText}`;
    try {
      const doc = (await res.json()) as { error?: { code?: string; message?: string } };
      if (doc.error?.code) code = doc.error.code;
      if (doc.error?.message) message = doc.error.message;
    } catch {
      // non-JSON error body: keep the status-line message
    }
    throw new GatewayError(code, res.status, message);
  }
}

/** Snapshot of one human's world: open tasks plus the factor leaderboard,
 * both verbatim from the gateway. */
export async function fetchInbox(client: GatewayApi, human: string): Promise<InboxView> {
  const [tasks, leaderboard] = await Promise.all([
    client.fetchTasks(human),
    client.fetchFactors(),
  ]);
  return { human, tasks, leaderboard };
}
