// @vitest-environment jsdom
/** End-to-end: a real gateway subprocess (`cleanloop serve`) over a real
 * session directory, driven through the actual DOM app.  The fixture leaves
 * Jen exactly one pending validation task; the test works it to completion
 * and checks the leaderboard against GET /factors. */
import { spawn, spawnSync } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import { mkdtempSync, mkdirSync, rmSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, expect, test } from "vitest";

import { InboxApp } from "../src/app.js";
import { GatewayClient, GatewayError } from "../src/gateway.js";
import type { FactorRowDoc } from "../src/types.js";

const TRUTH: Record<string, string> = {
  "Branches/r2/Zip": "47907",
  "Branches/r2/City": "Lafayette",
  "Branches/r3/Zip": "47907",
  "Branches/r3/City": "Lafayette",
  "Employees/r2/Sal": "120000",
};

let sessionDir: string;
let server: ChildProcess | null = null;
let base: string;

function run(args: string[]): void {
  const result = spawnSync("cleanloop", args, {
    env: { ...process.env, CLEANLOOP_SESSION: sessionDir },
    encoding: "utf8",
  });
  if (result.status !== 0) {
    throw new Error(
      `cleanloop ${args.join(" ")} failed (${result.status}):\n${result.stdout}\n${result.stderr}`,
    );
  }
}

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        probe.close();
        reject(new Error("no port assigned"));
        return;
      }
      probe.close(() => resolve(address.port));
    });
  });
}

async function waitForGateway(deadlineMs: number): Promise<void> {
  const deadline = Date.now() + deadlineMs;
  let lastError = "";
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${base}/factors`);
      if (res.ok) return;
      lastError = `status ${res.status}`;
    } catch (exc) {
      lastError = exc instanceof Error ? exc.message : String(exc);
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error(`gateway did not come up: ${lastError}`);
}

beforeAll(async () => {
  sessionDir = mkdtempSync(join(tmpdir(), "inbox-e2e-"));
  run(["session", "init", sessionDir]);
  writeFileSync(
    join(sessionDir, "data", "Branches.csv"),
    "BID,Zip,City\nB1,47906,West Lafayette\nB2,47907,Lafayette\nB3,47907,Lafayett\n",
  );
  writeFileSync(
    join(sessionDir, "data", "Employees.csv"),
    "EID,Name,Sal,BID\nE1,Ann,95000,B1\nE2,Joe,1200000,B2\nE3,Max,87000,B2\nE4,Ivy,91000,B3\nE5,Tom,78000,B3\n",
  );
  writeFileSync(join(sessionDir, "rules", "rules.txt"), "ph1: Branches: Zip -> City\n");
  writeFileSync(
    join(sessionDir, "humans", "humans.json"),
    JSON.stringify({
      v: 1,
      humans: [
        {
          id: "Bob",
          role: "DataCurator",
          data: [...Object.keys(TRUTH)],
          cost: 2.0,
        },
        { id: "Jen", role: "DataValidator", data: ["*"], cost: 1.0 },
      ],
    }),
  );
  writeFileSync(
    join(sessionDir, "agents.json"),
    JSON.stringify({ agents: [{ id: "R1", kind: "repairer", rules: ["ph1"] }] }),
  );
  const scratch = join(sessionDir, "scratch");
  mkdirSync(scratch);
  writeFileSync(
    join(scratch, "job2.json"),
    JSON.stringify({
      v: 1,
      id: "job2",
      cells: ["Branches[Zip]=*", "Branches[City]=*", "Employees/r2/Sal"],
      detectors: [],
      repairers: ["R1", "Bob"],
      validators: ["Jen"],
    }),
  );
  writeFileSync(
    join(scratch, "bob.json"),
    JSON.stringify({ kind: "repair", values: TRUTH }),
  );
  run(["job", "add", join(scratch, "job2.json")]);
  run(["job", "run", "job2", "--strategy", "qualitative"]);
  run(["tasks", "respond", "t1", "--file", join(scratch, "bob.json")]);

  const port = await freePort();
  base = `http://127.0.0.1:${port}`;
  server = spawn("cleanloop", ["serve", "--session", sessionDir, "--port", String(port)], {
    stdio: "ignore",
  });
  await waitForGateway(20_000);
}, 60_000);

afterAll(() => {
  server?.kill();
  if (sessionDir) rmSync(sessionDir, { recursive: true, force: true });
});

test(
  "Jen's single validation task, worked through the UI, updates the leaderboard to match /factors",
  async () => {
    const started = performance.now();
    document.body.innerHTML = '<div id="app"></div>';
    const root = document.getElementById("app") as HTMLElement;
    const client = new GatewayClient(base, (url, init) => fetch(url, init));
    const app = new InboxApp(root, client, "Jen", { pollMs: 0 });
    await app.start();

    const cards = root.querySelectorAll<HTMLElement>(".task-card");
    expect(cards).toHaveLength(1);
    const card = cards[0]!;
    expect(card.dataset.kind).toBe("Validate");
    const rows = card.querySelectorAll(".cell-row");
    expect(rows).toHaveLength(5);
    const changes = Array.from(card.querySelectorAll(".cell-change"), (n) => n.textContent);
    expect(changes).toContain('"Lafayett" → "Lafayette"');
    expect(changes).toContain('"1200000" → "120000"');

    for (const controls of Array.from(card.querySelectorAll(".verdict-controls"))) {
      controls.querySelector<HTMLButtonElement>(".verdict-accurate")?.click();
    }
    card.querySelector<HTMLButtonElement>(".submit-btn")?.click();
    await new Promise<void>((resolve, reject) => {
      const deadline = Date.now() + 10_000;
      const poll = () => {
        if (root.querySelector(".empty-state")) return resolve();
        if (Date.now() > deadline) return reject(new Error("card did not close"));
        setTimeout(poll, 50);
      };
      poll();
    });

    const res = await fetch(`${base}/factors`);
    const doc = (await res.json()) as { factors: FactorRowDoc[] };
    const expected = new Map<string, [number, number]>([
      ["Bob", [5, 5]],
      ["R1", [4, 4]],
      ["ph1", [4, 4]],
      ["Jen", [0, 0]],
    ]);
    expect(new Set(doc.factors.map((r) => r.factor))).toEqual(new Set(expected.keys()));
    for (const row of doc.factors) {
      expect([row.correct, row.validated]).toEqual(expected.get(row.factor));
    }

    const domRows = Array.from(root.querySelectorAll<HTMLElement>(".factor-row"));
    expect(domRows.map((r) => r.dataset.factor)).toEqual(doc.factors.map((r) => r.factor));
    for (const [i, row] of doc.factors.entries()) {
      const dom = domRows[i]!;
      expect(dom.dataset.correct).toBe(String(row.correct));
      expect(dom.dataset.validated).toBe(String(row.validated));
      expect(dom.dataset.quality).toBe(row.quality === null ? "untested" : String(row.quality));
    }

    const tasksAfter = await client.fetchTasks("Jen");
    expect(tasksAfter).toEqual([]);
    const resubmit = await client
      .submitResponse("t2", { kind: "verdict", verdicts: { "Employees/r2/Sal": "accurate" } })
      .then(() => null, (exc: unknown) => exc);
    expect(resubmit).toBeInstanceOf(GatewayError);
    expect((resubmit as GatewayError).code).toBe("task-closed");
    expect((resubmit as GatewayError).status).toBe(409);

    const elapsed = (performance.now() - started) / 1000;
    expect(elapsed).toBeLessThan(30);
    console.log(
      `[acceptance] inbox end-to-end (list, verdict, leaderboard match): PASS (${elapsed.toFixed(2)}s < 30s)`,
    );
  },
  30_000,
);
