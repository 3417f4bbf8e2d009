// End-to-end: boot the console against a real running service instance,
// submit a patient, and check the rendered result against the API response.

import { spawn, ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { boot } from "../src/main.js";

const PORT = 8765;
const BASE = `http://127.0.0.1:${PORT}`;
let server: ChildProcess;

async function waitForHealth(): Promise<void> {
  for (let i = 0; i < 120; i++) {
    try {
      const res = await fetch(`${BASE}/v1/health`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 500));
  }
  throw new Error("fixture service did not come up");
}

beforeAll(async () => {
  const python = process.env.PYTHON ?? "/usr/bin/python3";
  server = spawn(python, ["test/fixture_server.py", String(PORT)], {
    cwd: process.cwd(),  // vitest runs from frontend/
    stdio: ["ignore", "pipe", "pipe"],
    env: { ...process.env },
  });
  let childLog = "";
  server.stdout?.on("data", (d) => (childLog += d));
  server.stderr?.on("data", (d) => (childLog += d));
  try {
    await waitForHealth();
  } catch (e) {
    throw new Error(`${e}\nfixture server output:\n${childLog}`);
  }
});

afterAll(() => {
  server?.kill();
});

function fillValid(model: Awaited<ReturnType<typeof boot>>["model"]) {
  for (const f of model.fields) {
    if (f.spec.kind === "numeric") {
      model.setValue(f.spec.name, "0.5");
    }
  }
  model.setValue("Residence type", "Urban");
  model.setValue("Smoking status", "never smoked");
}

describe("console against a live service", () => {
  it("builds the form from /v1/schema with 16 inputs", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    await boot(root, new ApiClient(BASE));
    const inputs = root.querySelectorAll("#form input, #form select");
    expect(inputs).toHaveLength(16);
    const selects = root.querySelectorAll("#form select");
    expect(selects).toHaveLength(2); // the two categorical fields
  });

  it("renders a chip matching the API's predicted class, and a cloned "
     + "resubmission is identical", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const client = new ApiClient(BASE);
    const { model, submit, history } = await boot(root, client);

    fillValid(model);
    await submit();
    expect(history).toHaveLength(1);
    const first = history[0].prediction;

    const chip = root.querySelector("#result .severity-chip")!;
    expect(chip.className).toContain(`severity-${first.predicted_class}`);
    expect(chip.textContent).toBe(first.predicted_class.toUpperCase());

    // direct API call agrees with what the console displayed
    const direct = await client.predict(history[0].record);
    expect(direct.predicted_class).toBe(first.predicted_class);
    expect(direct.probabilities).toEqual(first.probabilities);

    const bars = root.querySelectorAll("#result .bar-row");
    expect(bars).toHaveLength(4);

    // clone without edits -> identical prediction appended to history
    model.fill(history[0].record);
    await submit();
    expect(history).toHaveLength(2);
    expect(history[1].prediction.probabilities).toEqual(first.probabilities);
    expect(history[1].prediction.predicted_class).toBe(first.predicted_class);
  });

  it("surfaces field-level 422 errors from the service", async () => {
    const root = document.createElement("div");
    document.body.appendChild(root);
    const client = new ApiClient(BASE);
    const err = await client
      .predict({ ...Object.fromEntries(
        Array.from({ length: 16 }, (_, i) => [`f${i}`, 1])) })
      .catch((e) => e);
    expect(err.status).toBe(400); // unknown fields + missing canonical ones
  });
});
