import { ApiClient, ApiError, apiBaseUrl } from "./api.js";
import { FormModel } from "./form.js";
import {
  HistoryEntry,
  renderErrors,
  renderForm,
  renderHistory,
  renderResult,
} from "./view.js";

export async function boot(root: HTMLElement, client: ApiClient): Promise<{
  model: FormModel;
  submit: () => Promise<void>;
  history: HistoryEntry[];
}> {
  root.innerHTML = `
    <header><h1>Triage console</h1><span id="health"></span></header>
    <main>
      <section id="form-panel">
        <div id="form"></div>
        <button id="submit">Predict severity</button>
        <div id="toast"></div>
      </section>
      <section id="result-panel"><div id="result"></div></section>
      <section id="history-panel"><h2>Session history</h2><div id="history"></div></section>
    </main>`;

  const formEl = root.querySelector<HTMLElement>("#form")!;
  const resultEl = root.querySelector<HTMLElement>("#result")!;
  const historyEl = root.querySelector<HTMLElement>("#history")!;
  const submitBtn = root.querySelector<HTMLButtonElement>("#submit")!;
  const toast = root.querySelector<HTMLElement>("#toast")!;

  client.getHealth().then(
    (h) => {
      root.querySelector("#health")!.textContent =
        `${h.model} on ${h.metric}@${h.threshold} · ${h.nodes} patients`;
    },
    () => {
      root.querySelector("#health")!.textContent = "service unreachable";
    },
  );

  let schema;
  try {
    schema = await client.getSchema();
  } catch (e) {
    formEl.innerHTML = `<div class="error-state">Could not load the field schema.
      <button id="retry">Retry</button></div>`;
    formEl.querySelector("#retry")!.addEventListener("click", () => {
      void boot(root, client);
    });
    throw e;
  }

  const model = new FormModel(schema);
  const history: HistoryEntry[] = [];
  let inFlight = false;

  const update = () => {
    submitBtn.disabled = !model.isValid() || inFlight;
  };
  renderForm(formEl, model, (name, value) => {
    model.setValue(name, value);
    renderErrors(formEl, model);
    update();
  });
  update();

  const submit = async () => {
    if (!model.validateAll()) {
      renderErrors(formEl, model);
      update();
      return;
    }
    if (inFlight) return; // one in-flight prediction at a time
    inFlight = true;
    update();
    const record = model.payload();
    try {
      const prediction = await client.predict(record);
      history.push({ record, prediction });
      renderResult(resultEl, prediction);
      renderHistory(historyEl, history, (i) => {
        model.fill(history[i].record);
        renderForm(formEl, model, (name, value) => {
          model.setValue(name, value);
          renderErrors(formEl, model);
          update();
        });
        update();
      });
      toast.textContent = "";
    } catch (e) {
      if (e instanceof ApiError && e.fieldErrors.length) {
        for (const fe of e.fieldErrors) {
          model.setServerError(fe.field, fe.message);
        }
        renderErrors(formEl, model);
      } else {
        toast.textContent = e instanceof Error ? e.message : String(e);
      }
    } finally {
      inFlight = false;
      update();
    }
  };
  submitBtn.addEventListener("click", () => void submit());

  return { model, submit, history };
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app")!, new ApiClient(apiBaseUrl()));
}
