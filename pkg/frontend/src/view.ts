// DOM rendering: the generated form, the result panel (severity chip,
// probability bars, neighbor list, fallback banner) and the session history
// with clone-and-edit support. Every number shown comes verbatim from the
// API response.

import type { Prediction } from "./api.js";
import type { FormModel } from "./form.js";

export const SEVERITY_ORDER = ["green", "yellow", "orange", "red"];

export interface HistoryEntry {
  record: Record<string, string | number>;
  prediction: Prediction;
}

export function renderForm(
  container: HTMLElement,
  model: FormModel,
  onInput: (name: string, value: string) => void,
): void {
  container.innerHTML = "";
  for (const field of model.fields) {
    const row = document.createElement("div");
    row.className = "field-row";

    const label = document.createElement("label");
    label.textContent = field.spec.name;
    label.htmlFor = `f-${field.spec.name}`;
    row.appendChild(label);

    let input: HTMLInputElement | HTMLSelectElement;
    if (field.spec.kind === "categorical") {
      input = document.createElement("select");
      for (const option of field.spec.allowed ?? []) {
        const el = document.createElement("option");
        el.value = option;
        el.textContent = option;
        input.appendChild(el);
      }
    } else {
      input = document.createElement("input");
      input.type = "text";
      if (field.spec.min !== undefined && field.spec.max !== undefined) {
        input.placeholder = `${field.spec.min} .. ${field.spec.max}`;
      }
    }
    input.id = `f-${field.spec.name}`;
    input.value = field.value;
    input.addEventListener("input", () => onInput(field.spec.name, input.value));
    input.addEventListener("change", () => onInput(field.spec.name, input.value));
    row.appendChild(input);

    const err = document.createElement("span");
    err.className = "field-error";
    err.textContent = field.error ?? "";
    row.appendChild(err);

    container.appendChild(row);
  }
}

export function renderErrors(container: HTMLElement, model: FormModel): void {
  for (const field of model.fields) {
    const row = container.querySelector(`#f-${CSS.escape(field.spec.name)}`)
      ?.parentElement;
    const err = row?.querySelector(".field-error");
    if (err) err.textContent = field.error ?? "";
  }
}

export function renderResult(container: HTMLElement, p: Prediction): void {
  container.innerHTML = "";

  const chip = document.createElement("div");
  chip.className = `severity-chip severity-${p.predicted_class}`;
  chip.textContent = p.predicted_class.toUpperCase();
  container.appendChild(chip);

  if (p.fallback_used) {
    const banner = document.createElement("div");
    banner.className = "fallback-banner";
    banner.textContent =
      "No patient passed the similarity threshold; nearest neighbors were used instead.";
    container.appendChild(banner);
  }
  if (p.clamped_fields.length) {
    const banner = document.createElement("div");
    banner.className = "clamp-banner";
    banner.textContent = `Out-of-range values clamped: ${p.clamped_fields.join(", ")}`;
    container.appendChild(banner);
  }

  const bars = document.createElement("div");
  bars.className = "probability-bars";
  p.probabilities.forEach((prob, i) => {
    const row = document.createElement("div");
    row.className = "bar-row";
    const name = document.createElement("span");
    name.textContent = SEVERITY_ORDER[i];
    const track = document.createElement("div");
    track.className = "bar-track";
    const fill = document.createElement("div");
    fill.className = `bar-fill severity-${SEVERITY_ORDER[i]}`;
    fill.style.width = `${(prob * 100).toFixed(2)}%`;
    track.appendChild(fill);
    const pct = document.createElement("span");
    pct.className = "bar-pct";
    pct.textContent = `${(prob * 100).toFixed(1)}%`;
    row.append(name, track, pct);
    bars.appendChild(row);
  });
  container.appendChild(bars);

  const neighbors = document.createElement("ul");
  neighbors.className = "neighbor-list";
  for (const n of p.top_neighbors) {
    const li = document.createElement("li");
    li.textContent = `patient #${n.node_id} (${n.label}) similarity ${n.similarity.toFixed(3)}`;
    neighbors.appendChild(li);
  }
  container.appendChild(neighbors);

  const footer = document.createElement("div");
  footer.className = "provenance";
  footer.textContent = `model ${p.model} · config ${p.config_hash} · ${p.neighbor_count} neighbors`;
  container.appendChild(footer);
}

export function renderHistory(
  container: HTMLElement,
  entries: HistoryEntry[],
  onClone: (index: number) => void,
): void {
  container.innerHTML = "";
  entries.forEach((entry, i) => {
    const row = document.createElement("div");
    row.className = "history-row";
    const chip = document.createElement("span");
    chip.className = `severity-chip small severity-${entry.prediction.predicted_class}`;
    chip.textContent = entry.prediction.predicted_class;
    const label = document.createElement("span");
    label.textContent = `#${i + 1}`;
    const clone = document.createElement("button");
    clone.textContent = "clone & edit";
    clone.addEventListener("click", () => onClone(i));
    row.append(label, chip, clone);
    container.appendChild(row);
  });
}
