// Schema-driven patient form model: field list, per-field validation, and
// submit payload. No field names are hardcoded; everything derives from the
// /v1/schema payload so the console can never drift from the server.

import type { Schema, SchemaField } from "./api.js";

export interface FieldState {
  spec: SchemaField;
  value: string;
  error: string | null;
}

export class FormModel {
  fields: FieldState[];

  constructor(schema: Schema) {
    if (!schema.fields.length) {
      throw new Error("schema carries no fields");
    }
    this.fields = schema.fields.map((spec) => ({
      spec,
      value: spec.kind === "categorical" && spec.allowed?.length ? spec.allowed[0] : "",
      error: null,
    }));
  }

  setValue(name: string, value: string): void {
    const field = this.fields.find((f) => f.spec.name === name);
    if (!field) throw new Error(`unknown field ${name}`);
    field.value = value;
    field.error = validateField(field.spec, value);
  }

  setServerError(name: string, message: string): void {
    const field = this.fields.find((f) => f.spec.name === name);
    if (field) field.error = message;
  }

  validateAll(): boolean {
    for (const f of this.fields) {
      f.error = validateField(f.spec, f.value);
    }
    return this.isValid();
  }

  isValid(): boolean {
    return this.fields.every((f) => validateField(f.spec, f.value) === null);
  }

  payload(): Record<string, string | number> {
    const out: Record<string, string | number> = {};
    for (const f of this.fields) {
      out[f.spec.name] = f.spec.kind === "numeric" ? Number(f.value) : f.value;
    }
    return out;
  }

  fill(record: Record<string, string | number>): void {
    for (const f of this.fields) {
      const v = record[f.spec.name];
      if (v !== undefined) {
        f.value = String(v);
        f.error = validateField(f.spec, f.value);
      }
    }
  }
}

export function validateField(spec: SchemaField, value: string): string | null {
  if (value.trim() === "") return "required";
  if (spec.kind === "numeric") {
    const num = Number(value);
    if (!Number.isFinite(num)) return "must be a number";
    return null;
  }
  if (spec.allowed && !spec.allowed.includes(value)) {
    return `must be one of: ${spec.allowed.join(", ")}`;
  }
  return null;
}
