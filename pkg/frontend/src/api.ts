// Typed client for the triage prediction service (/v1 endpoints).

export interface SchemaField {
  name: string;
  kind: "numeric" | "categorical";
  allowed?: string[];
  min?: number;
  max?: number;
}

export interface Schema {
  fields: SchemaField[];
  target: { name: string; values: string[] };
}

export interface NeighborSummary {
  node_id: number;
  label: string;
  similarity: number;
}

export interface Prediction {
  predicted_class: string;
  probabilities: number[];
  neighbor_count: number;
  top_neighbors: NeighborSummary[];
  fallback_used: boolean;
  clamped_fields: string[];
  matched_node: number | null;
  model: string;
  config_hash: string;
}

export interface Health {
  status: string;
  model: string;
  config_hash: string;
  metric: string;
  threshold: number;
  nodes: number;
  edges: number;
}

export interface FieldError {
  field: string;
  message: string;
}

export class ApiError extends Error {
  status: number;
  fieldErrors: FieldError[];

  constructor(status: number, message: string, fieldErrors: FieldError[] = []) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.fieldErrors = fieldErrors;
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let res: Response;
    try {
      res = await fetch(this.baseUrl + path, {
        headers: { "Content-Type": "application/json" },
        ...init,
      });
    } catch (e) {
      throw new ApiError(0, `network failure: ${String(e)}`);
    }
    if (!res.ok) {
      const body = await res.json().catch(() => ({}));
      const errors: FieldError[] = Array.isArray(body.errors) ? body.errors : [];
      const message =
        errors.map((e) => `${e.field}: ${e.message}`).join("; ") ||
        body.error ||
        res.statusText;
      throw new ApiError(res.status, message, errors);
    }
    return res.json() as Promise<T>;
  }

  getSchema(): Promise<Schema> {
    return this.request<Schema>("/v1/schema");
  }

  getHealth(): Promise<Health> {
    return this.request<Health>("/v1/health");
  }

  predict(record: Record<string, string | number>): Promise<Prediction> {
    return this.request<Prediction>("/v1/predict", {
      method: "POST",
      body: JSON.stringify(record),
    });
  }
}

export function apiBaseUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("api") ?? "";
}
