/** Thin typed adapter over fetch for the inference service. */

import type {
  FeedbackAction,
  InferenceResponse,
  LabelPayload,
  ModelInfo,
} from "./types";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `${path} failed: ${response.status}`);
    }
    return (await response.json()) as T;
  }

  infer(label: LabelPayload): Promise<InferenceResponse> {
    return this.post<InferenceResponse>("/v1/infer", label);
  }

  feedback(labelId: string, action: FeedbackAction): Promise<{ ok: boolean }> {
    return this.post<{ ok: boolean }>("/v1/feedback", {
      label_id: labelId,
      action,
    });
  }

  async model(): Promise<ModelInfo> {
    const response = await this.fetchImpl(`${this.baseUrl}/v1/model`);
    if (!response.ok) {
      throw new ApiError(response.status, `/v1/model failed: ${response.status}`);
    }
    return (await response.json()) as ModelInfo;
  }
}
