/** Typed client for the annotation server. */

import type { AnnotationRecord, AnnotationUpsert, PointsChunk, SceneMeta } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class AnnotationApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  getSceneMeta(): Promise<SceneMeta> {
    return this.request<SceneMeta>("/api/scene/meta");
  }

  getPointsChunk(chunk: number): Promise<PointsChunk> {
    return this.request<PointsChunk>(`/api/scene/points?chunk=${chunk}`);
  }

  async listAnnotations(): Promise<AnnotationRecord[]> {
    const body = await this.request<{ annotations: AnnotationRecord[] }>("/api/annotations");
    return body.annotations;
  }

  upsertAnnotation(record: AnnotationUpsert): Promise<{ ok: boolean }> {
    return this.request("/api/annotations", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(record),
    });
  }

  saveFruitPoints(fruitId: string, indices: number[]): Promise<{ ok: boolean; count: number }> {
    return this.request(`/api/annotations/${encodeURIComponent(fruitId)}/points`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ indices }),
    });
  }

  async getFruitPoints(fruitId: string): Promise<number[]> {
    const body = await this.request<{ indices: number[] }>(
      `/api/annotations/${encodeURIComponent(fruitId)}/points`,
    );
    return body.indices;
  }
}
