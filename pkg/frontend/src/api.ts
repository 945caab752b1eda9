/**
 * Thin client for the job API.
 *
 * The provider key travels only in the X-Provider-Key request header of
 * the run call; it is never put in URLs, bodies, or any persisted state
 * managed here.
 */

import type { EditsPayload } from "./edits.js";

export interface JobState {
  id: string;
  state: "created" | "validated" | "prepared" | "extracted" | "reconstructed" | "failed";
  stage_paths: Record<string, string>;
  error: string | null;
  created_at: string;
}

export interface RunConfig {
  provider?: "sidecar" | "live";
  sidecar_path?: string;
  base_url?: string;
  model?: string;
  seed?: number;
  force?: boolean;
  resize_target?: number;
}

export type ArtifactName = "overlay.png" | "ipd.csv" | "metadata.json" | "report.json";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function expectOk(resp: Response): Promise<Response> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return resp;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async createJob(file: Blob, filename = "plot.png"): Promise<string> {
    const form = new FormData();
    form.append("file", file, filename);
    const resp = await expectOk(
      await this.fetchImpl(this.url("/api/jobs"), { method: "POST", body: form }),
    );
    const body = (await resp.json()) as { id: string };
    return body.id;
  }

  async postEdits(jobId: string, edits: EditsPayload): Promise<void> {
    await expectOk(
      await this.fetchImpl(this.url(`/api/jobs/${jobId}/edits`), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(edits),
      }),
    );
  }

  async runJob(jobId: string, config: RunConfig, providerKey?: string): Promise<void> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (providerKey) headers["X-Provider-Key"] = providerKey;
    await expectOk(
      await this.fetchImpl(this.url(`/api/jobs/${jobId}/run`), {
        method: "POST",
        headers,
        body: JSON.stringify(config),
      }),
    );
  }

  async getJob(jobId: string): Promise<JobState> {
    const resp = await expectOk(await this.fetchImpl(this.url(`/api/jobs/${jobId}`)));
    return (await resp.json()) as JobState;
  }

  artifactUrl(jobId: string, name: ArtifactName): string {
    return this.url(`/api/jobs/${jobId}/${name}`);
  }

  async fetchArtifact(jobId: string, name: ArtifactName): Promise<ArrayBuffer> {
    const resp = await expectOk(await this.fetchImpl(this.artifactUrl(jobId, name)));
    return resp.arrayBuffer();
  }
}
