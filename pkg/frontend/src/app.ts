/**
 * Single-page workflow: upload a KM plot, crop/erase on a canvas, run the
 * pipeline, watch progress, inspect the overlay, download the IPD CSV.
 */

import { ApiClient, type JobState } from "./api.js";
import { getProviderKey, setProviderKey } from "./cookies.js";
import { EditSession, canvasToSource, normalizeRect } from "./edits.js";
import { pollJob } from "./polling.js";

const MAX_UPLOAD_BYTES = 15 * 1024 * 1024;

type Tool = "crop" | "erase";

class App {
  private client = new ApiClient("");
  private session = new EditSession();
  private image: HTMLImageElement | null = null;
  private scale = 1;
  private tool: Tool = "crop";
  private dragStart: [number, number] | null = null;

  private el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  mount(): void {
    const keyInput = this.el<HTMLInputElement>("provider-key");
    keyInput.value = getProviderKey();
    keyInput.addEventListener("change", () => setProviderKey(keyInput.value));

    const fileInput = this.el<HTMLInputElement>("file-input");
    fileInput.addEventListener("change", () => {
      const file = fileInput.files?.[0];
      if (file) void this.upload(file);
    });
    const dropZone = this.el<HTMLElement>("drop-zone");
    dropZone.addEventListener("dragover", (e) => {
      e.preventDefault();
      dropZone.classList.add("hover");
    });
    dropZone.addEventListener("dragleave", () => dropZone.classList.remove("hover"));
    dropZone.addEventListener("drop", (e) => {
      e.preventDefault();
      dropZone.classList.remove("hover");
      const file = e.dataTransfer?.files?.[0];
      if (file) void this.upload(file);
    });

    this.el<HTMLButtonElement>("tool-crop").addEventListener("click", () => (this.tool = "crop"));
    this.el<HTMLButtonElement>("tool-erase").addEventListener("click", () => (this.tool = "erase"));
    this.el<HTMLButtonElement>("undo").addEventListener("click", () => {
      this.session.undo();
      this.redraw();
    });
    this.el<HTMLButtonElement>("run").addEventListener("click", () => void this.run());

    const canvas = this.el<HTMLCanvasElement>("editor");
    canvas.addEventListener("mousedown", (e) => this.pointerDown(e));
    canvas.addEventListener("mousemove", (e) => this.pointerMove(e));
    window.addEventListener("mouseup", () => this.pointerUp());
  }

  private status(text: string): void {
    this.el<HTMLElement>("status").textContent = text;
  }

  private async upload(file: File): Promise<void> {
    if (file.size > MAX_UPLOAD_BYTES) {
      this.status(`file too large (${(file.size / 1e6).toFixed(1)} MB; limit 15 MB)`);
      return;
    }
    this.status("uploading…");
    try {
      const jobId = await this.client.createJob(file, file.name);
      this.session = new EditSession();
      this.session.jobId = jobId;
      this.addJobCard(jobId, file.name);
      await this.showImage(file);
      this.status(`job ${jobId}: image loaded; crop or erase, then run`);
      this.el<HTMLElement>("edit-view").hidden = false;
      this.el<HTMLElement>("result-view").hidden = true;
    } catch (err) {
      this.status(`upload failed: ${String(err)}`);
    }
  }

  /** One card per uploaded plot; uploads never replace earlier jobs. */
  private addJobCard(jobId: string, filename: string): void {
    const list = this.el<HTMLUListElement>("job-cards");
    const item = document.createElement("li");
    item.id = `card-${jobId}`;
    item.textContent = `${filename} — job ${jobId} (created)`;
    list.appendChild(item);
  }

  private updateJobCard(jobId: string, text: string): void {
    const item = document.getElementById(`card-${jobId}`);
    if (item) item.textContent = text;
  }

  private showImage(file: File): Promise<void> {
    return new Promise((resolve, reject) => {
      const img = new Image();
      img.onload = () => {
        this.image = img;
        const canvas = this.el<HTMLCanvasElement>("editor");
        this.scale = Math.min(1, 900 / img.naturalWidth);
        canvas.width = Math.round(img.naturalWidth * this.scale);
        canvas.height = Math.round(img.naturalHeight * this.scale);
        this.redraw();
        resolve();
      };
      img.onerror = () => reject(new Error("not a decodable image"));
      img.src = URL.createObjectURL(file);
    });
  }

  private canvasPoint(e: MouseEvent): [number, number] {
    const canvas = this.el<HTMLCanvasElement>("editor");
    const rect = canvas.getBoundingClientRect();
    return canvasToSource(e.clientX - rect.left, e.clientY - rect.top, this.scale);
  }

  private pointerDown(e: MouseEvent): void {
    if (!this.image) return;
    const [x, y] = this.canvasPoint(e);
    if (this.tool === "crop") {
      this.dragStart = [x, y];
    } else {
      this.session.startStroke(6);
      this.session.extendStroke(x, y);
    }
  }

  private lastMove: [number, number] | null = null;

  private pointerMove(e: MouseEvent): void {
    if (!this.image) return;
    const [x, y] = this.canvasPoint(e);
    this.lastMove = [x, y];
    if (this.tool === "erase" && e.buttons === 1) {
      try {
        this.session.extendStroke(x, y);
      } catch {
        // stroke not started on canvas; ignore stray moves
      }
      this.redraw();
    }
  }

  private pointerUp(): void {
    if (!this.image) return;
    if (this.tool === "crop" && this.dragStart) {
      const [ax, ay] = this.dragStart;
      const end = this.lastMove ?? this.dragStart;
      this.dragStart = null;
      try {
        this.session.addCrop(
          normalizeRect(ax, ay, end[0], end[1], this.image.naturalWidth, this.image.naturalHeight),
        );
      } catch {
        return; // zero-area drag
      }
      this.redraw();
    } else if (this.tool === "erase") {
      this.session.endStroke();
      this.redraw();
    }
  }

  private redraw(): void {
    const canvas = this.el<HTMLCanvasElement>("editor");
    const ctx = canvas.getContext("2d");
    if (!ctx || !this.image) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.drawImage(this.image, 0, 0, canvas.width, canvas.height);
    ctx.save();
    ctx.scale(this.scale, this.scale);
    for (const edit of this.session.pendingEdits) {
      if (edit.kind === "crop") {
        ctx.strokeStyle = "#0a84ff";
        ctx.lineWidth = 2 / this.scale;
        ctx.strokeRect(edit.x0, edit.y0, edit.x1 - edit.x0, edit.y1 - edit.y0);
      } else {
        ctx.strokeStyle = "rgba(255,255,255,0.9)";
        ctx.lineWidth = edit.radius * 2;
        ctx.lineCap = "round";
        ctx.beginPath();
        for (const [i, [x, y]] of edit.points.entries()) {
          if (i === 0) ctx.moveTo(x, y);
          else ctx.lineTo(x, y);
        }
        ctx.stroke();
      }
    }
    ctx.restore();
    this.el<HTMLElement>("edit-count").textContent = `${this.session.pendingEdits.length} edit(s)`;
  }

  private async run(): Promise<void> {
    const jobId = this.session.jobId;
    if (!jobId) {
      this.status("upload an image first");
      return;
    }
    try {
      await this.client.postEdits(jobId, this.session.toPayload());
      const provider = this.el<HTMLSelectElement>("provider").value as "sidecar" | "live";
      const config =
        provider === "live"
          ? {
              provider,
              base_url: this.el<HTMLInputElement>("base-url").value,
              model: this.el<HTMLInputElement>("model").value,
            }
          : { provider, sidecar_path: this.el<HTMLInputElement>("sidecar-path").value };
      await this.client.runJob(jobId, config, getProviderKey() || undefined);
      this.status("running…");
      const state = await pollJob(this.client, jobId, {
        intervalMs: 1000,
        onUpdate: (s) => {
          this.status(`running… (${s.state})`);
          this.updateJobCard(jobId, `job ${jobId} (${s.state})`);
        },
      });
      this.showResult(state);
    } catch (err) {
      this.status(`run failed: ${String(err)}`);
    }
  }

  private async showResult(state: JobState): Promise<void> {
    const view = this.el<HTMLElement>("result-view");
    view.hidden = false;
    if (state.state === "failed") {
      this.status(`job failed: ${state.error ?? "unknown error"}`);
      const report = await this.tryReport(state.id);
      this.renderIssues(report);
      this.el<HTMLAnchorElement>("csv-link").hidden = true;
      this.el<HTMLImageElement>("overlay").hidden = true;
      return;
    }
    this.status("done");
    const overlay = this.el<HTMLImageElement>("overlay");
    overlay.hidden = false;
    overlay.src = `${this.client.artifactUrl(state.id, "overlay.png")}?t=${Date.now()}`;
    const link = this.el<HTMLAnchorElement>("csv-link");
    link.hidden = false;
    link.href = this.client.artifactUrl(state.id, "ipd.csv");
    link.download = `${state.id}_ipd.csv`;
    this.session.lastReport = await this.tryReport(state.id);
    this.renderIssues(this.session.lastReport);
  }

  private async tryReport(jobId: string): Promise<unknown> {
    try {
      const buf = await this.client.fetchArtifact(jobId, "report.json");
      return JSON.parse(new TextDecoder().decode(buf));
    } catch {
      return null;
    }
  }

  private renderIssues(report: unknown): void {
    const list = this.el<HTMLUListElement>("issues");
    list.textContent = "";
    const validation = (report as { validation?: { issues?: { component: string; message: string; suggestion: string }[] } } | null)
      ?.validation;
    for (const issue of validation?.issues ?? []) {
      const item = document.createElement("li");
      item.textContent = `${issue.component}: ${issue.message} — ${issue.suggestion}`;
      list.appendChild(item);
    }
  }
}

if (typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", () => new App().mount());
}

export { App };
