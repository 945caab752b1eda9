/** Poll a job until it reaches a terminal state. */

import type { ApiClient, JobState } from "./api.js";

const TERMINAL = new Set(["reconstructed", "failed"]);

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onUpdate?: (state: JobState) => void;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function pollJob(
  client: ApiClient,
  jobId: string,
  options: PollOptions = {},
): Promise<JobState> {
  const interval = options.intervalMs ?? 1000;
  const deadline = Date.now() + (options.timeoutMs ?? 5 * 60 * 1000);
  for (;;) {
    const state = await client.getJob(jobId);
    options.onUpdate?.(state);
    if (TERMINAL.has(state.state)) return state;
    if (Date.now() > deadline) throw new Error(`job ${jobId} timed out in state ${state.state}`);
    await sleep(interval);
  }
}
