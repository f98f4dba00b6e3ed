/** Poll an exploration job until it reaches a terminal state. */

import type { TaceplanApi } from './api';
import type { JobView } from './types';

export async function pollJob(
  api: TaceplanApi,
  jobId: string,
  opts: { intervalMs?: number; timeoutMs?: number; onUpdate?: (job: JobView) => void } = {},
): Promise<JobView> {
  const intervalMs = opts.intervalMs ?? 1000;
  const deadline = Date.now() + (opts.timeoutMs ?? 10 * 60 * 1000);
  for (;;) {
    const job = await api.getJob(jobId);
    opts.onUpdate?.(job);
    if (job.status === 'succeeded') return job;
    if (job.status === 'failed') throw new Error(job.error ?? 'exploration failed');
    if (Date.now() > deadline) throw new Error(`job ${jobId} timed out`);
    await new Promise(resolve => setTimeout(resolve, intervalMs));
  }
}
