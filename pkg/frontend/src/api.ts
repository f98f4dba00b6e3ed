/**
 * Typed client for the taceplan service. All domain numbers shown in the
 * UI come from these responses; the client computes no risks itself.
 */

import type {
  ActionsView,
  Axis,
  ComboSpec,
  JobView,
  SessionView,
  SimulateResponse,
  SliceLayer,
  Violation,
} from './types';

export class ApiError extends Error {
  status: number;
  code: string;
  violations: Violation[];

  constructor(status: number, code: string, detail: string, violations: Violation[] = []) {
    super(detail || code);
    this.status = status;
    this.code = code;
    this.violations = violations;
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let body: Record<string, unknown> = {};
  try {
    body = (await resp.json()) as Record<string, unknown>;
  } catch {
    // non-JSON error body; keep defaults
  }
  return new ApiError(
    resp.status,
    (body.error as string) ?? `http-${resp.status}`,
    (body.detail as string) ?? resp.statusText,
    (body.violations as Violation[]) ?? [],
  );
}

export class TaceplanApi {
  constructor(readonly base: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.base}${path}`, {
      headers: { 'content-type': 'application/json' },
      ...init,
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  getActions(): Promise<ActionsView> {
    return this.request<ActionsView>('/actions');
  }

  listPatients(): Promise<{ patients: string[] }> {
    return this.request<{ patients: string[] }>('/patients');
  }

  createSession(patientId: string, requestId?: string): Promise<SessionView> {
    return this.request<SessionView>('/sessions', {
      method: 'POST',
      body: JSON.stringify({ patient_id: patientId, request_id: requestId }),
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>(`/sessions/${sessionId}`);
  }

  simulate(
    sessionId: string,
    combo: ComboSpec,
    opts: { replicas?: number; seed?: number; requestId?: string } = {},
  ): Promise<SimulateResponse> {
    return this.request<SimulateResponse>(`/sessions/${sessionId}/simulate`, {
      method: 'POST',
      body: JSON.stringify({
        combo,
        replicas: opts.replicas ?? 1,
        seed: opts.seed ?? 0,
        request_id: opts.requestId,
      }),
    });
  }

  startExplore(
    sessionId: string,
    config: {
      beams?: number;
      drug_horizon?: number;
      embolic_horizon?: number;
      replicas?: number;
      seed?: number;
    },
    requestId?: string,
  ): Promise<{ job_id: string }> {
    return this.request<{ job_id: string }>(`/sessions/${sessionId}/explore`, {
      method: 'POST',
      body: JSON.stringify({ config, request_id: requestId }),
    });
  }

  getJob(jobId: string): Promise<JobView> {
    return this.request<JobView>(`/jobs/${jobId}`);
  }

  saveFinalProtocol(
    sessionId: string,
    combo: ComboSpec,
    provenance: 'manual' | 'explored' | 'manual-after-explore',
  ): Promise<SessionView> {
    return this.request<SessionView>(`/sessions/${sessionId}/final-protocol`, {
      method: 'POST',
      body: JSON.stringify({ combo, provenance }),
    });
  }

  /** URL of a slice PNG; the browser fetches it straight into an <img>. */
  sliceUrl(stateId: string, axis: Axis, index: number, layer: SliceLayer): string {
    return `${this.base}/states/${stateId}/slice?axis=${axis}&index=${index}&layer=${layer}`;
  }
}
