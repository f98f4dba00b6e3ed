/**
 * Contract tests against the live Python service (secondary acceptance):
 * the client-side rule mirror must agree with server 200/409 outcomes on
 * 200 random drafts, plan review renders H steps as H panels, and a
 * session reload reproduces the comparison table.
 */

import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiError, TaceplanApi } from '../src/api';
import { buildComparison } from '../src/comparison';
import { buildPlanPanels } from '../src/planReview';
import { isRunnable } from '../src/rules';
import { pollJob } from '../src/pollJob';
import type { ActionsView, ComboSpec } from '../src/types';
import { startServer, type LiveServer } from './serverHarness';

let server: LiveServer;
let api: TaceplanApi;
let actions: ActionsView;

beforeAll(async () => {
  server = await startServer();
  api = new TaceplanApi(server.base);
  actions = await api.getActions();
});

afterAll(() => {
  server?.stop();
});

/** Simple deterministic PRNG so the 200 drafts are reproducible. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function randomDraft(rand: () => number): ComboSpec {
  const pick = <T>(pool: T[], n: number): T[] => {
    const copy = [...pool];
    const out: T[] = [];
    for (let i = 0; i < n && copy.length; i++) {
      out.push(copy.splice(Math.floor(rand() * copy.length), 1)[0]);
    }
    return out;
  };
  const nDrugs = Math.floor(rand() * 4); // 0..3, includes incomplete drafts
  const nEmbolics = Math.floor(rand() * 3); // 0..2
  return {
    drugs: pick(actions.drugs.map(u => u.name), nDrugs).sort(),
    embolics: pick(actions.embolics.map(u => u.name), nEmbolics).sort(),
  };
}

describe('live service contract', () => {
  it('rule mirror matches server 200/409 on 200 random drafts', async () => {
    const { patients } = await api.listPatients();
    const session = await api.createSession(patients[0]);
    const vocabulary = [...actions.drugs, ...actions.embolics];
    const rand = mulberry32(20240811);

    let accepted = 0;
    let rejected = 0;
    for (let i = 0; i < 200; i++) {
      const draft = randomDraft(rand);
      const clientVerdict = isRunnable(draft, actions.rules, vocabulary);
      let serverVerdict: boolean;
      try {
        await api.simulate(session.id, draft, { replicas: 1, seed: i });
        serverVerdict = true;
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          serverVerdict = false;
        } else {
          throw err;
        }
      }
      expect(serverVerdict, `draft ${i}: ${JSON.stringify(draft)}`).toBe(clientVerdict);
      if (serverVerdict) accepted += 1;
      else rejected += 1;
    }
    expect(accepted).toBeGreaterThan(0);
    expect(rejected).toBeGreaterThan(0);
  });

  it('plan review renders a trace of H steps as H panels', async () => {
    const { patients } = await api.listPatients();
    const session = await api.createSession(patients[0]);
    const horizon = { drug_horizon: 2, embolic_horizon: 1 };
    const { job_id } = await api.startExplore(session.id, { ...horizon, seed: 5 });
    const job = await pollJob(api, job_id, { intervalMs: 400 });
    const panels = buildPlanPanels(job.plan!);
    expect(panels).toHaveLength(horizon.drug_horizon + horizon.embolic_horizon);
    expect(panels.filter(p => p.kind === 'drug')).toHaveLength(2);
    expect(panels.filter(p => p.kind === 'embolic')).toHaveLength(1);
  });

  it('session reload reproduces the comparison table', async () => {
    const { patients } = await api.listPatients();
    const created = await api.createSession(patients[0]);
    await api.simulate(created.id, { drugs: ['Cisplatin'], embolics: ['Lipiodol'] }, { seed: 1 });
    await api.simulate(
      created.id,
      { drugs: ['Doxorubicin'], embolics: ['Gelatin Sponge'] },
      { seed: 2 },
    );
    const before = buildComparison(await api.getSession(created.id));
    const reloaded = buildComparison(await api.getSession(created.id));
    expect(reloaded).toEqual(before);
    expect(reloaded).toHaveLength(2);
    const risks = reloaded.map(r => r.meanRisk);
    expect([...risks].sort((a, b) => a - b)).toEqual(risks);
  });

  it('slice URLs resolve for the pre-treatment state', async () => {
    const { patients } = await api.listPatients();
    const session = await api.createSession(patients[0]);
    const mid = Math.floor(session.dims[2] / 2);
    const resp = await fetch(api.sliceUrl(session.pre_state_id, 'z', mid, 'volume'));
    expect(resp.status).toBe(200);
    expect(resp.headers.get('content-type')).toBe('image/png');
  });
});
