/**
 * What-if protocol explorer: build a combo under live rule feedback, run
 * simulations, compare risks, inspect slices, launch a beam search, adopt
 * and edit its plan, and record the final protocol.
 */

import { ApiError, TaceplanApi } from './api';
import {
  assessDraft,
  emptyDraft,
  toggle,
  type DraftState,
} from './comboDraft';
import { buildComparison } from './comparison';
import { adoptPlan, buildPlanPanels } from './planReview';
import { pollJob } from './pollJob';
import {
  initialViewer,
  setAxis,
  setIndex,
  sliceUrls,
  sliderMax,
  toggleOverlay,
  type ViewerState,
} from './sliceViewer';
import type { ActionsView, Axis, Plan, SessionView } from './types';

declare const VITE_API_BASE: string | undefined;

const API_BASE =
  typeof VITE_API_BASE !== 'undefined' && VITE_API_BASE
    ? VITE_API_BASE
    : 'http://127.0.0.1:8008';

interface AppState {
  api: TaceplanApi;
  actions: ActionsView | null;
  session: SessionView | null;
  draft: DraftState;
  viewer: ViewerState;
  viewedStateId: string | null;
  plan: Plan | null;
  lastAdopted: boolean;
  busy: boolean;
  banner: string;
}

const state: AppState = {
  api: new TaceplanApi(API_BASE),
  actions: null,
  session: null,
  draft: emptyDraft(),
  viewer: { axis: 'z', index: 0, overlay: false },
  viewedStateId: null,
  plan: null,
  lastAdopted: false,
  busy: false,
  banner: '',
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

function banner(message: string) {
  state.banner = message;
  render();
}

async function boot() {
  try {
    state.actions = await state.api.getActions();
    const { patients } = await state.api.listPatients();
    if (!patients.length) {
      banner('no patients in the store; run `taceplan serve --demo`');
      return;
    }
    state.session = await state.api.createSession(patients[0]);
    state.viewer = initialViewer(state.session.dims);
    state.viewedStateId = state.session.pre_state_id;
    render();
  } catch (err) {
    banner(`failed to reach the service at ${API_BASE}: ${(err as Error).message}`);
  }
}

async function reloadSession() {
  if (!state.session) return;
  state.session = await state.api.getSession(state.session.id);
  render();
}

async function runDraft() {
  if (!state.session || !state.actions) return;
  const assessment = assessDraft(state.draft, state.actions);
  if (!assessment.runnable) return;
  state.busy = true;
  render();
  try {
    const result = await state.api.simulate(state.session.id, assessment.combo, {
      replicas: 3,
      seed: Date.now() % 100000,
      requestId: crypto.randomUUID(),
    });
    state.viewedStateId = result.state_id;
    if (state.lastAdopted) {
      await state.api.saveFinalProtocol(
        state.session.id,
        assessment.combo,
        'manual-after-explore',
      );
      state.lastAdopted = false;
    }
    await reloadSession();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      banner(`server rejected the combo: ${err.violations.map(v => v.rule_id).join(', ')}`);
    } else {
      banner((err as Error).message);
    }
  } finally {
    state.busy = false;
    render();
  }
}

async function launchExplore() {
  if (!state.session) return;
  state.busy = true;
  banner('exploring…');
  try {
    const { job_id } = await state.api.startExplore(
      state.session.id,
      { beams: 2, drug_horizon: 2, embolic_horizon: 1, replicas: 1, seed: 7 },
      crypto.randomUUID(),
    );
    const job = await pollJob(state.api, job_id, { intervalMs: 750 });
    state.plan = job.plan;
    banner('');
    await reloadSession();
  } catch (err) {
    banner((err as Error).message);
  } finally {
    state.busy = false;
    render();
  }
}

function renderComboBuilder(root: HTMLElement) {
  if (!state.actions) return;
  const assessment = assessDraft(state.draft, state.actions);
  const list = (kind: 'drug' | 'embolic') =>
    el(
      'ul',
      { class: 'picker' },
      ...(kind === 'drug' ? state.actions!.drugs : state.actions!.embolics).map(unit => {
        const selected =
          kind === 'drug' ? state.draft.drugs.has(unit.name) : state.draft.embolics.has(unit.name);
        const box = el('input', { type: 'checkbox' }) as HTMLInputElement;
        box.checked = selected;
        box.onchange = () => {
          state.draft = toggle(state.draft, kind, unit.name);
          render();
        };
        return el('li', {}, el('label', {}, box, ` ${unit.name} `,
          el('small', {}, unit.tags.join(', '))));
      }),
    );

  const run = el('button', { id: 'run' }, 'Run simulation') as HTMLButtonElement;
  run.disabled = !assessment.runnable || state.busy;
  run.onclick = () => void runDraft();

  const explore = el('button', { id: 'explore' }, 'Explore protocols') as HTMLButtonElement;
  explore.disabled = state.busy;
  explore.onclick = () => void launchExplore();

  root.append(
    el('h2', {}, 'Protocol draft'),
    el('div', { class: 'columns' },
      el('div', {}, el('h3', {}, 'Drugs'), list('drug')),
      el('div', {}, el('h3', {}, 'Embolics'), list('embolic'))),
    el('div', { class: 'violations' },
      ...assessment.violations.map(v =>
        el('p', { class: 'violation-badge' }, `${v.rule_id}: ${v.message}`))),
    run,
    ' ',
    explore,
  );
}

function renderComparison(root: HTMLElement) {
  if (!state.session) return;
  const rows = buildComparison(state.session);
  root.append(
    el('h2', {}, 'Evaluated protocols'),
    el('table', { class: 'comparison' },
      el('tr', {}, el('th', {}, 'protocol'), el('th', {}, 'mean risk'),
        el('th', {}, 'source'), el('th', {}, 'view')),
      ...rows.map(row => {
        const view = el('button', {}, 'slices') as HTMLButtonElement;
        view.onclick = () => {
          state.viewedStateId = row.stateId;
          render();
        };
        return el('tr', {},
          el('td', {}, row.label),
          el('td', {}, row.meanRisk.toFixed(4)),
          el('td', {}, row.source),
          el('td', {}, view));
      })),
  );
}

function renderViewer(root: HTMLElement) {
  if (!state.session || !state.viewedStateId) return;
  const dims = state.session.dims;
  const axisSelect = el('select', {}) as HTMLSelectElement;
  for (const axis of ['x', 'y', 'z'] as Axis[]) {
    const option = el('option', { value: axis }, axis);
    if (axis === state.viewer.axis) option.setAttribute('selected', '');
    axisSelect.append(option);
  }
  axisSelect.onchange = () => {
    state.viewer = setAxis(state.viewer, dims, axisSelect.value as Axis);
    render();
  };

  const slider = el('input', {
    type: 'range', min: '0', max: String(sliderMax(dims, state.viewer.axis)),
    value: String(state.viewer.index),
  }) as HTMLInputElement;
  slider.oninput = () => {
    state.viewer = setIndex(state.viewer, dims, Number(slider.value));
    render();
  };

  const overlayBox = el('input', { type: 'checkbox' }) as HTMLInputElement;
  overlayBox.checked = state.viewer.overlay;
  overlayBox.onchange = () => {
    state.viewer = toggleOverlay(state.viewer);
    render();
  };

  const panel = (stateId: string, title: string) => {
    const urls = sliceUrls(state.api, stateId, state.viewer);
    const stack = el('div', { class: 'slice-stack' },
      el('img', { src: urls.base, alt: `${title} slice` }));
    if (urls.overlay) stack.append(el('img', { class: 'overlay', src: urls.overlay, alt: 'mask' }));
    return el('div', { class: 'slice-panel' }, el('h4', {}, title), stack);
  };

  root.append(
    el('h2', {}, 'Slices'),
    el('div', {}, 'axis ', axisSelect, ' index ', slider,
      ` ${state.viewer.index} `, el('label', {}, overlayBox, ' mask overlay')),
    el('div', { class: 'columns' },
      panel(state.session.pre_state_id, 'pre-treatment'),
      state.viewedStateId === state.session.pre_state_id
        ? el('div', {}, el('em', {}, 'run a simulation to compare'))
        : panel(state.viewedStateId, 'simulated post-treatment')),
  );
}

function renderPlan(root: HTMLElement) {
  if (!state.plan) return;
  const adopt = el('button', {}, 'Adopt plan into draft') as HTMLButtonElement;
  adopt.onclick = () => {
    state.draft = adoptPlan(state.plan!);
    state.lastAdopted = true;
    render();
  };
  root.append(
    el('h2', {}, `Explored plan (risk ${state.plan.score.toFixed(4)})`),
    adopt,
    ...buildPlanPanels(state.plan).map(panel =>
      el('div', { class: 'step-panel' },
        el('h3', {}, panel.title),
        el('table', {},
          el('tr', {}, el('th', {}, 'candidate'), el('th', {}, 'mean risk')),
          ...panel.candidates.map(c =>
            el('tr', { class: c.chosen ? 'chosen' : '' },
              el('td', {}, c.name), el('td', {}, c.meanRisk.toFixed(4))))),
        el('p', {}, panel.replacementNote))),
  );
}

function render() {
  const root = document.getElementById('app');
  if (!root) return;
  root.replaceChildren();
  if (state.banner) root.append(el('div', { class: 'banner' }, state.banner));
  if (!state.actions || !state.session) return;
  root.append(el('p', {}, `patient ${state.session.patient_id} — session ${state.session.id}`));
  const builder = el('section', {});
  const comparison = el('section', {});
  const viewer = el('section', {});
  const plan = el('section', {});
  renderComboBuilder(builder);
  renderComparison(comparison);
  renderViewer(viewer);
  renderPlan(plan);
  root.append(builder, comparison, viewer, plan);
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  void boot();
}
