/**
 * Plan-trace review: one panel per search step with the candidate table,
 * the chosen action, and the beam replacement, plus one-click adoption of
 * the plan into the combo builder for manual editing.
 */

import { draftFromCombo, type DraftState } from './comboDraft';
import type { CandidateEval, Plan } from './types';

export interface CandidateRow {
  name: string;
  meanRisk: number;
  replicaRisks: number[];
  chosen: boolean;
}

export interface StepPanel {
  step: number;
  kind: 'drug' | 'embolic';
  title: string;
  candidates: CandidateRow[];
  chosen: string;
  replacementNote: string;
}

function candidateRows(candidates: CandidateEval[], chosen: string): CandidateRow[] {
  return candidates
    .map(c => ({
      name: c.name,
      meanRisk: c.mean_risk,
      replicaRisks: c.replica_risks,
      chosen: c.name === chosen,
    }))
    .sort((a, b) => a.meanRisk - b.meanRisk);
}

/** One panel per trace step; a plan of H steps renders as H panels. */
export function buildPlanPanels(plan: Plan): StepPanel[] {
  return plan.steps.map(step => ({
    step: step.step,
    kind: step.kind,
    title: `Step ${step.step}: pick ${step.kind}`,
    candidates: candidateRows(step.candidates, step.chosen),
    chosen: step.chosen,
    replacementNote:
      step.replaced_beam === step.source_beam
        ? `beam ${step.replaced_beam} kept (already best)`
        : `beam ${step.replaced_beam} replaced by beam ${step.source_beam}`,
  }));
}

/** Copy the explored combo into a fresh draft for manual editing. */
export function adoptPlan(plan: Plan): DraftState {
  return draftFromCombo(plan.combo);
}
