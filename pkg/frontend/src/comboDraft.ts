/** Draft state of the combo builder: selections plus live violations. */

import { checkRules } from './rules';
import type { ActionsView, ComboSpec, Violation } from './types';

export interface DraftState {
  drugs: Set<string>;
  embolics: Set<string>;
}

export function emptyDraft(): DraftState {
  return { drugs: new Set(), embolics: new Set() };
}

export function toggle(draft: DraftState, kind: 'drug' | 'embolic', name: string): DraftState {
  const next = { drugs: new Set(draft.drugs), embolics: new Set(draft.embolics) };
  const bucket = kind === 'drug' ? next.drugs : next.embolics;
  if (bucket.has(name)) bucket.delete(name);
  else bucket.add(name);
  return next;
}

export function toCombo(draft: DraftState): ComboSpec {
  return { drugs: [...draft.drugs].sort(), embolics: [...draft.embolics].sort() };
}

export function draftFromCombo(combo: ComboSpec): DraftState {
  return { drugs: new Set(combo.drugs), embolics: new Set(combo.embolics) };
}

export interface DraftAssessment {
  combo: ComboSpec;
  violations: Violation[];
  runnable: boolean;
}

/** Violations shown inline; Run stays disabled while any are present. */
export function assessDraft(draft: DraftState, actions: ActionsView): DraftAssessment {
  const combo = toCombo(draft);
  const vocabulary = [...actions.drugs, ...actions.embolics];
  const violations = checkRules(combo, actions.rules, vocabulary, true);
  return { combo, violations, runnable: violations.length === 0 };
}
