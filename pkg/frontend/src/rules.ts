/**
 * Client-side mirror of the clinical rules for instant feedback while a
 * combo is drafted. The server stays authoritative: anything accepted
 * here can still 409, and the UI surfaces that response as-is.
 */

import type { ActionUnitView, ComboSpec, RuleView, Violation } from './types';

export interface DraftUnit {
  name: string;
  kind: 'drug' | 'embolic';
  tags: string[];
}

function unitsOf(combo: ComboSpec, vocabulary: ActionUnitView[]): DraftUnit[] {
  const byName = new Map(vocabulary.map(u => [u.name, u]));
  return [...combo.drugs, ...combo.embolics]
    .map(name => byName.get(name))
    .filter((u): u is ActionUnitView => u !== undefined);
}

function checkRule(rule: RuleView, units: DraftUnit[], complete: boolean): Violation | null {
  if (rule.type === 'forbidden-tag-pair') {
    const [t1, t2] = rule.params.tags as [string, string];
    const withT1 = units.filter(u => u.tags.includes(t1));
    const withT2 = units.filter(u => u.tags.includes(t2));
    for (const a of withT1) {
      for (const b of withT2) {
        if (a.name !== b.name) {
          return {
            rule_id: rule.id,
            rule_type: rule.type,
            message: `${a.name} and ${b.name} both carry forbidden tags (${t1}, ${t2})`,
          };
        }
      }
    }
    return null;
  }
  if (rule.type === 'max-count-per-tag') {
    const tag = rule.params.tag as string;
    const max = rule.params.max as number;
    const n = units.filter(u => u.tags.includes(tag)).length;
    if (n > max) {
      return {
        rule_id: rule.id,
        rule_type: rule.type,
        message: `${n} units tagged ${tag}, at most ${max} allowed`,
      };
    }
    return null;
  }
  if (rule.type === 'required-kind') {
    const kind = rule.params.kind as string;
    if (complete && !units.some(u => u.kind === kind)) {
      return {
        rule_id: rule.id,
        rule_type: rule.type,
        message: `completed protocol has no ${kind} action`,
      };
    }
    return null;
  }
  return null;
}

/**
 * All violations of a drafted combo. `complete` enables the
 * required-kind rules, matching what the server enforces on simulate.
 */
export function checkRules(
  combo: ComboSpec,
  rules: RuleView[],
  vocabulary: ActionUnitView[],
  complete = true,
): Violation[] {
  const units = unitsOf(combo, vocabulary);
  const violations: Violation[] = [];
  for (const rule of rules) {
    const v = checkRule(rule, units, complete);
    if (v) violations.push(v);
  }
  return violations;
}

/** True when the server would accept a simulate call for this draft. */
export function isRunnable(
  combo: ComboSpec,
  rules: RuleView[],
  vocabulary: ActionUnitView[],
): boolean {
  return checkRules(combo, rules, vocabulary, true).length === 0;
}
