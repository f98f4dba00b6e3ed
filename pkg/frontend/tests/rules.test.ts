import { describe, expect, it } from 'vitest';

import { checkRules, isRunnable } from '../src/rules';
import type { ActionUnitView, RuleView } from '../src/types';

const VOCAB: ActionUnitView[] = [
  { name: 'Cisplatin', kind: 'drug', tags: ['platinum-based'] },
  { name: 'Oxaliplatin', kind: 'drug', tags: ['platinum-based'] },
  { name: 'Doxorubicin', kind: 'drug', tags: ['anthracycline'] },
  { name: 'Epirubicin', kind: 'drug', tags: ['anthracycline'] },
  { name: 'Lipiodol', kind: 'embolic', tags: ['oil'] },
];

const RULES: RuleView[] = [
  {
    id: 'platinum-pair',
    type: 'forbidden-tag-pair',
    params: { tags: ['platinum-based', 'platinum-based'] },
    description: '',
  },
  { id: 'required-drug', type: 'required-kind', params: { kind: 'drug' }, description: '' },
  { id: 'required-embolic', type: 'required-kind', params: { kind: 'embolic' }, description: '' },
  {
    id: 'max-anthracycline',
    type: 'max-count-per-tag',
    params: { tag: 'anthracycline', max: 1 },
    description: '',
  },
];

describe('rule mirror', () => {
  it('flags two platinum agents', () => {
    const violations = checkRules(
      { drugs: ['Cisplatin', 'Oxaliplatin'], embolics: ['Lipiodol'] },
      RULES,
      VOCAB,
    );
    expect(violations.map(v => v.rule_id)).toContain('platinum-pair');
  });

  it('accepts a clean complete protocol', () => {
    expect(isRunnable({ drugs: ['Cisplatin'], embolics: ['Lipiodol'] }, RULES, VOCAB)).toBe(true);
  });

  it('requires both kinds for a complete protocol', () => {
    const violations = checkRules({ drugs: ['Cisplatin'], embolics: [] }, RULES, VOCAB);
    expect(violations.map(v => v.rule_id)).toEqual(['required-embolic']);
    expect(isRunnable({ drugs: [], embolics: [] }, RULES, VOCAB)).toBe(false);
  });

  it('skips required-kind rules for incomplete drafts', () => {
    expect(checkRules({ drugs: ['Cisplatin'], embolics: [] }, RULES, VOCAB, false)).toEqual([]);
  });

  it('enforces max-count-per-tag', () => {
    const violations = checkRules(
      { drugs: ['Doxorubicin', 'Epirubicin'], embolics: ['Lipiodol'] },
      RULES,
      VOCAB,
    );
    expect(violations.map(v => v.rule_id)).toEqual(['max-anthracycline']);
  });
});
