/** Risk-sorted comparison table over everything evaluated in a session. */

import type { ProtocolRow, SessionView } from './types';

export interface ComparisonRow {
  label: string;
  meanRisk: number;
  replicaRisks: number[];
  stateId: string;
  source: 'manual' | 'explored';
}

function toRow(p: ProtocolRow): ComparisonRow {
  return {
    label: p.label,
    meanRisk: p.mean_risk,
    replicaRisks: p.replica_risks,
    stateId: p.state_id,
    source: p.source,
  };
}

/** Rows sorted ascending by mean risk (lowest risk first). */
export function buildComparison(session: SessionView): ComparisonRow[] {
  return session.protocols.map(toRow).sort((a, b) => a.meanRisk - b.meanRisk);
}
