/** Shared API payload types (mirrors the service schemas). */

export type ActionKind = 'drug' | 'embolic';

export interface ActionUnitView {
  name: string;
  kind: ActionKind;
  tags: string[];
}

export interface RuleView {
  id: string;
  type: 'forbidden-tag-pair' | 'max-count-per-tag' | 'required-kind';
  params: Record<string, unknown>;
  description: string;
}

export interface ActionsView {
  drugs: ActionUnitView[];
  embolics: ActionUnitView[];
  rules: RuleView[];
}

export interface ComboSpec {
  drugs: string[];
  embolics: string[];
}

export interface Violation {
  rule_id: string;
  rule_type: string;
  message: string;
}

export interface ProtocolRow {
  label: string;
  combo: ComboSpec;
  mean_risk: number;
  replica_risks: number[];
  replicas: number;
  seed: number;
  state_id: string;
  source: 'manual' | 'explored';
}

export interface SessionView {
  id: string;
  patient_id: string;
  model_ref: string;
  pre_state_id: string;
  dims: [number, number, number];
  protocols: ProtocolRow[];
  active_job_id: string | null;
  final_protocol: { combo: ComboSpec; provenance: string } | null;
}

export interface SimulateResponse {
  mean_risk: number;
  replica_risks: number[];
  state_id: string;
}

export interface CandidateEval {
  name: string;
  mean_risk: number;
  replica_risks: number[];
}

export interface PlanStep {
  step: number;
  kind: ActionKind;
  candidates: CandidateEval[];
  chosen: string;
  replaced_beam: number;
  source_beam: number;
  scores_before_replacement: number[];
  beam_scores: number[];
}

export interface Plan {
  combo: ComboSpec;
  score: number;
  goal: string;
  steps: PlanStep[];
}

export interface JobView {
  id: string;
  session_id: string;
  status: 'queued' | 'running' | 'succeeded' | 'failed';
  plan: Plan | null;
  error: string | null;
}

export type Axis = 'x' | 'y' | 'z';
export type SliceLayer = 'volume' | 'mask';
