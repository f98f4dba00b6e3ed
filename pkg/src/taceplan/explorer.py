"""Beam-search protocol exploration with rule pruning, plus a brute-force
enumeration oracle used to verify the search on small instances.

Each search step extends every beam by the candidate action with the
lowest mean replica risk; after every step the worst beam is replaced by
a full copy of the best one. A beam's simulated state advances by
composing the candidate's attenuation with everything already applied and
rendering from the original pre-treatment pair (see
:func:`taceplan.dynamics.combine_params`), so a trajectory's outcome
depends only on which actions were taken, never on the order the search
happened to pick them in — the property that makes the exhaustive oracle
an exact check. Everything is deterministic given the config seed: beam b
uses seed + b, replica i of an evaluation uses its beam seed + i.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Optional

import numpy as np

from .actions import DRUG, EMBOLIC, ActionBase, ActionCombo, ActionUnit, check_rules
from .dynamics import (
    IDENTITY_PARAMS,
    AttenuationParams,
    EfficacyTable,
    attenuate,
    combine_params,
    combo_efficacy,
)
from .errors import (
    ExplorationDeadEndError,
    InvalidArgumentError,
    NoTumorError,
    TooLargeError,
)
from .segmenter import SegmenterConfig, segment_post
from .survival import CoxModel, extract_features, risk_score
from .voxel import TUMOR, Mask3, Volume3


@dataclass(frozen=True)
class ExplorationConfig:
    beams: int = 1
    drug_horizon: int = 1
    embolic_horizon: int = 1
    replicas: int = 1
    seed: int = 0
    tie_break: str = "lexicographic"
    max_oracle_combos: int = 10_000

    def __post_init__(self):
        if min(self.beams, self.drug_horizon, self.embolic_horizon, self.replicas) < 1:
            raise InvalidArgumentError("beams, horizons and replicas must be >= 1")
        if self.tie_break != "lexicographic":
            raise InvalidArgumentError("only lexicographic tie-breaking is supported")

    @property
    def horizon(self) -> int:
        return self.drug_horizon + self.embolic_horizon

    def to_dict(self) -> dict:
        return {
            "beams": self.beams,
            "drug_horizon": self.drug_horizon,
            "embolic_horizon": self.embolic_horizon,
            "replicas": self.replicas,
            "seed": self.seed,
            "tie_break": self.tie_break,
        }

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExplorationConfig":
        return cls(**{k: cfg[k] for k in cls.__dataclass_fields__ if k in cfg})


@dataclass
class Beam:
    combo: ActionCombo
    cum_params: AttenuationParams
    volume: Volume3
    mask: Mask3
    seed: int
    score: float = float("inf")

    def clone(self) -> "Beam":
        return Beam(self.combo, self.cum_params, self.volume, self.mask, self.seed, self.score)


@dataclass(frozen=True)
class CandidateEval:
    name: str
    mean_risk: float
    replica_risks: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "mean_risk": self.mean_risk,
            "replica_risks": list(self.replica_risks),
        }


@dataclass(frozen=True)
class BeamStepRecord:
    beam: int
    candidates: tuple[CandidateEval, ...]
    chosen: str
    score: float

    def to_json(self) -> dict:
        return {
            "beam": self.beam,
            "candidates": [c.to_json() for c in self.candidates],
            "chosen": self.chosen,
            "score": self.score,
        }


@dataclass(frozen=True)
class StepRecord:
    """One search step: per-beam candidate tables plus the beam replacement.

    The top-level candidates/chosen mirror the beam holding the lowest
    score once the step (and its replacement) finished.
    """

    step: int
    kind: str
    candidates: tuple[CandidateEval, ...]
    chosen: str
    replaced_beam: int
    source_beam: int
    scores_before_replacement: tuple[float, ...]
    beam_scores: tuple[float, ...]
    beams: tuple[BeamStepRecord, ...]

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "kind": self.kind,
            "candidates": [c.to_json() for c in self.candidates],
            "chosen": self.chosen,
            "replaced_beam": self.replaced_beam,
            "source_beam": self.source_beam,
            "scores_before_replacement": list(self.scores_before_replacement),
            "beam_scores": list(self.beam_scores),
            "beams": [b.to_json() for b in self.beams],
        }


@dataclass(frozen=True)
class Plan:
    combo: ActionCombo
    score: float
    trace: tuple[StepRecord, ...] = ()
    goal: str = ""

    def to_json(self) -> dict:
        return {
            "combo": {
                "drugs": [u.name for u in self.combo.drugs],
                "embolics": [u.name for u in self.combo.embolics],
            },
            "score": self.score,
            "goal": self.goal,
            "steps": [s.to_json() for s in self.trace],
        }


def unit_attenuation(unit: ActionUnit, table: EfficacyTable) -> AttenuationParams:
    """Attenuation contributed by one action on its own."""
    return combo_efficacy(ActionCombo((unit,)), table)


class _Scorer:
    """Shared scoring path: render the cumulative outcome of a combo from
    the pre-treatment pair, segment each replica, score it against the pre
    pair, and average."""

    def __init__(
        self,
        pre: Volume3,
        mask: Mask3,
        cox: CoxModel,
        table: EfficacyTable,
        seg_cfg: SegmenterConfig,
    ):
        self.pre = pre
        self.mask = mask
        self.cox = cox
        self.table = table
        self.seg_cfg = seg_cfg

    def risk(self, state) -> float:
        seg = segment_post(state.volume, state.mask, self.seg_cfg)
        feats = extract_features(self.pre, self.mask, state.volume, seg)
        return risk_score(self.cox, feats)

    def evaluate(self, cum_params: AttenuationParams, replicas: int, seed: int):
        states = [attenuate(self.pre, self.mask, cum_params, seed=seed + i) for i in range(replicas)]
        risks = tuple(self.risk(s) for s in states)
        return states, risks, float(np.mean(risks))


def _candidate_pool(base: ActionBase, kind: str) -> list[ActionUnit]:
    pool = base.drugs if kind == DRUG else base.embolics
    return sorted(pool, key=lambda u: u.name)


def explore(
    pre: Volume3,
    mask: Mask3,
    goal: str,
    base: ActionBase,
    cox: CoxModel,
    cfg: ExplorationConfig,
    table: EfficacyTable,
    seg_cfg: Optional[SegmenterConfig] = None,
) -> Plan:
    """Beam-search a TACE protocol of drug_horizon drugs then
    embolic_horizon embolics, returning the lowest-risk plan with a full
    per-step trace."""
    if not (mask.data == TUMOR).any():
        raise NoTumorError("exploration requires a non-empty tumor mask")
    scorer = _Scorer(pre, mask, cox, table, seg_cfg or SegmenterConfig())
    beams = [
        Beam(
            combo=ActionCombo(()),
            cum_params=IDENTITY_PARAMS,
            volume=pre,
            mask=mask,
            seed=cfg.seed + b,
        )
        for b in range(cfg.beams)
    ]

    kinds = [DRUG] * cfg.drug_horizon + [EMBOLIC] * cfg.embolic_horizon
    trace: list[StepRecord] = []
    for step_idx, kind in enumerate(kinds, start=1):
        records: list[BeamStepRecord] = []
        for b, beam in enumerate(beams):
            evals = []
            for unit in _candidate_pool(base, kind):
                if unit.name in beam.combo.names:
                    continue
                if check_rules(beam.combo.with_unit(unit), base.rules, complete=False):
                    continue
                cum = combine_params(beam.cum_params, unit_attenuation(unit, table))
                states, risks, mean_risk = scorer.evaluate(cum, cfg.replicas, beam.seed)
                evals.append((CandidateEval(unit.name, mean_risk, risks), states[0], cum))
            if not evals:
                raise ExplorationDeadEndError(step_idx, kind, b)
            chosen_eval, chosen_state, chosen_cum = min(
                evals, key=lambda e: (e[0].mean_risk, e[0].name)
            )
            beam.combo = beam.combo.with_unit(base.unit_by_name(chosen_eval.name))
            beam.cum_params = chosen_cum
            beam.volume = chosen_state.volume
            beam.mask = chosen_state.mask
            beam.score = chosen_eval.mean_risk
            records.append(
                BeamStepRecord(
                    beam=b,
                    candidates=tuple(ev for ev, _, _ in evals),
                    chosen=chosen_eval.name,
                    score=chosen_eval.mean_risk,
                )
            )

        scores_before = tuple(b.score for b in beams)
        max_idx = int(np.argmax(scores_before))
        min_idx = int(np.argmin(scores_before))
        beams[max_idx] = beams[min_idx].clone()
        trace.append(
            StepRecord(
                step=step_idx,
                kind=kind,
                candidates=records[min_idx].candidates,
                chosen=records[min_idx].chosen,
                replaced_beam=max_idx,
                source_beam=min_idx,
                scores_before_replacement=scores_before,
                beam_scores=tuple(b.score for b in beams),
                beams=tuple(records),
            )
        )

    final = beams[int(np.argmin([b.score for b in beams]))]
    return Plan(combo=final.combo, score=final.score, trace=tuple(trace), goal=goal)


def combo_cumulative_params(
    combo_units, table: EfficacyTable
) -> AttenuationParams:
    """Composition of the per-action attenuations of a whole combo."""
    return reduce(
        combine_params, (unit_attenuation(u, table) for u in combo_units), IDENTITY_PARAMS
    )


def exhaustive_oracle(
    pre: Volume3,
    mask: Mask3,
    base: ActionBase,
    cox: CoxModel,
    cfg: ExplorationConfig,
    table: EfficacyTable,
    seg_cfg: Optional[SegmenterConfig] = None,
) -> Plan:
    """Global argmin over every rule-valid combo of 1..drug_horizon drugs
    and 1..embolic_horizon embolics, each evaluated with the search's
    seeding rule. Ties break on the canonical name tuple."""
    if not (mask.data == TUMOR).any():
        raise NoTumorError("oracle requires a non-empty tumor mask")
    drugs = _candidate_pool(base, DRUG)
    embolics = _candidate_pool(base, EMBOLIC)

    combos: list[tuple[ActionUnit, ...]] = []
    for nd in range(1, cfg.drug_horizon + 1):
        for drug_set in itertools.combinations(drugs, nd):
            for ne in range(1, cfg.embolic_horizon + 1):
                for emb_set in itertools.combinations(embolics, ne):
                    units = tuple(drug_set) + tuple(emb_set)
                    if check_rules(ActionCombo(units), base.rules, complete=True):
                        continue
                    combos.append(units)
    if len(combos) > cfg.max_oracle_combos:
        raise TooLargeError(
            f"{len(combos)} rule-valid combos exceed the bound {cfg.max_oracle_combos}"
        )
    if not combos:
        raise ExplorationDeadEndError(0, "combo", 0)

    scorer = _Scorer(pre, mask, cox, table, seg_cfg or SegmenterConfig())
    best_units: Optional[tuple[ActionUnit, ...]] = None
    best_key = (float("inf"), ())
    for units in combos:
        cum = combo_cumulative_params(units, table)
        _, _, score = scorer.evaluate(cum, cfg.replicas, cfg.seed)
        key = (score, tuple(sorted(u.name for u in units)))
        if key < best_key:
            best_units, best_key = units, key
    return Plan(combo=ActionCombo(best_units), score=best_key[0])
