"""Action vocabulary, report parsing, clinical rules, and the policy model.

The candidate generator is deterministic and rule-based; an external LLM
endpoint can optionally refine the proposed action base, with full
fallback to the built-in policy when the endpoint is unreachable or
returns entries outside the vocabulary.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import httpx

from .errors import InvalidArgumentError

DRUG, EMBOLIC = "drug", "embolic"

# Outcome-phrase lexicon: reported treatment effect -> attenuation level.
# Multiple findings in one report aggregate by max.
OUTCOME_LEXICON = {
    "reduced": 2,
    "occluded": 3,
    "satisfactory": 3,
    "disappear": 4,
}


@dataclass(frozen=True)
class ActionUnit:
    """One drug or embolic material, optionally dosed."""

    kind: str
    name: str
    dose: Optional[float] = None
    dose_unit: Optional[str] = None
    tags: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.kind not in (DRUG, EMBOLIC):
            raise InvalidArgumentError(f"unknown action kind {self.kind!r}")
        if self.dose is not None and self.dose <= 0:
            raise InvalidArgumentError("dose must be > 0 when present")
        object.__setattr__(self, "tags", frozenset(self.tags))

    def key(self) -> tuple[str, str]:
        return (self.kind, self.name)


@dataclass(frozen=True)
class ActionCombo:
    """A TACE protocol: a set of drugs plus a set of embolic materials."""

    units: tuple[ActionUnit, ...]

    def __post_init__(self):
        units = tuple(sorted(self.units, key=lambda u: u.key()))
        names = [u.name for u in units]
        if len(set(names)) != len(names):
            raise InvalidArgumentError(f"duplicate unit names in combo: {names}")
        object.__setattr__(self, "units", units)

    @property
    def drugs(self) -> tuple[ActionUnit, ...]:
        return tuple(u for u in self.units if u.kind == DRUG)

    @property
    def embolics(self) -> tuple[ActionUnit, ...]:
        return tuple(u for u in self.units if u.kind == EMBOLIC)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(u.name for u in self.units)

    def with_unit(self, unit: ActionUnit) -> "ActionCombo":
        return ActionCombo(self.units + (unit,))

    def label(self) -> str:
        return " + ".join(self.names) if self.units else "(empty)"


@dataclass(frozen=True)
class RuleViolation:
    rule_id: str
    rule_type: str
    message: str


@dataclass(frozen=True)
class ClinicalRule:
    """Declarative combo constraint.

    Types:
      forbidden-tag-pair  params {"tags": [t1, t2]} — no two distinct units
                          may carry t1 and t2 (t1 == t2 forbids tag pairs
                          such as two platinum-based agents).
      max-count-per-tag   params {"tag": t, "max": k}.
      required-kind       params {"kind": "drug"|"embolic"} — checked only
                          for completed protocols.
    """

    id: str
    type: str
    params: dict
    description: str = ""

    def check(self, combo: ActionCombo, complete: bool = True) -> Optional[RuleViolation]:
        if self.type == "forbidden-tag-pair":
            t1, t2 = self.params["tags"]
            with_t1 = [u for u in combo.units if t1 in u.tags]
            with_t2 = [u for u in combo.units if t2 in u.tags]
            for a in with_t1:
                for b in with_t2:
                    if a.name != b.name:
                        return RuleViolation(
                            self.id,
                            self.type,
                            f"{a.name} and {b.name} both carry forbidden tags ({t1}, {t2})",
                        )
            return None
        if self.type == "max-count-per-tag":
            tag, cap = self.params["tag"], int(self.params["max"])
            n = sum(1 for u in combo.units if tag in u.tags)
            if n > cap:
                return RuleViolation(
                    self.id, self.type, f"{n} units tagged {tag!r}, at most {cap} allowed"
                )
            return None
        if self.type == "required-kind":
            kind = self.params["kind"]
            if complete and not any(u.kind == kind for u in combo.units):
                return RuleViolation(
                    self.id, self.type, f"completed protocol has no {kind} action"
                )
            return None
        raise InvalidArgumentError(f"unknown rule type {self.type!r}")


@dataclass(frozen=True)
class ExtractedAction:
    """Report-parsing result: dosed units, outcome phrases, optional level."""

    units: tuple[ActionUnit, ...]
    outcome_phrases: tuple[str, ...]
    attenuation_level: Optional[int]


@dataclass(frozen=True)
class ActionBase:
    """Candidate action space: D drugs, E embolics, and the clinical rules."""

    drugs: tuple[ActionUnit, ...]
    embolics: tuple[ActionUnit, ...]
    rules: tuple[ClinicalRule, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.drugs or not self.embolics:
            raise InvalidArgumentError("action base needs >= 1 drug and >= 1 embolic")
        names = [u.name for u in self.drugs + self.embolics]
        if len(set(names)) != len(names):
            raise InvalidArgumentError("duplicate names in action base")

    @property
    def units(self) -> tuple[ActionUnit, ...]:
        return self.drugs + self.embolics

    def unit_by_name(self, name: str) -> ActionUnit:
        for u in self.units:
            if u.name.lower() == name.lower():
                return u
        raise InvalidArgumentError(f"unknown action unit {name!r}")


@dataclass(frozen=True)
class ObservationSummary:
    """Compact pre-treatment observation consumed by the built-in policy."""

    tumor_volume_ml: float
    tumor_count: int = 1
    liver_volume_ml: float = 0.0


# The appendix-listed agents of the source cohorts.
_DEFAULT_VOCABULARY = {
    "drugs": [
        {"name": "Cisplatin", "tags": ["platinum-based"]},
        {"name": "Doxorubicin", "tags": ["anthracycline"]},
        {"name": "Epirubicin", "tags": ["anthracycline"]},
        {"name": "Idarubicin", "tags": ["anthracycline"]},
        {"name": "Lobaplatin", "tags": ["platinum-based"]},
        {"name": "Mitomycin", "tags": ["antitumor-antibiotic"]},
        {"name": "Oxaliplatin", "tags": ["platinum-based"]},
        {"name": "Raltitrexed", "tags": ["antimetabolite"]},
        {"name": "THP", "tags": ["anthracycline"]},
    ],
    "embolics": [
        {"name": "Gelatin Sponge", "tags": ["particle"]},
        {"name": "LC beads", "tags": ["drug-eluting-bead"]},
        {"name": "Lipiodol", "tags": ["oil"]},
    ],
    "rules": [
        {
            "id": "platinum-pair",
            "type": "forbidden-tag-pair",
            "params": {"tags": ["platinum-based", "platinum-based"]},
            "description": "concomitant platinum-based agents are contraindicated",
        },
        {
            "id": "required-drug",
            "type": "required-kind",
            "params": {"kind": "drug"},
            "description": "a completed protocol includes a chemotherapy drug",
        },
        {
            "id": "required-embolic",
            "type": "required-kind",
            "params": {"kind": "embolic"},
            "description": "a completed protocol includes an embolic material",
        },
    ],
}


@dataclass(frozen=True)
class Vocabulary:
    drugs: tuple[ActionUnit, ...]
    embolics: tuple[ActionUnit, ...]
    rules: tuple[ClinicalRule, ...]

    @property
    def units(self) -> tuple[ActionUnit, ...]:
        return self.drugs + self.embolics

    def find(self, name: str) -> Optional[ActionUnit]:
        low = name.lower()
        for u in self.units:
            if u.name.lower() == low:
                return u
        return None

    def to_config(self) -> dict:
        return {
            "drugs": [{"name": u.name, "tags": sorted(u.tags)} for u in self.drugs],
            "embolics": [{"name": u.name, "tags": sorted(u.tags)} for u in self.embolics],
            "rules": [
                {"id": r.id, "type": r.type, "params": r.params, "description": r.description}
                for r in self.rules
            ],
        }


def vocabulary_from_config(cfg: dict) -> Vocabulary:
    drugs = tuple(
        ActionUnit(DRUG, d["name"], tags=frozenset(d.get("tags", ())))
        for d in cfg.get("drugs", ())
    )
    embolics = tuple(
        ActionUnit(EMBOLIC, e["name"], tags=frozenset(e.get("tags", ())))
        for e in cfg.get("embolics", ())
    )
    rules = tuple(
        ClinicalRule(r["id"], r["type"], r["params"], r.get("description", ""))
        for r in cfg.get("rules", ())
    )
    return Vocabulary(drugs, embolics, rules)


def default_vocabulary() -> Vocabulary:
    return vocabulary_from_config(_DEFAULT_VOCABULARY)


def load_vocabulary(path) -> Vocabulary:
    return vocabulary_from_config(json.loads(Path(path).read_text()))


_DOSE_BEFORE = r"(\d+(?:\.\d+)?)\s*(mg|ml)\b(?:\s+\S+){0,2}\s+$"
_DOSE_AFTER = r"^\s*(\d+(?:\.\d+)?)\s*(mg|ml)\b"


def parse_report(text: str, vocabulary: Vocabulary) -> ExtractedAction:
    """Extract dosed action units and outcome phrases from a report.

    Matching is case-insensitive. Dose patterns like ``40 mg`` / ``40mg``
    are captured immediately after the keyword or up to two words before
    it ("10 ml ultra-liquid Lipiodol"); a unit mentioned several times
    takes its first dosed occurrence. Unmatched text is ignored.
    """
    if not text or not text.strip():
        raise InvalidArgumentError("report text is empty")
    low = text.lower()

    units = []
    for unit in vocabulary.units:
        pattern = re.escape(unit.name.lower())
        dose, dose_unit = None, None
        found = False
        for m in re.finditer(pattern, low):
            found = True
            after = re.match(_DOSE_AFTER, low[m.end():])
            before = re.search(_DOSE_BEFORE, low[: m.start()])
            hit = after or before
            if hit:
                dose, dose_unit = float(hit.group(1)), hit.group(2)
                break
        if found:
            units.append(
                ActionUnit(unit.kind, unit.name, dose=dose, dose_unit=dose_unit, tags=unit.tags)
            )

    phrases = tuple(p for p in OUTCOME_LEXICON if p in low)
    level = infer_attenuation_level(phrases) if phrases else None
    return ExtractedAction(tuple(units), phrases, level)


def infer_attenuation_level(phrases: Iterable[str]) -> int:
    """Max level over matched outcome phrases; 1 when nothing matched."""
    level = 1
    for phrase in phrases:
        low = phrase.lower()
        for key, lv in OUTCOME_LEXICON.items():
            if key in low:
                level = max(level, lv)
    return level


def check_rules(
    combo: ActionCombo, rules: Iterable[ClinicalRule], complete: bool = True
) -> list[RuleViolation]:
    """All rule violations of a combo; empty means the combo is valid.

    ``complete=False`` skips required-kind rules so partially built combos
    can be validated during search.
    """
    violations = []
    for rule in rules:
        v = rule.check(combo, complete=complete)
        if v is not None:
            violations.append(v)
    return violations


_OUTCOME_SENTENCES = {
    1: "tumor staining persisted on the final angiography",
    2: "tumor staining was reduced on the final angiography",
    3: "tumor-feeding arteries were occluded on the final angiography",
    4: "tumor staining disappeared on the final angiography",
}


def render_report(combo: ActionCombo, level: int = 3) -> str:
    """Render a combo into the templated report sentence style."""
    parts = []
    for u in combo.drugs:
        dose = f" {u.dose:g} {u.dose_unit or 'mg'}" if u.dose else ""
        parts.append(f"{u.name}{dose} was infused through the catheter")
    for u in combo.embolics:
        dose = f"{u.dose:g} {u.dose_unit or 'ml'} " if u.dose else ""
        parts.append(f"{dose}{u.name} was slowly injected for embolization")
    parts.append(_OUTCOME_SENTENCES[int(level)])
    return "; ".join(parts) + "."


@dataclass(frozen=True)
class PolicyConfig:
    """Built-in policy thresholds plus the optional LLM endpoint."""

    gelatin_sponge_min_ml: float = 2.0
    lc_beads_min_ml: float = 8.0
    llm_endpoint: Optional[str] = None
    llm_timeout_s: float = 10.0


def _builtin_policy(
    observation: ObservationSummary, vocabulary: Vocabulary, cfg: PolicyConfig
) -> tuple[tuple[ActionUnit, ...], tuple[ActionUnit, ...]]:
    drugs = vocabulary.drugs
    embolics = []
    for u in vocabulary.embolics:
        if u.name == "Gelatin Sponge" and observation.tumor_volume_ml < cfg.gelatin_sponge_min_ml:
            continue
        if u.name == "LC beads" and observation.tumor_volume_ml < cfg.lc_beads_min_ml:
            continue
        embolics.append(u)
    if not embolics:
        embolics = [vocabulary.embolics[0]]
    return drugs, tuple(embolics)


def _llm_prompt(observation: ObservationSummary, goal: str, vocabulary: Vocabulary) -> dict:
    # Mirrors the prompt-template contract: task, the predefined agent sets,
    # and the expected JSON answer keys "drug" / "embolism".
    return {
        "task": goal,
        "observation": {
            "tumor_volume_ml": observation.tumor_volume_ml,
            "tumor_count": observation.tumor_count,
            "liver_volume_ml": observation.liver_volume_ml,
        },
        "drugs": [u.name for u in vocabulary.drugs],
        "embolisms": [u.name for u in vocabulary.embolics],
        "answer_format": {"drug": ["<drug name>"], "embolism": ["<embolism name>"]},
    }


def propose_action_base(
    observation: ObservationSummary,
    goal: str,
    vocabulary: Optional[Vocabulary] = None,
    cfg: Optional[PolicyConfig] = None,
    transport: Optional[httpx.BaseTransport] = None,
) -> ActionBase:
    """Propose the candidate action base for one patient.

    The deterministic built-in policy filters the vocabulary on simple
    observation rules. When an LLM endpoint is configured its JSON reply
    ({"drug": [...], "embolism": [...]}) is validated against the
    vocabulary; unknown entries are dropped and empty categories fall back
    to the built-in result. Endpoint failures fall back entirely, with a
    warning recorded on the returned base.
    """
    vocabulary = vocabulary or default_vocabulary()
    cfg = cfg or PolicyConfig()
    if observation.tumor_volume_ml <= 0:
        raise InvalidArgumentError("observation requires tumor volume > 0")

    drugs, embolics = _builtin_policy(observation, vocabulary, cfg)
    warnings: list[str] = []

    if cfg.llm_endpoint:
        try:
            with httpx.Client(transport=transport, timeout=cfg.llm_timeout_s) as client:
                resp = client.post(cfg.llm_endpoint, json=_llm_prompt(observation, goal, vocabulary))
                resp.raise_for_status()
                reply = resp.json()
            llm_drugs, llm_embolics = [], []
            for name in reply.get("drug", []):
                unit = vocabulary.find(str(name))
                if unit is not None and unit.kind == DRUG:
                    llm_drugs.append(unit)
                else:
                    warnings.append(f"dropped unknown drug {name!r} from endpoint reply")
            for name in reply.get("embolism", []):
                unit = vocabulary.find(str(name))
                if unit is not None and unit.kind == EMBOLIC:
                    llm_embolics.append(unit)
                else:
                    warnings.append(f"dropped unknown embolism {name!r} from endpoint reply")
            if llm_drugs:
                drugs = tuple(dict.fromkeys(llm_drugs))
            else:
                warnings.append("endpoint proposed no valid drug; using built-in policy")
            if llm_embolics:
                embolics = tuple(dict.fromkeys(llm_embolics))
            else:
                warnings.append("endpoint proposed no valid embolism; using built-in policy")
        except (httpx.HTTPError, ValueError) as exc:
            warnings.append(f"policy endpoint unavailable ({exc}); using built-in policy")

    return ActionBase(tuple(drugs), tuple(embolics), vocabulary.rules, tuple(warnings))
