"""Synthetic cohorts with planted ground truth, set metrics, and the
benchmark harness.

Each patient is a procedural liver (ellipsoid) with a blob tumor, a
patient-specific efficacy draw, a gold protocol defined by the exhaustive
oracle under that draw, and an exponential survival time whose hazard
grows with the gold outcome's residual-volume ratio, independently
censored at a uniform horizon.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .actions import (
    ActionBase,
    ActionCombo,
    check_rules,
    render_report,
    vocabulary_from_config,
)
from .dynamics import EfficacyTable, attenuate, combo_efficacy
from .errors import InvalidArgumentError
from .explorer import (
    ExplorationConfig,
    combo_cumulative_params,
    exhaustive_oracle,
    explore,
)
from .segmenter import SegmenterConfig, segment_post
from .survival import (
    FEATURE_NAMES,
    CoxModel,
    FeatureVector,
    StepFunction,
    SurvivalRecord,
    concordance_index,
    extract_features,
    rank_normalize,
    risk_score,
    save_survival_csv,
    true_risk,
)
from .voxel import LIVER, TUMOR, Mask3, Volume3, load_mask, load_volume, save_mask, save_volume

LIVER_INTENSITY = 0.0
TUMOR_INTENSITY = -0.5
TEXTURE_SIGMA = 0.02
BACKGROUND_INTENSITY = -1.0


def reference_risk_model() -> CoxModel:
    """Planted scoring model: risk is the standardized volume-change ratio.

    Used to define gold actions during cohort generation, before any model
    is fitted."""
    beta = np.zeros(len(FEATURE_NAMES))
    beta[FEATURE_NAMES.index("volume_change_ratio")] = 1.0
    return CoxModel(
        beta=beta,
        means=np.zeros(len(FEATURE_NAMES)),
        sds=np.ones(len(FEATURE_NAMES)),
        feature_names=FEATURE_NAMES,
        baseline=StepFunction(np.array([]), np.array([]), 0.0),
    )


@dataclass(frozen=True)
class SyntheticPatient:
    id: str
    volume: Volume3
    mask: Mask3
    gold_action: ActionCombo
    gold_level: int
    efficacy_table: EfficacyTable
    survival: SurvivalRecord
    report: str


@dataclass
class Cohort:
    patients: list[SyntheticPatient]
    base: ActionBase
    explore_cfg: ExplorationConfig
    seed: int
    grid: int
    hazard_k: float

    def records(self) -> list[SurvivalRecord]:
        return [p.survival for p in self.patients]


def _ellipsoid(grid: int, center, semi) -> np.ndarray:
    ax = np.arange(grid)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    return (
        ((x - center[0]) / semi[0]) ** 2
        + ((y - center[1]) / semi[1]) ** 2
        + ((z - center[2]) / semi[2]) ** 2
    ) <= 1.0


def _tumor_blob(
    rng: np.random.Generator,
    grid: int,
    liver: np.ndarray,
    radius: float,
    extra_lobes: Optional[int] = None,
):
    """Lumpy blob: a primary sphere plus 0-2 offset spheres, kept inside
    the liver interior."""
    interior = np.argwhere(liver)
    lo, hi = interior.min(axis=0), interior.max(axis=0)
    center = (lo + hi) / 2.0 + rng.uniform(-2, 2, size=3)
    ax = np.arange(grid)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")

    blob = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= radius**2
    lobes = int(rng.integers(1, 3)) if extra_lobes is None else extra_lobes
    for _ in range(lobes):
        off = center + rng.uniform(-0.45, 0.45, size=3) * radius
        r2 = radius * rng.uniform(0.45, 0.7)
        blob |= (x - off[0]) ** 2 + (y - off[1]) ** 2 + (z - off[2]) ** 2 <= r2**2
    return blob & liver


def synthesize_patient_grids(
    rng: np.random.Generator,
    grid: int = 40,
    tumor_radius: Optional[float] = None,
    spacing=(1.0, 1.0, 1.0),
    extra_lobes: Optional[int] = None,
) -> tuple[Volume3, Mask3]:
    """One procedural (volume, mask) pair: ellipsoid liver, blob tumor."""
    center = np.full(3, grid / 2.0) + rng.uniform(-1.5, 1.5, size=3)
    semi = grid * rng.uniform(0.36, 0.42, size=3)
    liver = _ellipsoid(grid, center, semi)

    max_r = max(4.0, min(semi) - 4.0)
    if tumor_radius is None:
        tumor_radius = float(rng.uniform(5.0, min(15.0, max_r)))
    tumor = _tumor_blob(rng, grid, liver, min(tumor_radius, max_r), extra_lobes)

    mask = np.zeros((grid, grid, grid), dtype=np.uint8)
    mask[liver] = LIVER
    mask[tumor] = TUMOR

    data = np.full((grid, grid, grid), BACKGROUND_INTENSITY, dtype=np.float64)
    data[liver] = LIVER_INTENSITY + TEXTURE_SIGMA * rng.standard_normal(int(liver.sum()))
    data[tumor] = TUMOR_INTENSITY + TEXTURE_SIGMA * rng.standard_normal(int(tumor.sum()))
    volume = Volume3(np.clip(data, -1, 1).astype(np.float32), spacing)
    return volume, Mask3(mask, spacing)


def _draw_efficacy_table(rng: np.random.Generator, base: ActionBase) -> EfficacyTable:
    weights = {u.name: float(rng.uniform(0.3, 1.6)) for u in base.units}
    return EfficacyTable(weights=weights, noise_scale=0.0)


def _replay_outcome(
    patient_volume: Volume3,
    patient_mask: Mask3,
    combo: ActionCombo,
    table: EfficacyTable,
    seed: int,
    seg_cfg: SegmenterConfig,
) -> FeatureVector:
    """Features of the search-trajectory outcome of a combo (cumulative
    per-action attenuation, exactly what the oracle scored)."""
    cum = combo_cumulative_params(combo.units, table)
    state = attenuate(patient_volume, patient_mask, cum, seed=seed)
    seg = segment_post(state.volume, state.mask, seg_cfg)
    return extract_features(patient_volume, patient_mask, state.volume, seg)


def generate_cohort(
    n: int,
    base: ActionBase,
    seed: int = 0,
    grid: int = 40,
    hazard_k: float = 3.0,
    explore_cfg: Optional[ExplorationConfig] = None,
    seg_cfg: Optional[SegmenterConfig] = None,
    median_months: float = 18.0,
) -> Cohort:
    """Deterministic synthetic cohort with oracle-defined gold actions.

    Survival time is exponential with rate proportional to
    exp(hazard_k * volume_change_ratio) of the gold outcome, so protocols
    that shrink tumors more yield stochastically longer survival; an
    independent uniform censoring horizon leaves roughly 20% censored.
    """
    if n < 1:
        raise InvalidArgumentError("cohort size must be >= 1")
    explore_cfg = explore_cfg or ExplorationConfig(drug_horizon=2, embolic_horizon=1, seed=seed)
    seg_cfg = seg_cfg or SegmenterConfig()
    ref_model = reference_risk_model()
    base_rate = np.log(2.0) / median_months

    # Pass 1: anatomy, patient-specific efficacy draw, gold action, and the
    # planted hazard rate driven by the gold outcome's residual-volume ratio.
    drafts = []
    for i in range(n):
        pid = f"p{i:03d}"
        for attempt in range(16):
            rng = np.random.default_rng((seed, i, attempt))
            volume, mask = synthesize_patient_grids(rng, grid=grid)
            if mask.count(TUMOR) >= seg_cfg.min_component:
                break
        else:
            raise InvalidArgumentError(f"could not synthesize a viable tumor for {pid}")

        table = _draw_efficacy_table(rng, base)
        patient_cfg = ExplorationConfig(
            beams=1,
            drug_horizon=explore_cfg.drug_horizon,
            embolic_horizon=explore_cfg.embolic_horizon,
            replicas=1,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        gold = exhaustive_oracle(volume, mask, base, ref_model, patient_cfg, table, seg_cfg)
        feats = _replay_outcome(volume, mask, gold.combo, table, patient_cfg.seed, seg_cfg)
        rate = base_rate * float(np.exp(hazard_k * (feats.volume_change_ratio - 0.5)))
        drafts.append((pid, volume, mask, table, gold, feats, rate))

    censor_horizon = _censor_horizon([d[6] for d in drafts], target=0.2)

    # Pass 2: exponential survival times and independent uniform censoring.
    patients = []
    for i, (pid, volume, mask, table, gold, feats, rate) in enumerate(drafts):
        rng = np.random.default_rng((seed, i, 99991))
        true_time = float(rng.exponential(1.0 / rate))
        censor_time = float(rng.uniform(0.0, censor_horizon))
        observed = max(0.1, min(true_time, censor_time))
        event = int(true_time <= censor_time)

        level = combo_efficacy(gold.combo, table).level
        patients.append(
            SyntheticPatient(
                id=pid,
                volume=volume,
                mask=mask,
                gold_action=gold.combo,
                gold_level=level,
                efficacy_table=table,
                survival=SurvivalRecord(
                    time=observed, event=event, covariates=tuple(feats.as_array()), subject_id=pid
                ),
                report=render_report(gold.combo, level),
            )
        )
    return Cohort(
        patients=patients,
        base=base,
        explore_cfg=explore_cfg,
        seed=seed,
        grid=grid,
        hazard_k=hazard_k,
    )


def _censor_horizon(rates: Sequence[float], target: float = 0.2) -> float:
    """Uniform-censoring horizon giving roughly `target` censored overall.

    For C ~ U(0, u) and T ~ Exp(rate), P(censored) averaged over the
    cohort's rates is monotone decreasing in u; bisect on it. Depends only
    on the planted rates, so censoring stays independent of the times.
    """
    rates = np.asarray(rates, dtype=np.float64)

    def censored_fraction(u: float) -> float:
        x = rates * u
        return float(np.mean((1.0 - np.exp(-x)) / x))

    lo, hi = 1e-6, 1e9
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if censored_fraction(mid) > target:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


# --- set metrics -------------------------------------------------------------


def set_metrics(pred: ActionCombo, gold: ActionCombo) -> tuple[float, float, float, float]:
    """(f1, jaccard, precision, recall) over pooled unit names."""
    gold_names = set(gold.names)
    if not gold_names:
        raise InvalidArgumentError("gold combo must be non-empty")
    pred_names = set(pred.names)
    inter = len(pred_names & gold_names)
    union = len(pred_names | gold_names)
    precision = inter / len(pred_names) if pred_names else 0.0
    recall = inter / len(gold_names)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    jaccard = inter / union if union else 0.0
    return f1, jaccard, precision, recall


# --- benchmark ---------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    planner: str = "explore"  # explore | oracle | random
    explore: ExplorationConfig = field(default_factory=ExplorationConfig)
    seed: int = 0

    def __post_init__(self):
        if self.planner not in ("explore", "oracle", "random"):
            raise InvalidArgumentError(f"unknown planner {self.planner!r}")


@dataclass
class MetricsReport:
    rows: list[dict]
    f1: float
    jaccard: float
    precision: float
    recall: float
    c_index: float
    mse_vs_true_risk: float
    failures: list[dict]
    per_category: dict

    def to_json(self) -> dict:
        return {
            "f1": self.f1,
            "jaccard": self.jaccard,
            "precision": self.precision,
            "recall": self.recall,
            "c_index": self.c_index,
            "mse_vs_true_risk": self.mse_vs_true_risk,
            "n_scored": len(self.rows),
            "n_failed": len(self.failures),
            "failures": self.failures,
            "per_category": self.per_category,
            "rows": self.rows,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["patient_id", "predicted", "gold", "f1", "jaccard", "precision", "recall"]
        )
        for row in self.rows:
            writer.writerow(
                [
                    row["patient_id"],
                    " + ".join(row["predicted"]),
                    " + ".join(row["gold"]),
                    row["f1"],
                    row["jaccard"],
                    row["precision"],
                    row["recall"],
                ]
            )
        return buf.getvalue()


def _random_combo(rng: np.random.Generator, base: ActionBase, cfg: ExplorationConfig) -> ActionCombo:
    drugs = sorted(base.drugs, key=lambda u: u.name)
    embolics = sorted(base.embolics, key=lambda u: u.name)
    for _ in range(200):
        nd = min(cfg.drug_horizon, len(drugs))
        ne = min(cfg.embolic_horizon, len(embolics))
        picks = [drugs[j] for j in rng.choice(len(drugs), size=nd, replace=False)]
        picks += [embolics[j] for j in rng.choice(len(embolics), size=ne, replace=False)]
        combo = ActionCombo(tuple(picks))
        if not check_rules(combo, base.rules, complete=True):
            return combo
    raise InvalidArgumentError("could not sample a rule-valid random combo")


def benchmark(
    cohort: Cohort,
    cfg: BenchmarkConfig,
    cox: CoxModel,
    out_dir: Optional[Path] = None,
    seg_cfg: Optional[SegmenterConfig] = None,
    goal: str = "recommend the TACE protocol with the lowest post-treatment risk",
) -> MetricsReport:
    """Run the configured planner on every patient and score predictions
    against gold actions; per-patient failures are recorded and excluded,
    never silently dropped."""
    if not cohort.patients:
        raise InvalidArgumentError("cohort is empty")
    seg_cfg = seg_cfg or SegmenterConfig()

    rows, failures = [], []
    drug_rows, emb_rows = [], []
    for idx, patient in enumerate(sorted(cohort.patients, key=lambda p: p.id)):
        try:
            run_cfg = ExplorationConfig(
                beams=cfg.explore.beams,
                drug_horizon=cfg.explore.drug_horizon,
                embolic_horizon=cfg.explore.embolic_horizon,
                replicas=cfg.explore.replicas,
                seed=cfg.explore.seed + idx,
            )
            if cfg.planner == "explore":
                plan = explore(
                    patient.volume,
                    patient.mask,
                    goal,
                    cohort.base,
                    cox,
                    run_cfg,
                    patient.efficacy_table,
                    seg_cfg,
                )
                pred = plan.combo
            elif cfg.planner == "oracle":
                pred = exhaustive_oracle(
                    patient.volume,
                    patient.mask,
                    cohort.base,
                    cox,
                    run_cfg,
                    patient.efficacy_table,
                    seg_cfg,
                ).combo
            else:
                pred = _random_combo(
                    np.random.default_rng((cfg.seed, idx)), cohort.base, run_cfg
                )
            f1, jac, prec, rec = set_metrics(pred, patient.gold_action)
            rows.append(
                {
                    "patient_id": patient.id,
                    "predicted": list(pred.names),
                    "gold": list(patient.gold_action.names),
                    "f1": f1,
                    "jaccard": jac,
                    "precision": prec,
                    "recall": rec,
                }
            )
            drug_rows.append(
                set_metrics(
                    ActionCombo(pred.drugs), ActionCombo(patient.gold_action.drugs)
                )[0]
            )
            emb_rows.append(
                set_metrics(
                    ActionCombo(pred.embolics), ActionCombo(patient.gold_action.embolics)
                )[0]
            )
        except Exception as exc:  # recorded, not silently dropped
            failures.append({"patient_id": patient.id, "error": f"{type(exc).__name__}: {exc}"})

    if not rows:
        raise InvalidArgumentError("every patient failed; nothing to report")

    records = cohort.records()
    risks = [risk_score(cox, np.array(r.covariates)) for r in records]
    c_index = concordance_index(risks, records)
    # The evaluation target grows with observed survival (cumulative hazard
    # accrues over follow-up), so the prediction enters with the matching
    # orientation: lower scored risk ranks as longer accrual.
    mse = float(np.mean((rank_normalize([-r for r in risks]) - true_risk(records)) ** 2))

    report = MetricsReport(
        rows=rows,
        f1=float(np.mean([r["f1"] for r in rows])),
        jaccard=float(np.mean([r["jaccard"] for r in rows])),
        precision=float(np.mean([r["precision"] for r in rows])),
        recall=float(np.mean([r["recall"] for r in rows])),
        c_index=float(c_index),
        mse_vs_true_risk=mse,
        failures=failures,
        per_category={
            "drugs_f1": float(np.mean(drug_rows)),
            "embolics_f1": float(np.mean(emb_rows)),
        },
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report.to_json(), sort_keys=True, indent=1))
        (out_dir / "report.csv").write_text(report.to_csv())
    return report


# --- cohort persistence ------------------------------------------------------


def save_cohort(cohort: Cohort, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": cohort.seed,
        "grid": cohort.grid,
        "hazard_k": cohort.hazard_k,
        "explore_cfg": cohort.explore_cfg.to_dict(),
        "base": {
            "drugs": [{"name": u.name, "tags": sorted(u.tags)} for u in cohort.base.drugs],
            "embolics": [{"name": u.name, "tags": sorted(u.tags)} for u in cohort.base.embolics],
            "rules": [
                {"id": r.id, "type": r.type, "params": r.params, "description": r.description}
                for r in cohort.base.rules
            ],
        },
        "patients": [
            {
                "id": p.id,
                "gold": {"drugs": [u.name for u in p.gold_action.drugs],
                         "embolics": [u.name for u in p.gold_action.embolics]},
                "gold_level": p.gold_level,
                "efficacy_table": p.efficacy_table.to_config(),
                "time_months": p.survival.time,
                "event": p.survival.event,
                "features": list(p.survival.covariates),
            }
            for p in cohort.patients
        ],
    }
    (directory / "cohort.json").write_text(json.dumps(meta, sort_keys=True, indent=1))

    for p in cohort.patients:
        pdir = directory / p.id
        save_volume(p.volume, pdir / "pre.mvol")
        save_mask(p.mask, pdir / "mask.mvol")

    with (directory / "reports.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "report", "os_months", "status"])
        for p in cohort.patients:
            writer.writerow([p.id, p.report, repr(p.survival.time), p.survival.event])

    save_survival_csv(cohort.records(), FEATURE_NAMES, directory / "survival.csv")


def load_cohort(directory) -> Cohort:
    directory = Path(directory)
    meta = json.loads((directory / "cohort.json").read_text())
    vocab = vocabulary_from_config(meta["base"])
    base = ActionBase(vocab.drugs, vocab.embolics, vocab.rules)
    reports = {}
    with (directory / "reports.csv").open() as fh:
        for row in csv.DictReader(fh):
            reports[row["patient_id"]] = row["report"]

    patients = []
    for pm in meta["patients"]:
        pid = pm["id"]
        units = tuple(base.unit_by_name(n) for n in pm["gold"]["drugs"] + pm["gold"]["embolics"])
        patients.append(
            SyntheticPatient(
                id=pid,
                volume=load_volume(directory / pid / "pre.mvol"),
                mask=load_mask(directory / pid / "mask.mvol"),
                gold_action=ActionCombo(units),
                gold_level=pm["gold_level"],
                efficacy_table=EfficacyTable.from_config(pm["efficacy_table"]),
                survival=SurvivalRecord(
                    time=pm["time_months"],
                    event=pm["event"],
                    covariates=tuple(pm["features"]),
                    subject_id=pid,
                ),
                report=reports.get(pid, ""),
            )
        )
    return Cohort(
        patients=patients,
        base=base,
        explore_cfg=ExplorationConfig.from_dict(meta["explore_cfg"]),
        seed=meta["seed"],
        grid=meta["grid"],
        hazard_k=meta["hazard_k"],
    )
