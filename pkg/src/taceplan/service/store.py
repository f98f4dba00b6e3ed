"""File-backed store and engine facade behind the HTTP service.

Layout under the data root (MEWM_DATA_DIR or --data-dir):

    p000/, p001/, ...   patient dirs (pre.mvol + mask.mvol), cohort layout
    model.json          fitted risk model (auto-fit from survival.csv)
    states/<id>/        saved simulated states (volume/mask MVOL + meta)
    sessions/<id>.json  session state, persisted for restart safety
    jobs/<id>.json      exploration job records

All engine calls are pure; the lock only guards session/job bookkeeping,
so reads stay live while an exploration job runs in the worker pool.
"""

from __future__ import annotations

import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..actions import ActionBase, ActionCombo, ActionUnit, check_rules
from ..config import EngineConfig
from ..dynamics import simulate
from ..errors import InvalidArgumentError, RuleViolationError
from ..explorer import ExplorationConfig, explore
from ..segmenter import segment_post
from ..survival import CoxModel, extract_features, fit_cox, load_survival_csv, risk_score
from ..voxel import Mask3, Volume3, load_mask, load_volume, save_mask, save_volume


@dataclass
class ProtocolEntry:
    label: str
    combo: dict
    mean_risk: float
    replica_risks: list[float]
    replicas: int
    seed: int
    state_id: str
    source: str


@dataclass
class Session:
    id: str
    patient_id: str
    model_ref: str
    pre_state_id: str
    dims: tuple[int, int, int] = (0, 0, 0)
    protocols: list[ProtocolEntry] = field(default_factory=list)
    active_job_id: Optional[str] = None
    final_protocol: Optional[dict] = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "patient_id": self.patient_id,
            "model_ref": self.model_ref,
            "pre_state_id": self.pre_state_id,
            "dims": list(self.dims),
            "protocols": [asdict(p) for p in self.protocols],
            "active_job_id": self.active_job_id,
            "final_protocol": self.final_protocol,
        }

    @classmethod
    def from_json(cls, blob: dict) -> "Session":
        return cls(
            id=blob["id"],
            patient_id=blob["patient_id"],
            model_ref=blob["model_ref"],
            pre_state_id=blob["pre_state_id"],
            dims=tuple(blob.get("dims", (0, 0, 0))),
            protocols=[ProtocolEntry(**p) for p in blob.get("protocols", [])],
            active_job_id=blob.get("active_job_id"),
            final_protocol=blob.get("final_protocol"),
        )


@dataclass
class Job:
    id: str
    session_id: str
    status: str = "queued"
    plan: Optional[dict] = None
    error: Optional[str] = None

    def to_json(self) -> dict:
        return asdict(self)


class UnknownIdError(KeyError):
    pass


class JobAlreadyRunningError(RuntimeError):
    pass


class Store:
    """Session, job, and state registry over a cohort data directory."""

    def __init__(self, data_dir, config: EngineConfig, model: CoxModel):
        self.root = Path(data_dir)
        self.config = config
        self.model = model
        self.lock = threading.Lock()
        self.pool = ThreadPoolExecutor(max_workers=2)
        self.sessions: dict[str, Session] = {}
        self.jobs: dict[str, Job] = {}
        self.request_cache: dict[tuple[str, str], dict] = {}
        (self.root / "sessions").mkdir(parents=True, exist_ok=True)
        (self.root / "jobs").mkdir(exist_ok=True)
        (self.root / "states").mkdir(exist_ok=True)
        self._load_persisted()
        self._patient_tables = self._load_patient_tables()

    # -- persistence ----------------------------------------------------

    def _load_persisted(self) -> None:
        for path in sorted((self.root / "sessions").glob("*.json")):
            sess = Session.from_json(json.loads(path.read_text()))
            sess.active_job_id = None  # jobs do not survive restarts
            self.sessions[sess.id] = sess
        for path in sorted((self.root / "jobs").glob("*.json")):
            job = Job(**json.loads(path.read_text()))
            if job.status in ("queued", "running"):
                job.status, job.error = "failed", "interrupted by restart"
            self.jobs[job.id] = job

    def _persist_session(self, sess: Session) -> None:
        (self.root / "sessions" / f"{sess.id}.json").write_text(
            json.dumps(sess.to_json(), sort_keys=True)
        )

    def _persist_job(self, job: Job) -> None:
        (self.root / "jobs" / f"{job.id}.json").write_text(json.dumps(job.to_json(), sort_keys=True))

    def _load_patient_tables(self) -> dict:
        meta = self.root / "cohort.json"
        if not meta.exists():
            return {}
        blob = json.loads(meta.read_text())
        from ..dynamics import EfficacyTable

        return {
            p["id"]: EfficacyTable.from_config(p["efficacy_table"])
            for p in blob.get("patients", [])
        }

    # -- patients and states ---------------------------------------------

    def patient_ids(self) -> list[str]:
        return sorted(p.parent.name for p in self.root.glob("p*/pre.mvol"))

    def patient_dims(self, patient_id: str) -> tuple[int, int, int]:
        vol_path, _ = self.patient_paths(patient_id)
        header = json.loads(vol_path.read_text())
        return tuple(int(d) for d in header["dims"])

    def patient_paths(self, patient_id: str) -> tuple[Path, Path]:
        pdir = self.root / patient_id
        vol, mask = pdir / "pre.mvol", pdir / "mask.mvol"
        if not vol.exists() or not mask.exists():
            raise UnknownIdError(f"unknown patient {patient_id!r}")
        return vol, mask

    def load_patient(self, patient_id: str) -> tuple[Volume3, Mask3]:
        vol, mask = self.patient_paths(patient_id)
        return load_volume(vol), load_mask(mask)

    def table_for(self, patient_id: str):
        """Patient-specific efficacy weights overlaid on the engine table."""
        patient = self._patient_tables.get(patient_id)
        if patient is None:
            return self.config.table
        from ..dynamics import EfficacyTable

        return EfficacyTable(
            weights={**self.config.table.weights, **patient.weights},
            thresholds=patient.thresholds,
            diminishing=patient.diminishing,
            noise_scale=patient.noise_scale,
        )

    def save_state(self, state_id: str, volume: Volume3, mask: Mask3, meta: dict) -> None:
        sdir = self.root / "states" / state_id
        save_volume(volume, sdir / "volume.mvol")
        save_mask(mask, sdir / "mask.mvol")
        (sdir / "meta.json").write_text(json.dumps(meta, sort_keys=True))

    def load_state(self, state_id: str) -> tuple[Volume3, Mask3]:
        if state_id.startswith("pre-"):
            return self.load_patient(state_id[4:])
        sdir = self.root / "states" / state_id
        if not (sdir / "volume.mvol").exists():
            raise UnknownIdError(f"unknown state {state_id!r}")
        return load_volume(sdir / "volume.mvol"), load_mask(sdir / "mask.mvol")

    # -- request idempotency ----------------------------------------------

    def cached_response(self, scope: str, request_id: Optional[str]) -> Optional[dict]:
        if request_id is None:
            return None
        return self.request_cache.get((scope, request_id))

    def cache_response(self, scope: str, request_id: Optional[str], response: dict) -> None:
        if request_id is not None:
            self.request_cache[(scope, request_id)] = response

    # -- sessions ----------------------------------------------------------

    def create_session(self, patient_id: str) -> Session:
        self.patient_paths(patient_id)  # 404 for unknown patients
        sess = Session(
            id=f"sess-{uuid.uuid4().hex[:10]}",
            patient_id=patient_id,
            model_ref="model.json",
            pre_state_id=f"pre-{patient_id}",
            dims=self.patient_dims(patient_id),
        )
        with self.lock:
            self.sessions[sess.id] = sess
            self._persist_session(sess)
        return sess

    def get_session(self, session_id: str) -> Session:
        sess = self.sessions.get(session_id)
        if sess is None:
            raise UnknownIdError(f"unknown session {session_id!r}")
        return sess

    def base_from_combo_names(self, combo) -> ActionCombo:
        vocab = self.config.vocabulary
        units: list[ActionUnit] = []
        for name in list(combo.drugs) + list(combo.embolics):
            unit = vocab.find(name)
            if unit is None:
                raise InvalidArgumentError(f"unknown action unit {name!r}")
            units.append(unit)
        return ActionCombo(tuple(units))

    def run_simulate(self, session_id: str, combo_spec, replicas: int, seed: int) -> dict:
        sess = self.get_session(session_id)
        combo = self.base_from_combo_names(combo_spec)
        violations = check_rules(combo, self.config.vocabulary.rules, complete=True)
        if violations:
            raise RuleViolationError(violations)

        volume, mask = self.load_patient(sess.patient_id)
        table = self.table_for(sess.patient_id)
        states = simulate(volume, mask, combo, table, replicas, seed=seed)
        risks = []
        for st in states:
            seg = segment_post(st.volume, st.mask, self.config.segmenter)
            feats = extract_features(volume, mask, st.volume, seg)
            risks.append(risk_score(self.model, feats))
        mean_risk = float(np.mean(risks))

        with self.lock:
            state_id = f"{sess.id}-st{len(sess.protocols):03d}"
        self.save_state(
            state_id,
            states[0].volume,
            states[0].mask,
            {
                "session_id": sess.id,
                "combo": {"drugs": [u.name for u in combo.drugs],
                          "embolics": [u.name for u in combo.embolics]},
                "params": states[0].params.to_dict(),
                "seed": seed,
            },
        )
        entry = ProtocolEntry(
            label=combo.label(),
            combo={"drugs": [u.name for u in combo.drugs],
                   "embolics": [u.name for u in combo.embolics]},
            mean_risk=mean_risk,
            replica_risks=[float(r) for r in risks],
            replicas=replicas,
            seed=seed,
            state_id=state_id,
            source="manual",
        )
        with self.lock:
            sess.protocols.append(entry)
            self._persist_session(sess)
        return {"mean_risk": mean_risk, "replica_risks": entry.replica_risks, "state_id": state_id}

    # -- exploration jobs ---------------------------------------------------

    def submit_explore(self, session_id: str, cfg: ExplorationConfig, goal: str) -> Job:
        sess = self.get_session(session_id)
        with self.lock:
            if sess.active_job_id is not None:
                job = self.jobs.get(sess.active_job_id)
                if job is not None and job.status in ("queued", "running"):
                    raise JobAlreadyRunningError(sess.active_job_id)
            job = Job(id=f"job-{uuid.uuid4().hex[:10]}", session_id=session_id)
            self.jobs[job.id] = job
            sess.active_job_id = job.id
            self._persist_job(job)
            self._persist_session(sess)
        self.pool.submit(self._run_explore, job.id, cfg, goal)
        return job

    def _run_explore(self, job_id: str, cfg: ExplorationConfig, goal: str) -> None:
        job = self.jobs[job_id]
        sess = self.sessions[job.session_id]
        with self.lock:
            job.status = "running"
            self._persist_job(job)
        try:
            volume, mask = self.load_patient(sess.patient_id)
            vocab = self.config.vocabulary
            base = ActionBase(vocab.drugs, vocab.embolics, vocab.rules)
            plan = explore(
                volume,
                mask,
                goal,
                base,
                self.model,
                cfg,
                self.table_for(sess.patient_id),
                self.config.segmenter,
            )
            # Persist the trajectory end state (cumulative render, exactly
            # what the search scored) for the slice viewer.
            from ..dynamics import attenuate
            from ..explorer import combo_cumulative_params

            cum = combo_cumulative_params(plan.combo.units, self.table_for(sess.patient_id))
            end_state = attenuate(volume, mask, cum, seed=cfg.seed)
            state_id = f"{sess.id}-plan-{job.id[-6:]}"
            self.save_state(
                state_id,
                end_state.volume,
                end_state.mask,
                {"session_id": sess.id, "combo": plan.to_json()["combo"], "job_id": job.id},
            )
            entry = ProtocolEntry(
                label=plan.combo.label(),
                combo=plan.to_json()["combo"],
                mean_risk=plan.score,
                replica_risks=[plan.score],
                replicas=cfg.replicas,
                seed=cfg.seed,
                state_id=state_id,
                source="explored",
            )
            with self.lock:
                job.plan = plan.to_json()
                job.status = "succeeded"
                sess.protocols.append(entry)
                sess.active_job_id = None
                self._persist_job(job)
                self._persist_session(sess)
        except Exception as exc:
            with self.lock:
                job.status = "failed"
                job.error = f"{type(exc).__name__}: {exc}"
                sess.active_job_id = None
                self._persist_job(job)
                self._persist_session(sess)

    def get_job(self, job_id: str) -> Job:
        job = self.jobs.get(job_id)
        if job is None:
            raise UnknownIdError(f"unknown job {job_id!r}")
        return job

    def set_final_protocol(self, session_id: str, combo_spec, provenance: str) -> Session:
        sess = self.get_session(session_id)
        combo = self.base_from_combo_names(combo_spec)
        violations = check_rules(combo, self.config.vocabulary.rules, complete=True)
        if violations:
            raise RuleViolationError(violations)
        with self.lock:
            sess.final_protocol = {
                "combo": {"drugs": [u.name for u in combo.drugs],
                          "embolics": [u.name for u in combo.embolics]},
                "provenance": provenance,
            }
            self._persist_session(sess)
        return sess


def build_model(data_dir: Path, model_path: Optional[Path]) -> CoxModel:
    """Load the risk model, fitting one from survival.csv when absent."""
    model_path = model_path or data_dir / "model.json"
    if model_path.exists():
        return CoxModel.load(model_path)
    survival_csv = data_dir / "survival.csv"
    if survival_csv.exists():
        records, names = load_survival_csv(survival_csv)
        model = fit_cox(records, names)
        model.save(model_path)
        return model
    raise InvalidArgumentError(
        f"no model at {model_path} and no survival.csv to fit one from; "
        "run `taceplan cohort gen` + `taceplan fit-cox`, or pass --demo"
    )


def bootstrap_demo(data_dir: Path, seed: int = 0, n: int = 4) -> None:
    """Generate a small demo cohort + model into an empty data dir."""
    from ..actions import default_vocabulary
    from ..cohort import generate_cohort, save_cohort

    vocab = default_vocabulary()
    base = ActionBase(vocab.drugs[:4], vocab.embolics[:2], vocab.rules)
    cohort = generate_cohort(n, base, seed=seed, grid=36)
    save_cohort(cohort, data_dir)
    from ..survival import FEATURE_NAMES

    model = fit_cox(cohort.records(), FEATURE_NAMES)
    model.save(data_dir / "model.json")
