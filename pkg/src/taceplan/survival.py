"""Survival estimators, Cox fitting, and risk scoring of state pairs.

Kaplan-Meier / Nelson-Aalen / log-rank are the nonparametric layer; the
Cox proportional-hazards model is fit by Newton-Raphson on the Breslow
partial log-likelihood with a small ridge term, an optional auxiliary
time-regression penalty on the same linear predictor, and internal
covariate standardization. Risk scoring consumes a fixed 7-feature
descriptor of a (pre, post) state pair.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .dynamics import SimulatedState
from .errors import (
    InsufficientEventsError,
    InvalidArgumentError,
    NoTumorError,
    UndefinedResultError,
)
from .voxel import LIVER, TUMOR, Mask3, Volume3

HYPERDENSE_FEATURE_THRESHOLD = 0.6
VOLUME_EPS_ML = 0.01


@dataclass(frozen=True)
class SurvivalRecord:
    """(time, event, covariates): time in months, event 1 = death."""

    time: float
    event: int
    covariates: tuple[float, ...] = ()
    subject_id: str = ""

    def __post_init__(self):
        if self.time <= 0:
            raise InvalidArgumentError("survival time must be > 0")
        if self.event not in (0, 1):
            raise InvalidArgumentError("event flag must be 0 or 1")
        cov = tuple(float(c) for c in self.covariates)
        if not all(math.isfinite(c) for c in cov):
            raise InvalidArgumentError("covariates must be finite")
        object.__setattr__(self, "covariates", cov)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function with strictly increasing knots."""

    knots: np.ndarray
    values: np.ndarray
    initial: float

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if knots.shape != values.shape:
            raise InvalidArgumentError("knots and values must align")
        if len(knots) > 1 and not np.all(np.diff(knots) > 0):
            raise InvalidArgumentError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if len(self.knots) == 0:
            out = np.full(t.shape, self.initial)
        else:
            idx = np.searchsorted(self.knots, t, side="right")
            out = np.where(idx == 0, self.initial, self.values[np.maximum(idx - 1, 0)])
        return float(out) if out.ndim == 0 else out


def _times_events(records: Sequence[SurvivalRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise InvalidArgumentError("need at least one record")
    t = np.array([r.time for r in records], dtype=np.float64)
    e = np.array([r.event for r in records], dtype=np.int64)
    return t, e


def _event_counts(t: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unique event times with event counts and at-risk counts."""
    event_times = np.unique(t[e == 1])
    d = np.array([int(((t == ut) & (e == 1)).sum()) for ut in event_times])
    n = np.array([int((t >= ut).sum()) for ut in event_times])
    return event_times, d, n


def kaplan_meier(records: Sequence[SurvivalRecord]) -> StepFunction:
    """Product-limit survival estimate; S(0) = 1, steps at event times."""
    t, e = _times_events(records)
    times, d, n = _event_counts(t, e)
    surv = np.cumprod(1.0 - d / n)
    return StepFunction(times, surv, initial=1.0)


def nelson_aalen(records: Sequence[SurvivalRecord]) -> StepFunction:
    """Cumulative hazard estimate H(t) = sum d_i / n_i."""
    t, e = _times_events(records)
    times, d, n = _event_counts(t, e)
    return StepFunction(times, np.cumsum(d / n), initial=0.0)


def logrank(
    group_a: Sequence[SurvivalRecord], group_b: Sequence[SurvivalRecord]
) -> tuple[float, float]:
    """One-degree-of-freedom log-rank test; returns (chi2, p)."""
    ta, ea = _times_events(group_a)
    tb, eb = _times_events(group_b)
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    in_a = np.concatenate([np.ones_like(ta, dtype=bool), np.zeros_like(tb, dtype=bool)])

    observed_minus_expected = 0.0
    variance = 0.0
    for ut in np.unique(t[e == 1]):
        at_risk = t >= ut
        n = int(at_risk.sum())
        n_a = int((at_risk & in_a).sum())
        dying = (t == ut) & (e == 1)
        d = int(dying.sum())
        d_a = int((dying & in_a).sum())
        observed_minus_expected += d_a - d * n_a / n
        if n > 1:
            variance += d * (n_a / n) * (1 - n_a / n) * (n - d) / (n - 1)
    if variance <= 0:
        return 0.0, 1.0
    chi2 = observed_minus_expected**2 / variance
    return float(chi2), float(stats.chi2.sf(chi2, df=1))


# --- Cox proportional hazards ----------------------------------------------


def _aux_targets(t: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Centered rank-normalized -log(time) over events (shorter time ->
    larger target), aligned with the rows where e == 1."""
    ev_times = t[e == 1]
    ranks = stats.rankdata(-np.log(ev_times), method="average")
    return (ranks - 0.5) / len(ev_times) - 0.5


def cox_objective(
    beta: np.ndarray,
    Z: np.ndarray,
    t: np.ndarray,
    e: np.ndarray,
    ridge: float = 1e-4,
    aux_weight: float = 0.0,
) -> float:
    """Penalized Breslow partial log-likelihood (the quantity maximized)."""
    beta = np.asarray(beta, dtype=np.float64)
    order = np.argsort(t, kind="stable")
    ts, es, Zs = t[order], e[order], Z[order]
    eta = Zs @ beta
    rev = np.cumsum(np.exp(eta)[::-1])[::-1]
    ll = 0.0
    for ut in np.unique(ts[es == 1]):
        start = int(np.searchsorted(ts, ut, side="left"))
        rows = (ts == ut) & (es == 1)
        ll += float(eta[rows].sum()) - int(rows.sum()) * math.log(rev[start])
    ll -= 0.5 * ridge * float(beta @ beta)
    if aux_weight > 0:
        ev = es == 1
        ll -= aux_weight * float(((eta[ev] - _aux_targets(ts, es)) ** 2).sum())
    return ll


def cox_gradient(
    beta: np.ndarray,
    Z: np.ndarray,
    t: np.ndarray,
    e: np.ndarray,
    ridge: float = 1e-4,
    aux_weight: float = 0.0,
) -> np.ndarray:
    """Gradient of :func:`cox_objective` with respect to beta."""
    g, _ = _cox_derivatives(np.asarray(beta, dtype=np.float64), Z, t, e, ridge, aux_weight)
    return g


def _cox_derivatives(beta, Z, t, e, ridge, aux_weight):
    p = Z.shape[1]
    order = np.argsort(t, kind="stable")
    ts, es, Zs = t[order], e[order], Z[order]
    eta = Zs @ beta
    w = np.exp(eta)
    s0 = np.cumsum(w[::-1])[::-1]
    s1 = np.cumsum((w[:, None] * Zs)[::-1], axis=0)[::-1]
    s2 = np.cumsum((w[:, None, None] * Zs[:, :, None] * Zs[:, None, :])[::-1], axis=0)[::-1]

    grad = np.zeros(p)
    hess = np.zeros((p, p))
    for ut in np.unique(ts[es == 1]):
        start = int(np.searchsorted(ts, ut, side="left"))
        rows = (ts == ut) & (es == 1)
        d = int(rows.sum())
        zbar = s1[start] / s0[start]
        grad += Zs[rows].sum(axis=0) - d * zbar
        hess -= d * (s2[start] / s0[start] - np.outer(zbar, zbar))

    grad -= ridge * beta
    hess -= ridge * np.eye(p)
    if aux_weight > 0:
        ev = es == 1
        resid = eta[ev] - _aux_targets(ts, es)
        grad -= 2.0 * aux_weight * (Zs[ev].T @ resid)
        hess -= 2.0 * aux_weight * (Zs[ev].T @ Zs[ev])
    return grad, hess


@dataclass
class CoxModel:
    """Fitted Cox model: standardized-space coefficients plus the Breslow
    baseline cumulative hazard."""

    beta: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    feature_names: tuple[str, ...]
    baseline: StepFunction
    ridge: float = 1e-4
    aux_weight: float = 0.0
    converged: bool = True
    n_iter: int = 0
    warnings: tuple[str, ...] = ()

    def standardized(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.means) / self.sds

    def to_json(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "feature_names": list(self.feature_names),
            "baseline": {
                "knots": self.baseline.knots.tolist(),
                "values": self.baseline.values.tolist(),
                "initial": self.baseline.initial,
            },
            "ridge": self.ridge,
            "aux_weight": self.aux_weight,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, blob: dict) -> "CoxModel":
        return cls(
            beta=np.array(blob["beta"], dtype=np.float64),
            means=np.array(blob["means"], dtype=np.float64),
            sds=np.array(blob["sds"], dtype=np.float64),
            feature_names=tuple(blob["feature_names"]),
            baseline=StepFunction(
                np.array(blob["baseline"]["knots"]),
                np.array(blob["baseline"]["values"]),
                blob["baseline"]["initial"],
            ),
            ridge=blob.get("ridge", 1e-4),
            aux_weight=blob.get("aux_weight", 0.0),
            converged=blob.get("converged", True),
            n_iter=blob.get("n_iter", 0),
            warnings=tuple(blob.get("warnings", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "CoxModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_cox(
    records: Sequence[SurvivalRecord],
    feature_names: Optional[Sequence[str]] = None,
    ridge: float = 1e-4,
    aux_weight: float = 0.0,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> CoxModel:
    """Newton-Raphson fit of the ridge-penalized Breslow partial likelihood.

    Covariates are standardized internally; constant covariates get a zero
    coefficient and a warning instead of failing the solve. aux_weight > 0
    adds the squared-error overall-survival regression term on the same
    linear predictor (rank-normalized -log time over events).
    """
    t, e = _times_events(records)
    if int(e.sum()) < 2:
        raise InsufficientEventsError("Cox fit requires at least 2 events")
    X = np.array([r.covariates for r in records], dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InvalidArgumentError("records need at least one covariate")
    n, p = X.shape
    if feature_names is None:
        feature_names = tuple(f"x{i}" for i in range(p))

    means = X.mean(axis=0)
    sds = X.std(axis=0)
    degenerate = sds < 1e-12
    warnings = tuple(
        f"degenerate covariate {feature_names[i]!r}: coefficient forced to 0"
        for i in np.flatnonzero(degenerate)
    )
    sds_safe = np.where(degenerate, 1.0, sds)
    Z = (X - means) / sds_safe
    active = ~degenerate
    Za = Z[:, active]

    beta_a = np.zeros(int(active.sum()))
    converged = False
    it = 0
    if beta_a.size:
        obj = cox_objective(beta_a, Za, t, e, ridge, aux_weight)
        for it in range(1, max_iter + 1):
            grad, hess = _cox_derivatives(beta_a, Za, t, e, ridge, aux_weight)
            # Converge on both the step and the score so the fitted point
            # is a genuine stationary point, not just a stalled iterate.
            if it > 1 and np.max(np.abs(step)) < tol and np.max(np.abs(grad)) < 1e-8:
                converged = True
                break
            step = np.linalg.solve(-hess, grad)
            # Halve until the objective does not decrease.
            for _ in range(40):
                cand_obj = cox_objective(beta_a + step, Za, t, e, ridge, aux_weight)
                if cand_obj >= obj - 1e-12:
                    break
                step = step / 2.0
            beta_a = beta_a + step
            obj = cand_obj
    else:
        converged = True

    beta = np.zeros(p)
    beta[active] = beta_a

    # Breslow baseline cumulative hazard at the fitted coefficients.
    eta = Z @ beta
    w = np.exp(eta)
    event_times = np.unique(t[e == 1])
    increments = []
    for ut in event_times:
        d = int(((t == ut) & (e == 1)).sum())
        s0 = float(w[t >= ut].sum())
        increments.append(d / s0)
    baseline = StepFunction(event_times, np.cumsum(increments), initial=0.0)

    return CoxModel(
        beta=beta,
        means=means,
        sds=sds_safe,
        feature_names=tuple(feature_names),
        baseline=baseline,
        ridge=ridge,
        aux_weight=aux_weight,
        converged=converged,
        n_iter=it,
        warnings=warnings,
    )


def concordance_index(risks: Sequence[float], records: Sequence[SurvivalRecord]) -> float:
    """Harrell's C over comparable pairs.

    A pair is comparable when one subject's event precedes the other's
    time (or a censoring at the same time). Risk ties count 0.5; no
    comparable pairs raises.
    """
    risks = np.asarray(risks, dtype=np.float64)
    t, e = _times_events(records)
    if len(risks) != len(t):
        raise InvalidArgumentError("risks and records length mismatch")
    concordant = 0.0
    comparable = 0
    for i in np.flatnonzero(e == 1):
        later = (t > t[i]) | ((t == t[i]) & (e == 0))
        comparable += int(later.sum())
        concordant += float((risks[i] > risks[later]).sum())
        concordant += 0.5 * float((risks[i] == risks[later]).sum())
    if comparable == 0:
        raise UndefinedResultError("no comparable pairs for concordance")
    return concordant / comparable


def true_risk(records: Sequence[SurvivalRecord]) -> np.ndarray:
    """Per-subject evaluation target: Nelson-Aalen cumulative hazard at the
    subject's observed time, rank-normalized to [0, 1]."""
    t, e = _times_events(records)
    if int(e.sum()) < 1:
        raise InvalidArgumentError("true risk needs at least one event")
    hazard = nelson_aalen(records)(t)
    ranks = stats.rankdata(hazard, method="average")
    return (ranks - 0.5) / len(records)


def rank_normalize(values: Sequence[float]) -> np.ndarray:
    """Average-rank normalization onto [0, 1] (midpoint convention)."""
    values = np.asarray(values, dtype=np.float64)
    ranks = stats.rankdata(values, method="average")
    return (ranks - 0.5) / len(values)


# --- features and risk scoring ----------------------------------------------

FEATURE_NAMES = (
    "tumor_volume_pre",
    "tumor_volume_post",
    "volume_change_ratio",
    "mean_intensity_pre",
    "mean_intensity_post",
    "hyperdense_fraction_post",
    "tumor_liver_ratio_pre",
)


@dataclass(frozen=True)
class FeatureVector:
    tumor_volume_pre: float
    tumor_volume_post: float
    volume_change_ratio: float
    mean_intensity_pre: float
    mean_intensity_post: float
    hyperdense_fraction_post: float
    tumor_liver_ratio_pre: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)


def extract_features(
    pre_volume: Volume3,
    pre_mask: Mask3,
    post: Union[SimulatedState, Volume3],
    post_mask: Optional[Mask3] = None,
) -> FeatureVector:
    """Radiomics-lite descriptor of a (pre, post) state pair.

    Volumes are in ml; the volume-change ratio carries a small epsilon so
    complete responses stay finite. ``post`` may be a SimulatedState
    (using its own mask) or a volume with an explicit mask, typically the
    assistant segmentation.
    """
    if isinstance(post, SimulatedState):
        post_volume = post.volume
        post_mask = post_mask or post.mask
    else:
        post_volume = post
        if post_mask is None:
            raise InvalidArgumentError("post mask required when post is a raw volume")

    pre_tumor = pre_mask.data == TUMOR
    n_pre = int(pre_tumor.sum())
    if n_pre == 0:
        raise NoTumorError("pre-treatment tumor mask is empty")
    v_pre = n_pre * pre_mask.voxel_volume_ml
    organ = pre_mask.data >= LIVER
    v_organ = int(organ.sum()) * pre_mask.voxel_volume_ml

    post_tumor = post_mask.data == TUMOR
    n_post = int(post_tumor.sum())
    v_post = n_post * post_mask.voxel_volume_ml

    post_vals = post_volume.data[post_tumor]
    mean_post = float(post_vals.mean()) if n_post else 0.0
    hyper = (
        float((post_vals >= HYPERDENSE_FEATURE_THRESHOLD).sum() / n_post) if n_post else 0.0
    )
    return FeatureVector(
        tumor_volume_pre=v_pre,
        tumor_volume_post=v_post,
        volume_change_ratio=(v_post + VOLUME_EPS_ML) / (v_pre + VOLUME_EPS_ML),
        mean_intensity_pre=float(pre_volume.data[pre_tumor].mean()),
        mean_intensity_post=mean_post,
        hyperdense_fraction_post=hyper,
        tumor_liver_ratio_pre=(v_pre + VOLUME_EPS_ML) / (v_organ + VOLUME_EPS_ML),
    )


def risk_score(model: CoxModel, features: Union[FeatureVector, np.ndarray]) -> float:
    """Linear predictor on standardized features; higher = worse prognosis."""
    x = features.as_array() if isinstance(features, FeatureVector) else np.asarray(features)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("features must be finite")
    return float(model.beta @ model.standardized(x))


# --- cohort survival table (CSV) ---------------------------------------------


def save_survival_csv(
    records: Sequence[SurvivalRecord], feature_names: Sequence[str], path
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "time_months", "event", *feature_names])
        for r in records:
            writer.writerow([r.subject_id, repr(r.time), r.event, *[repr(c) for c in r.covariates]])


def load_survival_csv(path) -> tuple[list[SurvivalRecord], tuple[str, ...]]:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["subject_id", "time_months", "event"]:
            raise InvalidArgumentError("unexpected survival CSV header")
        names = tuple(header[3:])
        records = [
            SurvivalRecord(
                time=float(row[1]),
                event=int(row[2]),
                covariates=tuple(float(x) for x in row[3:]),
                subject_id=row[0],
            )
            for row in reader
        ]
    return records, names
