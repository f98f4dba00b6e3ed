import numpy as np
import pytest

from taceplan.actions import ActionBase, default_vocabulary
from taceplan.cohort import reference_risk_model, synthesize_patient_grids
from taceplan.dynamics import EfficacyTable


@pytest.fixture(scope="session")
def vocabulary():
    return default_vocabulary()


@pytest.fixture(scope="session")
def small_base(vocabulary):
    """3 drugs (one platinum) + 2 embolics, full rule set."""
    return ActionBase(vocabulary.drugs[:3], vocabulary.embolics[:2], vocabulary.rules)


@pytest.fixture(scope="session")
def ref_model():
    return reference_risk_model()


def make_phantom(seed=0, grid=40, radius=None, lobes=None):
    rng = np.random.default_rng(seed)
    return synthesize_patient_grids(rng, grid=grid, tumor_radius=radius, extra_lobes=lobes)


def make_table(base, seed=0, lo=0.4, hi=1.4, noise=0.0):
    rng = np.random.default_rng(seed)
    weights = {u.name: float(rng.uniform(lo, hi)) for u in base.units}
    return EfficacyTable(weights, noise_scale=noise)


def exponential_cohort(
    n, beta, seed=0, censor_frac=0.2, base_scale=20.0
):
    """Tabular survival data with planted linear log-hazard.

    Returns SurvivalRecords with standard-normal covariates, exponential
    times with rate proportional to exp(beta . x), and uniform censoring
    tuned to roughly censor_frac.
    """
    from taceplan.survival import SurvivalRecord

    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=np.float64)
    X = rng.standard_normal((n, len(beta)))
    rates = np.exp(X @ beta) / base_scale
    times = rng.exponential(1.0 / rates)
    # Horizon chosen from the rate mix to hit the target censoring share.
    lo_u, hi_u = 1e-6, 1e9
    for _ in range(100):
        mid = np.sqrt(lo_u * hi_u)
        x = rates * mid
        if float(np.mean((1 - np.exp(-x)) / x)) > censor_frac:
            lo_u = mid
        else:
            hi_u = mid
    censor = rng.uniform(0, np.sqrt(lo_u * hi_u), size=n)
    observed = np.maximum(np.minimum(times, censor), 1e-3)
    events = (times <= censor).astype(int)
    return [
        SurvivalRecord(
            time=float(observed[i]),
            event=int(events[i]),
            covariates=tuple(X[i]),
            subject_id=f"s{i:04d}",
        )
        for i in range(n)
    ]
