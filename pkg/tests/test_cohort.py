import numpy as np
import pytest
from scipy.stats import spearmanr

from taceplan.actions import ActionBase, ActionCombo, check_rules, default_vocabulary
from taceplan.cohort import (
    BenchmarkConfig,
    benchmark,
    generate_cohort,
    load_cohort,
    reference_risk_model,
    save_cohort,
    set_metrics,
)
from taceplan.errors import InvalidArgumentError
from taceplan.explorer import ExplorationConfig
from taceplan.survival import FEATURE_NAMES, fit_cox

VOCAB = default_vocabulary()


def combo_of(*names):
    return ActionCombo(tuple(VOCAB.find(n) for n in names))


# --- set metrics -------------------------------------------------------------


def test_metrics_identity():
    c = combo_of("Cisplatin", "Lipiodol")
    assert set_metrics(c, c) == (1.0, 1.0, 1.0, 1.0)


def test_metrics_worked_example():
    pred = combo_of("Cisplatin", "Lipiodol")
    gold = combo_of("Cisplatin", "Doxorubicin", "Lipiodol")
    f1, jac, prec, rec = set_metrics(pred, gold)
    assert prec == 1.0
    assert rec == pytest.approx(2 / 3)
    assert f1 == pytest.approx(0.8)
    assert jac == pytest.approx(2 / 3)


def test_metrics_disjoint():
    assert set_metrics(combo_of("Cisplatin"), combo_of("Doxorubicin", "Lipiodol")) == (
        0.0,
        0.0,
        0.0,
        0.0,
    )


def test_metrics_empty_pred_defined():
    f1, jac, prec, rec = set_metrics(ActionCombo(()), combo_of("Cisplatin"))
    assert (f1, jac, prec, rec) == (0.0, 0.0, 0.0, 0.0)


def test_metrics_empty_gold_rejected():
    with pytest.raises(InvalidArgumentError):
        set_metrics(combo_of("Cisplatin"), ActionCombo(()))


def test_metrics_jaccard_f1_identity_all_pairs():
    names = ["Cisplatin", "Doxorubicin", "Mitomycin", "Lipiodol", "Gelatin Sponge"]
    import itertools

    units = [VOCAB.find(n) for n in names]
    subsets = []
    for r in range(len(names) + 1):
        subsets += [ActionCombo(tuple(c)) for c in itertools.combinations(units, r)]
    for gold in subsets:
        if not gold.units:
            continue
        for pred in subsets:
            f1, jac, prec, rec = set_metrics(pred, gold)
            if f1 > 0:
                assert jac == pytest.approx(f1 / (2 - f1), abs=1e-12)
            else:
                assert jac == 0.0


# --- cohort generation ----------------------------------------------------------


def small_cohort(n=4, seed=0, grid=30):
    base = ActionBase(VOCAB.drugs[:3], VOCAB.embolics[:2], VOCAB.rules)
    return generate_cohort(
        n,
        base,
        seed=seed,
        grid=grid,
        explore_cfg=ExplorationConfig(drug_horizon=1, embolic_horizon=1, seed=seed),
    )


def test_generation_deterministic():
    a = small_cohort(n=1, seed=5)
    b = small_cohort(n=1, seed=5)
    pa, pb = a.patients[0], b.patients[0]
    np.testing.assert_array_equal(pa.volume.data, pb.volume.data)
    np.testing.assert_array_equal(pa.mask.data, pb.mask.data)
    assert pa.gold_action.names == pb.gold_action.names
    assert pa.survival == pb.survival
    assert pa.report == pb.report


def test_gold_actions_rule_valid():
    cohort = small_cohort(n=5, seed=2)
    for p in cohort.patients:
        assert check_rules(p.gold_action, cohort.base.rules) == []
        assert len(p.gold_action.drugs) >= 1 and len(p.gold_action.embolics) >= 1


def test_single_valid_combo_base():
    base = ActionBase((VOCAB.find("Cisplatin"),), (VOCAB.find("Lipiodol"),), VOCAB.rules)
    cohort = generate_cohort(
        3, base, seed=3, grid=28,
        explore_cfg=ExplorationConfig(drug_horizon=1, embolic_horizon=1),
    )
    for p in cohort.patients:
        assert p.gold_action.names == ("Cisplatin", "Lipiodol")


def test_survival_correlates_with_response():
    # stronger simulated response (lower ratio) -> stochastically longer life
    base = ActionBase(VOCAB.drugs[:3], VOCAB.embolics[:2], VOCAB.rules)
    cohort = generate_cohort(
        200, base, seed=7, grid=48, hazard_k=3.0,
        explore_cfg=ExplorationConfig(drug_horizon=1, embolic_horizon=1, seed=7),
    )
    ratios = [p.survival.covariates[FEATURE_NAMES.index("volume_change_ratio")]
              for p in cohort.patients]
    times = [p.survival.time for p in cohort.patients]
    rho = spearmanr([-r for r in ratios], times).statistic
    assert rho > 0.3


def test_censoring_share_calibrated():
    cohort = small_cohort(n=120, seed=8, grid=28)
    censored = sum(1 - p.survival.event for p in cohort.patients) / len(cohort.patients)
    assert 0.08 <= censored <= 0.35


def test_reports_parse_back_to_gold():
    from taceplan.actions import parse_report

    cohort = small_cohort(n=4, seed=9)
    for p in cohort.patients:
        parsed = parse_report(p.report, VOCAB)
        assert {u.name for u in parsed.units} == set(p.gold_action.names)


# --- benchmark --------------------------------------------------------------------


def test_benchmark_oracle_recovers_gold(tmp_path):
    cohort = small_cohort(n=6, seed=11)
    model = reference_risk_model()
    cfg = BenchmarkConfig(planner="oracle", explore=cohort.explore_cfg)
    report = benchmark(cohort, cfg, model, out_dir=tmp_path / "rep")
    assert report.f1 == pytest.approx(1.0)
    assert (tmp_path / "rep" / "report.json").exists()
    assert (tmp_path / "rep" / "report.csv").exists()


def test_benchmark_random_below_oracle():
    cohort = small_cohort(n=6, seed=12)
    model = reference_risk_model()
    oracle = benchmark(cohort, BenchmarkConfig(planner="oracle", explore=cohort.explore_cfg), model)
    rand = benchmark(
        cohort, BenchmarkConfig(planner="random", explore=cohort.explore_cfg, seed=1), model
    )
    assert rand.f1 < oracle.f1


def test_benchmark_reproducible_bytes(tmp_path):
    cohort = small_cohort(n=4, seed=13)
    model = reference_risk_model()
    cfg = BenchmarkConfig(planner="explore", explore=cohort.explore_cfg)
    benchmark(cohort, cfg, model, out_dir=tmp_path / "a")
    benchmark(cohort, cfg, model, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_benchmark_records_failures():
    cohort = small_cohort(n=3, seed=14)
    # corrupt one patient's efficacy table so its exploration fails
    from taceplan.dynamics import EfficacyTable

    broken = cohort.patients[1]
    object.__setattr__(broken, "efficacy_table", EfficacyTable({"Nope": 1.0}))
    model = reference_risk_model()
    report = benchmark(cohort, BenchmarkConfig(planner="explore", explore=cohort.explore_cfg), model)
    assert len(report.failures) == 1
    assert report.failures[0]["patient_id"] == broken.id
    assert len(report.rows) == 2


def test_benchmark_empty_cohort():
    cohort = small_cohort(n=1, seed=15)
    cohort.patients = []
    with pytest.raises(InvalidArgumentError):
        benchmark(cohort, BenchmarkConfig(), reference_risk_model())


# --- persistence --------------------------------------------------------------------


def test_cohort_save_load_roundtrip(tmp_path):
    cohort = small_cohort(n=3, seed=16)
    save_cohort(cohort, tmp_path / "c")
    back = load_cohort(tmp_path / "c")
    assert len(back.patients) == 3
    for p0, p1 in zip(cohort.patients, back.patients):
        assert p0.id == p1.id
        np.testing.assert_array_equal(p0.volume.data, p1.volume.data)
        np.testing.assert_array_equal(p0.mask.data, p1.mask.data)
        assert p0.gold_action.names == p1.gold_action.names
        assert p0.survival.time == p1.survival.time
        assert p0.report == p1.report
        assert p0.efficacy_table.weights == p1.efficacy_table.weights
    # reports.csv follows the metadata schema
    header = (tmp_path / "c" / "reports.csv").read_text().splitlines()[0]
    assert header == "patient_id,report,os_months,status"


def test_cohort_gen_fit_cox_sanity():
    cohort = small_cohort(n=40, seed=17, grid=28)
    model = fit_cox(cohort.records(), FEATURE_NAMES)
    assert model.converged
    rep = benchmark(
        cohort, BenchmarkConfig(planner="explore", explore=cohort.explore_cfg), model
    )
    assert rep.c_index > 0.5
