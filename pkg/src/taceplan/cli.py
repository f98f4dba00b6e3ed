"""Command-line interface: thin wrappers over the engine and service.

Exit codes: 0 success, 1 usage error, 2 runtime error. All randomness is
behind explicit --seed flags.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .actions import ActionBase, ActionCombo
from .cohort import BenchmarkConfig, benchmark, generate_cohort, load_cohort, save_cohort
from .config import EngineConfig, load_engine_config
from .dynamics import simulate
from .errors import TaceplanError
from .explorer import ExplorationConfig, explore
from .segmenter import segment_post
from .survival import (
    CoxModel,
    concordance_index,
    extract_features,
    fit_cox,
    load_survival_csv,
    risk_score,
)
from .voxel import load_mask, load_volume, save_mask, save_volume


@click.group()
def cli():
    """TACE treatment simulation and protocol search."""


@cli.group()
def cohort():
    """Synthetic cohort commands."""


@cohort.command("gen")
@click.option("-n", "n", type=int, required=True, help="Number of patients.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "out_dir", type=click.Path(), required=True)
@click.option("--grid", type=int, default=40, show_default=True)
@click.option("--drugs", "n_drugs", type=int, default=4, show_default=True,
              help="Drugs from the vocabulary in the action base.")
@click.option("--embolics", "n_embolics", type=int, default=2, show_default=True)
@click.option("--drug-horizon", type=int, default=2, show_default=True)
@click.option("--embolic-horizon", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def cohort_gen(n, seed, out_dir, grid, n_drugs, n_embolics, drug_horizon, embolic_horizon, config_path):
    """Generate a synthetic cohort with oracle-defined gold actions."""
    cfg = load_engine_config(config_path)
    vocab = cfg.vocabulary
    base = ActionBase(
        vocab.drugs[: max(1, n_drugs)], vocab.embolics[: max(1, n_embolics)], vocab.rules
    )
    explore_cfg = ExplorationConfig(
        drug_horizon=drug_horizon, embolic_horizon=embolic_horizon, seed=seed
    )
    result = generate_cohort(n, base, seed=seed, grid=grid, explore_cfg=explore_cfg,
                             seg_cfg=cfg.segmenter)
    save_cohort(result, out_dir)
    click.echo(f"wrote cohort of {n} patients to {out_dir}")


@cli.command("fit-cox")
@click.option("--cohort", "cohort_dir", type=click.Path(exists=True), required=True)
@click.option("-o", "out_path", type=click.Path(), required=True)
@click.option("--ridge", type=float, default=1e-4, show_default=True)
@click.option("--aux-weight", type=float, default=0.0, show_default=True,
              help="Weight of the overall-survival regression term.")
@click.option("--holdout", type=float, default=0.0, show_default=True,
              help="Held-out fraction for a c-index report.")
@click.option("--seed", type=int, default=0, show_default=True)
def fit_cox_cmd(cohort_dir, out_path, ridge, aux_weight, holdout, seed):
    """Fit the risk model on a cohort's survival table."""
    records, names = load_survival_csv(Path(cohort_dir) / "survival.csv")
    if not 0 <= holdout < 1:
        raise click.UsageError("--holdout must be in [0, 1)")
    train, test = records, []
    if holdout > 0:
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(records))
        n_test = int(round(holdout * len(records)))
        test = [records[i] for i in order[:n_test]]
        train = [records[i] for i in order[n_test:]]
    model = fit_cox(train, names, ridge=ridge, aux_weight=aux_weight)
    model.save(out_path)
    click.echo(f"fitted on {len(train)} records (converged={model.converged}, "
               f"iterations={model.n_iter}) -> {out_path}")
    for w in model.warnings:
        click.echo(f"warning: {w}", err=True)
    if test:
        from .errors import UndefinedResultError

        risks = [risk_score(model, np.array(r.covariates)) for r in test]
        try:
            cidx = f"{concordance_index(risks, test):.4f}"
        except UndefinedResultError:
            cidx = "undefined (no comparable pairs)"
        click.echo(f"held-out c-index over {len(test)} records: {cidx}")


def _load_patient_dir(patient_dir: Path):
    return load_volume(patient_dir / "pre.mvol"), load_mask(patient_dir / "mask.mvol")


def _patient_table(patient_dir: Path, cfg: EngineConfig):
    """Patient-specific efficacy weights overlaid on the engine table, so
    vocabulary units outside the cohort's action base stay scoreable."""
    meta = patient_dir.parent / "cohort.json"
    if meta.exists():
        blob = json.loads(meta.read_text())
        for p in blob.get("patients", []):
            if p["id"] == patient_dir.name:
                from .dynamics import EfficacyTable

                patient = EfficacyTable.from_config(p["efficacy_table"])
                return EfficacyTable(
                    weights={**cfg.table.weights, **patient.weights},
                    thresholds=patient.thresholds,
                    diminishing=patient.diminishing,
                    noise_scale=patient.noise_scale,
                )
    return cfg.table


def _combo_from_json(path: Path, cfg: EngineConfig) -> ActionCombo:
    blob = json.loads(path.read_text())
    units = []
    for name in blob.get("drugs", []) + blob.get("embolics", []):
        unit = cfg.vocabulary.find(name)
        if unit is None:
            raise TaceplanError(f"unknown action unit {name!r}")
        units.append(unit)
    return ActionCombo(tuple(units))


@cli.command("simulate")
@click.option("--patient", "patient_dir", type=click.Path(exists=True), required=True)
@click.option("--combo", "combo_path", type=click.Path(exists=True), required=True,
              help='JSON {"drugs": [...], "embolics": [...]}.')
@click.option("-T", "--replicas", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--model", "model_path", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("-o", "out_dir", type=click.Path(), default=None)
def simulate_cmd(patient_dir, combo_path, replicas, seed, model_path, config_path, out_dir):
    """Simulate one protocol on a patient; optionally score and save states."""
    cfg = load_engine_config(config_path)
    patient_dir = Path(patient_dir)
    combo = _combo_from_json(Path(combo_path), cfg)
    volume, mask = _load_patient_dir(patient_dir)
    table = _patient_table(patient_dir, cfg)
    states = simulate(volume, mask, combo, table, replicas, seed=seed,
                      rules=cfg.vocabulary.rules)

    risks = []
    if model_path:
        model = CoxModel.load(model_path)
        for st in states:
            seg = segment_post(st.volume, st.mask, cfg.segmenter)
            risks.append(risk_score(model, extract_features(volume, mask, st.volume, seg)))
        click.echo(f"mean risk over {replicas} replicas: {float(np.mean(risks)):.6f}")

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, st in enumerate(states):
            save_volume(st.volume, out / f"replica{i:02d}.mvol")
            save_mask(st.mask, out / f"replica{i:02d}.mask.mvol")
        summary = {
            "combo": {"drugs": [u.name for u in combo.drugs],
                      "embolics": [u.name for u in combo.embolics]},
            "params": states[0].params.to_dict(),
            "seed": seed,
            "replicas": replicas,
            "replica_risks": [float(r) for r in risks],
        }
        (out / "simulation.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
        click.echo(f"wrote {replicas} replica states to {out}")


@cli.command("explore")
@click.option("--patient", "patient_dir", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Engine config JSON (explore section sets the search).")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("-o", "out_path", type=click.Path(), required=True)
@click.option("--goal", default="recommend the TACE protocol with the lowest risk",
              show_default=True)
def explore_cmd(patient_dir, config_path, model_path, out_path, goal):
    """Beam-search the lowest-risk protocol; write the plan + trace JSON."""
    cfg = load_engine_config(config_path)
    patient_dir = Path(patient_dir)
    volume, mask = _load_patient_dir(patient_dir)
    vocab = cfg.vocabulary
    base = ActionBase(vocab.drugs, vocab.embolics, vocab.rules)
    model = CoxModel.load(model_path)
    plan = explore(volume, mask, goal, base, model, cfg.explore,
                   _patient_table(patient_dir, cfg), cfg.segmenter)
    Path(out_path).write_text(json.dumps(plan.to_json(), indent=1, sort_keys=True))
    click.echo(f"best protocol {plan.combo.label()} (risk {plan.score:.6f}) -> {out_path}")


@cli.command("benchmark")
@click.option("--cohort", "cohort_dir", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--planner", type=click.Choice(["explore", "oracle", "random"]),
              default="explore", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "out_dir", type=click.Path(), required=True)
def benchmark_cmd(cohort_dir, model_path, planner, config_path, seed, out_dir):
    """Run a planner over a cohort and score it against gold actions."""
    cfg = load_engine_config(config_path)
    data = load_cohort(cohort_dir)
    model = CoxModel.load(model_path)
    bench_cfg = BenchmarkConfig(planner=planner, explore=data.explore_cfg, seed=seed)
    report = benchmark(data, bench_cfg, model, out_dir=Path(out_dir), seg_cfg=cfg.segmenter)
    click.echo(
        f"{planner}: F1 {report.f1:.4f} Jaccard {report.jaccard:.4f} "
        f"Precision {report.precision:.4f} Recall {report.recall:.4f} "
        f"c-index {report.c_index:.4f} MSE {report.mse_vs_true_risk:.4f} "
        f"({len(report.failures)} failures) -> {out_dir}"
    )


@cli.command("serve")
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", type=click.Path(), default=None,
              help="Store root; defaults to $MEWM_DATA_DIR or ./mewm-data.")
@click.option("--model", "model_path", type=click.Path(), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--demo", is_flag=True, help="Bootstrap a tiny demo cohort if the dir is empty.")
def serve_cmd(port, host, data_dir, model_path, config_path, demo):
    """Run the HTTP service."""
    import os

    import uvicorn

    from .service import Store, bootstrap_demo, build_model, create_app

    root = Path(data_dir or os.environ.get("MEWM_DATA_DIR", "./mewm-data"))
    root.mkdir(parents=True, exist_ok=True)
    if demo and not (root / "cohort.json").exists():
        click.echo(f"bootstrapping demo cohort in {root} ...")
        bootstrap_demo(root)
    cfg = load_engine_config(config_path)
    model = build_model(root, Path(model_path) if model_path else None)
    app = create_app(Store(root, cfg, model))
    click.echo(f"serving on http://{host}:{port} (data dir {root})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except TaceplanError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # runtime failures -> exit 2
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
