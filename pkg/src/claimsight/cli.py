"""Pipeline command-line interface.

Verbs compose into the full pipeline:

    claimsight synth generate --workdir runs/demo --seed 7 --patients 500
    claimsight cohort build --workdir runs/demo --seed 7
    claimsight features extract id --workdir runs/demo --seed 7
    claimsight features extract risk --workdir runs/demo --seed 7
    claimsight train id --workdir runs/demo
    claimsight train risk --workdir runs/demo
    claimsight eval id --workdir runs/demo
    claimsight eval risk --workdir runs/demo
    claimsight eval fairness --workdir runs/demo
    claimsight serve --workdir runs/demo --port 8230
"""

from __future__ import annotations

from pathlib import Path

import click

from . import pipeline
from .glm import ClassWeighting, GlmConfig, Penalty
from .synth import GeneratorConfig


@click.group()
def main():
    """Claims-based pregnancy detection and risk triage pipeline."""


@main.group()
def synth():
    """Synthetic corpus generation."""


@synth.command("generate")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--patients", type=int, default=1000, show_default=True,
              help="Total patient count; subgroup mix keeps the default 22.6/62.4/15.0 ratio.")
@click.option("--delay-fraction", type=float, default=0.3, show_default=True)
@click.option("--delay-mean-weeks", type=float, default=6.0, show_default=True)
@click.option("--force", is_flag=True)
def synth_generate(workdir: Path, seed: int, patients: int, delay_fraction: float,
                   delay_mean_weeks: float, force: bool):
    config = GeneratorConfig(
        seed=seed,
        n_uncomplicated=round(patients * 0.226),
        n_complicated=round(patients * 0.624),
        n_never=patients - round(patients * 0.226) - round(patients * 0.624),
        anchor_delay_fraction=delay_fraction,
        anchor_delay_mean_weeks=delay_mean_weeks,
    )
    out = pipeline.stage_synth(workdir, config, force=force)
    click.echo(f"corpus written to {out}")


@main.group()
def cohort():
    """Cohort construction."""


@cohort.command("build")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--force", is_flag=True)
def cohort_build(workdir: Path, seed: int, force: bool):
    out = pipeline.stage_cohort(workdir, seed, force=force)
    click.echo(f"cohort written to {out}")


@main.group()
def features():
    """Feature extraction."""


@features.command("extract")
@click.argument("dataset", type=click.Choice(["id", "risk"]))
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--force", is_flag=True)
def features_extract(dataset: str, workdir: Path, seed: int, force: bool):
    out = pipeline.stage_features(workdir, dataset, seed, force=force)
    click.echo(f"{dataset} features written to {out}")


def _parse_config(penalty: str, c: float, l1_ratio: float | None, tolerance: float,
                  weighting: str) -> GlmConfig:
    return GlmConfig(
        penalty=Penalty(penalty),
        C=c,
        l1_ratio=l1_ratio,
        tolerance=tolerance,
        max_iters=500,
        class_weighting=ClassWeighting(weighting),
    )


@main.group()
def train():
    """Model training."""


@train.command("id")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
@click.option("--grid", "use_grid", is_flag=True, help="Search the full hyperparameter grid.")
@click.option("--c", "c_value", type=float, default=None)
@click.option("--tolerance", type=float, default=None)
@click.option("--force", is_flag=True)
def train_id(workdir: Path, use_grid: bool, c_value: float | None, tolerance: float | None, force: bool):
    config = None
    if c_value is not None or tolerance is not None:
        base = pipeline.DEFAULT_ID_CONFIG
        config = _parse_config(
            "l1", c_value or base.C, None, tolerance or base.tolerance, "none"
        )
    path = pipeline.stage_train_id(workdir, config, use_grid=use_grid, force=force)
    click.echo(f"identification model written to {path}")


@train.command("risk")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
@click.option("--grid", "use_grid", is_flag=True)
@click.option("--c", "c_value", type=float, default=None)
@click.option("--tolerance", type=float, default=None)
@click.option("--force", is_flag=True)
def train_risk(workdir: Path, use_grid: bool, c_value: float | None, tolerance: float | None, force: bool):
    config = None
    if c_value is not None or tolerance is not None:
        base = pipeline.DEFAULT_RISK_CONFIG
        config = _parse_config(
            "l1", c_value or base.C, None, tolerance or base.tolerance, "inverse_prior"
        )
    path = pipeline.stage_train_risk(workdir, config, use_grid=use_grid, force=force)
    click.echo(f"risk model written to {path}")


@main.group("eval")
def eval_group():
    """Retrospective evaluation reports."""


@eval_group.command("id")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
def eval_id(workdir: Path):
    stats = pipeline.stage_eval_id(workdir)
    click.echo(
        f"fraction earlier: {stats.fraction_earlier:.4f}; "
        f"never-pregnant FPR: {stats.false_positive_rate:.4f}; "
        f"reports under {pipeline.reports_dir(workdir)}"
    )


@eval_group.command("risk")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
def eval_risk(workdir: Path):
    trend, buckets = pipeline.stage_eval_risk(workdir)
    click.echo(
        f"auc slope: {trend.auc_slope:.5f}; buckets total {buckets.total}; "
        f"reports under {pipeline.reports_dir(workdir)}"
    )


@eval_group.command("fairness")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
def eval_fairness(workdir: Path):
    report = pipeline.stage_eval_fairness(workdir)
    for row in report.rows:
        acc = "n/a" if row.accuracy is None else f"{row.accuracy:.3f}"
        auc = "n/a" if row.auc is None else f"{row.auc:.3f}"
        click.echo(f"  {row.group:12s} n={row.n:5d} acc={acc} auc={auc}")
    click.echo(f"report under {pipeline.reports_dir(workdir)}")


@main.command("serve")
@click.option("--workdir", type=click.Path(path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8230, show_default=True)
@click.option("--panel", type=click.Path(path_type=Path), default=None,
              help="Optional demo panel config (JSON list of patient ids to surface).")
def serve(workdir: Path, host: str, port: int, panel: Path | None):
    import uvicorn

    from .service import build_app

    app = build_app(workdir, panel_path=panel)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
