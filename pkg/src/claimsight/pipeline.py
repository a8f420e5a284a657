"""Pipeline stages and their artifact manifests.

Each stage consumes fingerprinted artifacts, emits its outputs plus a
manifest (inputs with content hashes, seed, config hash, outputs), and is a
no-op when re-run against an identical manifest unless forced. Artifact
fingerprints are validated before a stage runs so mixed-vocabulary or stale
inputs fail loudly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from . import cohort as cohort_mod
from . import reports as reports_mod
from .cohort import (
    COMPLICATION_SPLITS,
    CohortSpec,
    build_never_pregnant_cohort,
    split_by_patient,
    write_split_membership,
)
from .episodes import (
    PregnancyEpisode,
    StartProvenance,
    episode_is_complicated,
    infer_latest_episode,
    label_episode_bounds,
)
from .features import (
    COMPLICATION_WINDOWS,
    TEMPORAL_DOMAINS,
    DesignMatrix,
    FeatureSpec,
    FeatureVocabulary,
    PatientFeatureIndex,
    episode_seed,
    extract_many,
    freeze_vocabulary,
    read_design_matrix,
    sample_complication_cutoffs,
    sample_identification_grid,
    write_design_matrix,
)
from .glm import (
    GlmConfig,
    LinearModel,
    Penalty,
    SelectionMetric,
    ClassWeighting,
    fit,
    grid_search,
    load_model,
    predict_proba_matrix,
    predict_class,
    save_model,
    select_threshold,
)
from .hybrid import (
    HapiConfig,
    infer_episode,
    run_patient,
    weekly_grid,
)
from .records import (
    PatientRecord,
    Race,
    Sex,
    age_years,
    load_claims,
    load_patients,
    write_claims,
    write_patients,
)
from .risk import GroupModels, HistoryGroup, classify_history, train_group_models
from .stats import macro_ovr_auc, accuracy_with_ci, auc_ci
from .synth import (
    GeneratorConfig,
    GroundTruth,
    generate,
    read_ground_truth,
    synthetic_vocabulary,
    write_ground_truth,
    write_role_config,
)
from .vocab import CodeRoleConfig, RiskLabel, Vocabulary, load_code_roles, load_vocabulary, write_vocabulary


class ArtifactError(RuntimeError):
    """Missing or inconsistent pipeline artifacts."""


DEFAULT_ID_CONFIG = GlmConfig(Penalty.L1, C=0.2, tolerance=1e-4, max_iters=500)
DEFAULT_RISK_CONFIG = GlmConfig(
    Penalty.L1, C=0.05, tolerance=1e-4, max_iters=500, class_weighting=ClassWeighting.INVERSE_PRIOR
)
FPR_THRESHOLDS = (0.2, 0.35, 0.5, 0.65, 0.8)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def config_hash(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class Manifest:
    stage: str
    seed: int | None
    config: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> Manifest | None:
    p = Path(path)
    if not p.exists():
        return None
    data = json.loads(p.read_text())
    return Manifest(**data)


def is_noop(
    workdir: Path,
    manifest_path: Path,
    stage: str,
    seed: int | None,
    cfg_hash: str,
    inputs: dict[str, str],
) -> bool:
    existing = read_manifest(manifest_path)
    if existing is None:
        return False
    return (
        existing.stage == stage
        and existing.seed == seed
        and existing.config == cfg_hash
        and existing.inputs == inputs
        and all((Path(workdir) / p).exists() for p in existing.outputs)
    )


def _rel(workdir: Path, p: Path) -> str:
    return str(Path(p).resolve().relative_to(Path(workdir).resolve()))


def _hash_files(workdir: Path, paths: list[Path]) -> dict[str, str]:
    return {_rel(workdir, p): sha256_file(p) for p in sorted(paths)}


# ---------------------------------------------------------------------------
# corpus loading helpers

@dataclass
class Corpus:
    records: list[PatientRecord]
    truths: list[GroundTruth]
    vocabulary: Vocabulary
    roles: CodeRoleConfig

    @property
    def by_id(self) -> dict[str, PatientRecord]:
        return {r.patient_id: r for r in self.records}

    @property
    def truth_by_id(self) -> dict[str, GroundTruth]:
        return {t.patient_id: t for t in self.truths}


def corpus_dir(workdir: Path) -> Path:
    return workdir / "corpus"


def load_corpus(workdir: Path) -> Corpus:
    cdir = corpus_dir(workdir)
    for name in ("claims.csv", "patients.csv", "truth.csv", "vocab.csv", "roles.ini"):
        if not (cdir / name).exists():
            raise ArtifactError(f"missing corpus artifact {cdir / name}; run `synth generate` first")
    vocabulary = load_vocabulary(cdir / "vocab.csv")
    patients = load_patients(cdir / "patients.csv")
    records, rejected = load_claims(cdir / "claims.csv", vocabulary, patients)
    if rejected:
        raise ArtifactError(f"{len(rejected)} claims rows rejected against the corpus vocabulary")
    truths = read_ground_truth(cdir / "truth.csv")
    roles = load_code_roles(cdir / "roles.ini")
    return Corpus(records=records, truths=truths, vocabulary=vocabulary, roles=roles)


# ---------------------------------------------------------------------------
# stage: synth generate

def stage_synth(workdir: Path, config: GeneratorConfig, force: bool = False) -> Path:
    cdir = corpus_dir(workdir)
    cdir.mkdir(parents=True, exist_ok=True)
    manifest_path = cdir / "synth.manifest.json"
    cfg_hash = config_hash(asdict(config))
    if not force and is_noop(workdir, manifest_path, "synth", config.seed, cfg_hash, {}):
        return cdir

    records, truths = generate(config)
    vocabulary = synthetic_vocabulary()
    write_vocabulary(vocabulary, cdir / "vocab.csv")
    write_claims(records, vocabulary, cdir / "claims.csv")
    write_patients(records, cdir / "patients.csv")
    write_ground_truth(truths, cdir / "truth.csv")
    write_role_config(cdir / "roles.ini")

    outputs = _hash_files(
        workdir, [cdir / n for n in ("claims.csv", "patients.csv", "truth.csv", "vocab.csv", "roles.ini")]
    )
    Manifest("synth", config.seed, cfg_hash, {}, outputs).write(manifest_path)
    return cdir


# ---------------------------------------------------------------------------
# stage: cohort build

@dataclass
class CohortArtifacts:
    episodes: dict[str, PregnancyEpisode]
    subgroups: dict[str, str]
    risk_labels: dict[str, RiskLabel]
    id_assignment: dict[str, str]
    risk_assignment: dict[str, str]


def cohort_dir(workdir: Path) -> Path:
    return workdir / "cohort"


def stage_cohort(workdir: Path, seed: int, force: bool = False) -> Path:
    cdir = corpus_dir(workdir)
    odir = cohort_dir(workdir)
    odir.mkdir(parents=True, exist_ok=True)
    manifest_path = odir / "cohort.manifest.json"
    inputs = _hash_files(
        workdir, [cdir / n for n in ("claims.csv", "patients.csv", "vocab.csv", "roles.ini") if (cdir / n).exists()]
    )
    if len(inputs) < 4:
        raise ArtifactError(f"corpus incomplete under {cdir}; run `synth generate` first")
    cfg_hash = config_hash({"seed": seed})
    if not force and is_noop(workdir, manifest_path, "cohort", seed, cfg_hash, inputs):
        return odir

    corpus = load_corpus(workdir)
    roles = corpus.roles
    episodes: dict[str, PregnancyEpisode] = {}
    subgroups: dict[str, str] = {}
    risk_labels: dict[str, RiskLabel] = {}
    never_pool: list[PatientRecord] = []
    spec = CohortSpec(seed=seed)
    from .episodes import risk_label_for

    for rec in corpus.records:
        if rec.sex != Sex.FEMALE:
            continue
        if rec.has_any_concept(roles.anchor_concepts):
            ep = infer_latest_episode(rec, roles)
            if ep is None:
                continue  # anchors present but no consistent episode
            complicated = episode_is_complicated(rec, ep, roles)
            ep = label_episode_bounds(ep, complicated)
            age = age_years(rec.birth_date, ep.t_start)
            if not (spec.age_range[0] <= age <= spec.age_range[1]):
                continue
            episodes[rec.patient_id] = ep
            subgroups[rec.patient_id] = "complicated" if complicated else "uncomplicated"
            label = risk_label_for(rec, ep, roles)
            if label is not None:
                risk_labels[rec.patient_id] = label
        else:
            never_pool.append(rec)

    pregnant_ages = [
        age_years(corpus.by_id[pid].birth_date, ep.t_start) for pid, ep in sorted(episodes.items())
    ]
    n_never = min(len(never_pool), spec.never_pregnant_target(len(episodes)))
    never, sampling = build_never_pregnant_cohort(never_pool, pregnant_ages, n_never, seed)
    for rec in never:
        subgroups[rec.patient_id] = "never_pregnant"

    id_assignment = split_by_patient(sorted(subgroups.items()), CohortSpec(seed=seed))
    risk_cohort = [(pid, f"class_{int(risk_labels[pid])}") for pid in sorted(risk_labels)]
    risk_assignment = split_by_patient(
        risk_cohort, CohortSpec(split_fractions=COMPLICATION_SPLITS, seed=seed + 1)
    )

    with open(odir / "episodes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["patient_id", "t_start", "t_end", "outcome", "provenance", "second_pass_updated",
             "subgroup", "risk_label"]
        )
        for pid in sorted(episodes):
            ep = episodes[pid]
            label = risk_labels.get(pid)
            writer.writerow(
                [pid, ep.t_start.isoformat(), ep.t_end.isoformat(), ep.outcome.value,
                 ep.start_provenance.value, int(ep.second_pass_updated), subgroups[pid],
                 "" if label is None else int(label)]
            )
    write_split_membership(id_assignment, subgroups, odir / "splits_id.csv")
    write_split_membership(
        risk_assignment, {pid: f"class_{int(l)}" for pid, l in risk_labels.items()},
        odir / "splits_risk.csv",
    )
    counts: dict[str, int] = {}
    for sub in subgroups.values():
        counts[sub] = counts.get(sub, 0) + 1
    notes = {
        "counts": json.dumps(counts, sort_keys=True),
        "age_fallbacks": str(len(sampling.fallbacks)),
        "risk_cohort_size": str(len(risk_labels)),
    }
    outputs = _hash_files(workdir, [odir / n for n in ("episodes.csv", "splits_id.csv", "splits_risk.csv")])
    Manifest("cohort", seed, cfg_hash, inputs, outputs, notes).write(manifest_path)
    return odir


def load_cohort(workdir: Path) -> CohortArtifacts:
    odir = cohort_dir(workdir)
    if not (odir / "episodes.csv").exists():
        raise ArtifactError(f"missing cohort artifacts under {odir}; run `cohort build` first")
    episodes: dict[str, PregnancyEpisode] = {}
    subgroups: dict[str, str] = {}
    risk_labels: dict[str, RiskLabel] = {}
    from .vocab import EpisodeOutcome

    with open(odir / "episodes.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            pid = row["patient_id"]
            episodes[pid] = PregnancyEpisode(
                patient_id=pid,
                t_start=date.fromisoformat(row["t_start"]),
                t_end=date.fromisoformat(row["t_end"]),
                outcome=EpisodeOutcome(row["outcome"]),
                start_provenance=StartProvenance(row["provenance"]),
                second_pass_updated=bool(int(row["second_pass_updated"])),
            )
            subgroups[pid] = row["subgroup"]
            if row["risk_label"]:
                risk_labels[pid] = RiskLabel(int(row["risk_label"]))
    id_assignment = {
        pid: split for pid, (split, sub) in cohort_mod.read_split_membership(odir / "splits_id.csv").items()
    }
    for pid, (split, sub) in cohort_mod.read_split_membership(odir / "splits_id.csv").items():
        subgroups.setdefault(pid, sub)
    risk_assignment = {
        pid: split
        for pid, (split, _) in cohort_mod.read_split_membership(odir / "splits_risk.csv").items()
    }
    return CohortArtifacts(episodes, subgroups, risk_labels, id_assignment, risk_assignment)


# ---------------------------------------------------------------------------
# stage: features extract

def features_dir(workdir: Path, dataset: str) -> Path:
    return workdir / "features" / dataset


def stage_features(workdir: Path, dataset: str, seed: int, force: bool = False) -> Path:
    if dataset not in ("id", "risk"):
        raise ValueError("dataset must be 'id' or 'risk'")
    odir = features_dir(workdir, dataset)
    odir.mkdir(parents=True, exist_ok=True)
    manifest_path = odir / "features.manifest.json"
    cdir, hdir = corpus_dir(workdir), cohort_dir(workdir)
    input_files = [cdir / "claims.csv", hdir / "episodes.csv",
                   hdir / ("splits_id.csv" if dataset == "id" else "splits_risk.csv")]
    for p in input_files:
        if not p.exists():
            raise ArtifactError(f"missing input {p}")
    inputs = _hash_files(workdir, input_files)
    cfg_hash = config_hash({"dataset": dataset, "seed": seed})
    if not force and is_noop(workdir, manifest_path, f"features-{dataset}", seed, cfg_hash, inputs):
        return odir

    corpus = load_corpus(workdir)
    arts = load_cohort(workdir)
    rec_by_id = corpus.by_id
    exclude = corpus.roles.anchor_concepts

    if dataset == "id":
        spec = FeatureSpec(domains=TEMPORAL_DOMAINS)
        assignment = arts.id_assignment
        grids: dict[str, list[tuple[date, int]]] = {}
        clamped: list[str] = []
        for pid in sorted(assignment):
            pts, was_clamped = sample_identification_grid(
                rec_by_id[pid], arts.episodes.get(pid)
            )
            grids[pid] = pts
            if was_clamped:
                clamped.append(pid)
    else:
        spec = FeatureSpec(windows_days=COMPLICATION_WINDOWS, domains=TEMPORAL_DOMAINS)
        assignment = arts.risk_assignment
        grids = {}
        clamped = []
        for pid in sorted(assignment):
            ep = arts.episodes[pid]
            cuts = sample_complication_cutoffs(
                ep, arts.risk_labels[pid], n=10, seed=episode_seed(seed, pid)
            )
            grids[pid] = [(d, int(label)) for d, label in cuts]

    train_obs = [
        (rec_by_id[pid], as_of)
        for pid in sorted(assignment)
        if assignment[pid] == "train"
        for as_of, _ in grids[pid]
    ]
    vocab = freeze_vocabulary(train_obs, spec, exclude, corpus.vocabulary)
    vocab.save(odir / "vocab.txt")

    outputs = [odir / "vocab.txt"]
    for split in ("train", "val", "test"):
        examples = []
        for pid in sorted(assignment):
            if assignment[pid] != split or not grids[pid]:
                continue
            rec = rec_by_id[pid]
            examples.extend(
                extract_many(
                    rec,
                    [d for d, _ in grids[pid]],
                    spec,
                    vocab,
                    exclude,
                    [l for _, l in grids[pid]],
                    PatientFeatureIndex(rec),
                    corpus.vocabulary,
                )
            )
        matrix = DesignMatrix(examples, vocab.total_columns, vocab.fingerprint)
        write_design_matrix(matrix, odir / f"{split}.dm")
        outputs.append(odir / f"{split}.dm")

    notes = {"clamped_patients": str(len(clamped)), "vocab_fingerprint": vocab.fingerprint}
    Manifest(f"features-{dataset}", seed, cfg_hash, inputs, _hash_files(workdir, outputs), notes).write(
        manifest_path
    )
    return odir


# ---------------------------------------------------------------------------
# stage: train

def models_dir(workdir: Path) -> Path:
    return workdir / "models"


def _load_matrices(workdir: Path, dataset: str) -> tuple[DesignMatrix, DesignMatrix, DesignMatrix, FeatureVocabulary]:
    fdir = features_dir(workdir, dataset)
    for name in ("train.dm", "val.dm", "test.dm", "vocab.txt"):
        if not (fdir / name).exists():
            raise ArtifactError(f"missing feature artifact {fdir / name}; run `features extract {dataset}`")
    vocab = FeatureVocabulary.load(fdir / "vocab.txt")
    out = []
    for split in ("train", "val", "test"):
        m = read_design_matrix(fdir / f"{split}.dm")
        if m.vocab_fingerprint != vocab.fingerprint:
            raise ArtifactError(
                f"{fdir / (split + '.dm')} fingerprint {m.vocab_fingerprint} does not match "
                f"vocabulary {vocab.fingerprint}"
            )
        out.append(m)
    return out[0], out[1], out[2], vocab


def stage_train_id(
    workdir: Path,
    config: GlmConfig | None = None,
    use_grid: bool = False,
    force: bool = False,
) -> Path:
    odir = models_dir(workdir)
    odir.mkdir(parents=True, exist_ok=True)
    fdir = features_dir(workdir, "id")
    manifest_path = odir / "train-id.manifest.json"
    inputs = _hash_files(
        workdir, [p for p in (fdir / "train.dm", fdir / "val.dm", fdir / "vocab.txt") if p.exists()]
    )
    if len(inputs) < 3:
        raise ArtifactError(f"missing feature artifacts under {fdir}; run `features extract id`")
    config = config or DEFAULT_ID_CONFIG
    cfg_hash = config_hash({"config": asdict(config), "grid": use_grid})
    if not force and is_noop(workdir, manifest_path, "train-id", None, cfg_hash, inputs):
        return odir / "id.model"

    train_m, val_m, _, vocab = _load_matrices(workdir, "id")
    grid_result = None
    if use_grid:
        from .glm import IDENTIFICATION_GRID

        grid_result, model = grid_search(
            train_m, val_m, IDENTIFICATION_GRID, SelectionMetric.VAL_ACCURACY
        )
    else:
        model = fit(train_m, config)
    val_scores = predict_proba_matrix(model, val_m)[:, 1]
    model.threshold = select_threshold(list(zip(val_scores.tolist(), val_m.labels.tolist())))
    save_model(model, odir / "id.model", grid_result)
    Manifest("train-id", None, cfg_hash, inputs, _hash_files(workdir, [odir / "id.model"])).write(
        manifest_path
    )
    return odir / "id.model"


def stage_train_risk(
    workdir: Path,
    config: GlmConfig | None = None,
    use_grid: bool = False,
    force: bool = False,
) -> Path:
    odir = models_dir(workdir)
    odir.mkdir(parents=True, exist_ok=True)
    fdir = features_dir(workdir, "risk")
    manifest_path = odir / "train-risk.manifest.json"
    inputs = _hash_files(
        workdir, [p for p in (fdir / "train.dm", fdir / "val.dm", fdir / "vocab.txt") if p.exists()]
    )
    if len(inputs) < 3:
        raise ArtifactError(f"missing feature artifacts under {fdir}; run `features extract risk`")
    config = config or DEFAULT_RISK_CONFIG
    cfg_hash = config_hash({"config": asdict(config), "grid": use_grid})
    if not force and is_noop(workdir, manifest_path, "train-risk", None, cfg_hash, inputs):
        return odir / "risk.model"

    train_m, val_m, _, vocab = _load_matrices(workdir, "risk")
    grid_result = None
    if use_grid:
        from .glm import RISK_LASSO_GRID

        grid_result, model = grid_search(
            train_m, val_m, RISK_LASSO_GRID, SelectionMetric.AUC_TIMES_ACCURACY
        )
    else:
        model = fit(train_m, config)
    save_model(model, odir / "risk.model", grid_result)

    # group models for evidence extraction, partitioned by prior history
    corpus = load_corpus(workdir)
    arts = load_cohort(workdir)
    rec_by_id = corpus.by_id
    db_codes, ht_codes = corpus.roles.db_history_codes, corpus.roles.ht_history_codes
    partitions: dict[HistoryGroup, list] = {g: [] for g in HistoryGroup}
    for ex in train_m.examples:
        ep = arts.episodes[ex.patient_id]
        group = classify_history(rec_by_id[ex.patient_id], ep.t_start, db_codes, ht_codes)
        partitions[group].append(ex)
    part_matrices = {
        g: DesignMatrix(exs, train_m.n_columns, train_m.vocab_fingerprint)
        for g, exs in partitions.items()
    }
    groups = train_group_models(part_matrices, config, model)
    outputs = [odir / "risk.model"]
    for g, gmodel in groups.models.items():
        path = odir / f"risk_group_{g.value}.model"
        save_model(gmodel, path)
        outputs.append(path)
    notes = {"group_fallbacks": ",".join(g.value for g in groups.fallbacks)}
    Manifest("train-risk", None, cfg_hash, inputs, _hash_files(workdir, outputs), notes).write(manifest_path)
    return odir / "risk.model"


def load_group_models(workdir: Path, global_model: LinearModel) -> GroupModels:
    odir = models_dir(workdir)
    models = {}
    fallbacks = []
    for g in HistoryGroup:
        path = odir / f"risk_group_{g.value}.model"
        if path.exists():
            models[g] = load_model(path)
        else:
            models[g] = global_model
            fallbacks.append(g)
    return GroupModels(models=models, fallbacks=fallbacks)


# ---------------------------------------------------------------------------
# stage: eval

def reports_dir(workdir: Path) -> Path:
    return workdir / "reports"


def run_hybrid_for_patients(
    workdir: Path,
    patient_ids: list[str],
    threshold: float | None = None,
    confirm_steps: int = 2,
) -> dict[str, tuple]:
    """Run the hybrid identifier for a set of patients; returns per-patient
    (timeline, inference, grid)."""
    corpus = load_corpus(workdir)
    model = load_model(models_dir(workdir) / "id.model")
    vocab = FeatureVocabulary.load(features_dir(workdir, "id") / "vocab.txt")
    if model.vocab_fingerprint != vocab.fingerprint:
        raise ArtifactError(
            f"id model fingerprint {model.vocab_fingerprint} does not match vocabulary "
            f"{vocab.fingerprint}"
        )
    spec = FeatureSpec()
    cfg = HapiConfig(
        threshold=threshold if threshold is not None else (model.threshold or 0.5),
        confirm_steps=confirm_steps,
    )
    start_c = corpus.roles.start_anchor_concepts
    end_c = corpus.roles.outcome_anchor_concepts
    out = {}
    rec_by_id = corpus.by_id
    for pid in sorted(patient_ids):
        rec = rec_by_id[pid]
        grid = weekly_grid(rec)
        tl, inf = run_patient(rec, model, vocab, spec, start_c, end_c, cfg, grid)
        out[pid] = (tl, inf, grid)
    return out


def stage_eval_id(workdir: Path, force: bool = False) -> reports_mod.DelayStats:
    odir = reports_dir(workdir)
    odir.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(workdir)
    arts = load_cohort(workdir)
    truth = corpus.truth_by_id
    rec_by_id = corpus.by_id
    start_c = corpus.roles.start_anchor_concepts

    test_ids = [pid for pid, split in sorted(arts.id_assignment.items()) if split == "test"]
    results = run_hybrid_for_patients(workdir, test_ids)

    hybrid_starts: dict[str, date | None] = {}
    anchor_starts: dict[str, date | None] = {}
    true_starts: dict[str, date] = {}
    never_flagged: dict[str, bool] = {}
    never_series: dict[str, tuple] = {}
    for pid in test_ids:
        tl, inf, grid = results[pid]
        tr = truth[pid]
        if tr.pregnant:
            true_starts[pid] = tr.t_start
            hybrid_starts[pid] = grid[inf.start_week] if inf.start_week is not None else None
            anchor_starts[pid] = next(
                (e.date for e in rec_by_id[pid].events if e.concept_id in start_c), None
            )
        else:
            never_flagged[pid] = inf.start_week is not None
            never_series[pid] = (tl.smoothed, tl.anchor_hits)

    stats, rows = reports_mod.delay_report(hybrid_starts, anchor_starts, true_starts, never_flagged)
    reports_mod.write_delay_histogram(rows, odir / "delay_histogram.csv")
    reports_mod.write_delay_page(rows, stats, odir / "delay_histogram.html")
    from .hybrid import write_inferences

    write_inferences([results[pid][1] for pid in test_ids], odir / "inferences.csv")

    # false-positive rate across thresholds, reusing the smoothed series
    with open(odir / "fpr_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpr", "n"])
        for tau in FPR_THRESHOLDS:
            flagged = 0
            for pid, (smoothed, hits) in sorted(never_series.items()):
                calls = [1 if q >= tau else 0 for q in smoothed]
                inf = infer_episode(
                    list(smoothed), calls, list(hits),
                    HapiConfig(threshold=tau, confirm_steps=2), pid,
                )
                if inf.start_week is not None:
                    flagged += 1
            n = len(never_series)
            writer.writerow([repr(tau), repr(flagged / n if n else 0.0), n])

    with open(odir / "delay_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, val in [
            ("n_evaluated", stats.n_evaluated),
            ("n_missed_hybrid", stats.n_missed_hybrid),
            ("n_missed_anchor", stats.n_missed_anchor),
            ("fraction_earlier", stats.fraction_earlier),
            ("mean_delay_hybrid_earlier", stats.mean_delay_hybrid_earlier),
            ("mean_delay_anchor_earlier", stats.mean_delay_anchor_earlier),
            ("mean_delay_hybrid_overall", stats.mean_delay_hybrid_overall),
            ("mean_delay_anchor_overall", stats.mean_delay_anchor_overall),
            ("never_pregnant_fpr", stats.false_positive_rate),
        ]:
            writer.writerow([key, "" if val is None else repr(float(val))])
    return stats


def _risk_spec() -> FeatureSpec:
    return FeatureSpec(windows_days=COMPLICATION_WINDOWS)


def stage_eval_risk(workdir: Path) -> tuple[reports_mod.TrendSeries, reports_mod.EarliestAlertBuckets]:
    odir = reports_dir(workdir)
    odir.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(workdir)
    arts = load_cohort(workdir)
    model = load_model(models_dir(workdir) / "risk.model")
    vocab = FeatureVocabulary.load(features_dir(workdir, "risk") / "vocab.txt")
    if model.vocab_fingerprint != vocab.fingerprint:
        raise ArtifactError("risk model fingerprint does not match the risk vocabulary")
    spec = _risk_spec()
    exclude = corpus.roles.anchor_concepts
    rec_by_id = corpus.by_id

    test_ids = [pid for pid, split in sorted(arts.risk_assignment.items()) if split == "test"]

    # aggregate test metrics on the sampled cutoffs
    test_m = read_design_matrix(features_dir(workdir, "risk") / "test.dm")
    probs = predict_proba_matrix(model, test_m)
    preds = predict_class(model, probs)
    labels = test_m.labels
    acc, lo, hi = accuracy_with_ci(int((preds == labels).sum()), len(labels))
    overall_auc = macro_ovr_auc(probs, labels, model.classes)
    m_pos = int((labels != 0).sum())
    overall_ci = auc_ci(overall_auc, m_pos, len(labels) - m_pos)

    # per-cutoff prediction and evidence exports over the test split
    from .risk import RiskPrediction, predict_with_evidence
    from .risk import write_evidence, write_risk_predictions

    groups = load_group_models(workdir, model)
    db_codes, ht_codes = corpus.roles.db_history_codes, corpus.roles.ht_history_codes
    risk_rows: list[RiskPrediction] = []
    evidence_rows = []
    for ex in test_m.examples:
        ep = arts.episodes[ex.patient_id]
        prediction, evidence = predict_with_evidence(
            rec_by_id[ex.patient_id], ex, model, groups, vocab, corpus.roles,
            db_codes, ht_codes, ep.t_start,
        )
        risk_rows.append(prediction)
        evidence_rows.append((ex.patient_id, ex.as_of, evidence))
    write_risk_predictions(risk_rows, odir / "risk_predictions.csv")
    write_evidence(evidence_rows, odir / "risk_evidence.csv")

    # per-period trend: trim each patient's data to the period date
    per_period: dict[str, list[tuple[int, np.ndarray, int]]] = {p: [] for p in reports_mod.PERIODS}
    for pid in test_ids:
        ep = arts.episodes[pid]
        rec = rec_by_id[pid]
        label = int(arts.risk_labels[pid])
        dates = [reports_mod.period_as_of(ep.t_start, ep.t_end, p) for p in reports_mod.PERIODS]
        exs = extract_many(rec, dates, spec, vocab, exclude, index=PatientFeatureIndex(rec))
        mat = DesignMatrix(list(exs), vocab.total_columns, vocab.fingerprint)
        pp = predict_proba_matrix(model, mat)
        for i, period in enumerate(reports_mod.PERIODS):
            per_period[period].append((int(predict_class(model, pp[i : i + 1])[0]), pp[i], label))
    trend = reports_mod.trend_series(per_period)
    reports_mod.write_trend(trend, odir / "trend.csv")
    reports_mod.write_trend_page(trend, odir / "trend.html")

    # earliest alerts over a weekly risk timeline for complicated test patients
    first_alert: dict[str, date | None] = {}
    episodes_map: dict[str, tuple[date, date]] = {}
    for pid in test_ids:
        if arts.risk_labels[pid] == RiskLabel.NONE:
            continue
        ep = arts.episodes[pid]
        rec = rec_by_id[pid]
        episodes_map[pid] = (ep.t_start, ep.t_end)
        dates = []
        d = ep.t_start - timedelta(days=90)
        while d <= ep.t_end:
            dates.append(d)
            d += timedelta(days=7)
        exs = extract_many(rec, dates, spec, vocab, exclude, index=PatientFeatureIndex(rec))
        mat = DesignMatrix(list(exs), vocab.total_columns, vocab.fingerprint)
        pp = predict_proba_matrix(model, mat)
        alert = None
        for i, d in enumerate(dates):
            if int(predict_class(model, pp[i : i + 1])[0]) != int(RiskLabel.NONE):
                alert = d
                break
        first_alert[pid] = alert
    buckets = reports_mod.earliest_alerts(first_alert, episodes_map)
    reports_mod.write_buckets(buckets, odir / "earliest_alerts.csv")
    reports_mod.write_buckets_page(buckets, odir / "earliest_alerts.html")

    with open(odir / "risk_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerow(["test_accuracy", repr(acc)])
        writer.writerow(["test_accuracy_ci", f"{lo!r};{hi!r}"])
        writer.writerow(["test_auc", repr(overall_auc)])
        writer.writerow(["test_auc_ci", f"{overall_ci.ci_low!r};{overall_ci.ci_high!r}"])
        writer.writerow(["auc_slope", repr(trend.auc_slope)])
        writer.writerow(["accuracy_slope", repr(trend.accuracy_slope)])
    return trend, buckets


def stage_eval_fairness(workdir: Path) -> reports_mod.SubgroupReport:
    odir = reports_dir(workdir)
    odir.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(workdir)
    arts = load_cohort(workdir)
    model = load_model(models_dir(workdir) / "risk.model")
    vocab = FeatureVocabulary.load(features_dir(workdir, "risk") / "vocab.txt")
    spec = _risk_spec()
    exclude = corpus.roles.anchor_concepts
    rec_by_id = corpus.by_id

    test_ids = [pid for pid, split in sorted(arts.risk_assignment.items()) if split == "test"]
    predictions: list[tuple[str, int, np.ndarray]] = []
    truths: dict[str, int] = {}
    races: dict[str, Race] = {}
    row_id = 0
    for pid in test_ids:
        ep = arts.episodes[pid]
        rec = rec_by_id[pid]
        dates = [reports_mod.period_as_of(ep.t_start, ep.t_end, p) for p in reports_mod.PERIODS]
        exs = extract_many(rec, dates, spec, vocab, exclude, index=PatientFeatureIndex(rec))
        mat = DesignMatrix(list(exs), vocab.total_columns, vocab.fingerprint)
        pp = predict_proba_matrix(model, mat)
        for i in range(len(dates)):
            key = f"{pid}#{row_id}"
            row_id += 1
            predictions.append((key, int(predict_class(model, pp[i : i + 1])[0]), pp[i]))
            truths[key] = int(arts.risk_labels[pid])
            races[key] = rec.race
    report = reports_mod.fairness_audit(predictions, truths, races)
    reports_mod.write_subgroup_report(report, odir / "fairness.csv")
    return report
