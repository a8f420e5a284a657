"""Seeded synthetic-claims generator with ground truth.

Generates a toy claims corpus whose structure the pipeline is sensitive to:
anchor codes at (possibly delayed) gestation starts and at outcomes,
pregnancy-correlated utilization inside gestation, prior-history condition
codes, complication target codes, and trimester-indexed marker codes whose
intensity drives a multinomial-logit complication label. Everything is
deterministic under the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .records import ClaimEvent, PatientRecord, Race, Sex
from .vocab import ConceptCode, Domain, RiskLabel, Vocabulary

# synthetic concept layout
BACKGROUND_CONDITIONS = tuple(range(1000, 1100))
BACKGROUND_DRUGS = tuple(range(1100, 1130))
BACKGROUND_PROCEDURES = tuple(range(1200, 1230))
BACKGROUND_LABS = tuple(range(1300, 1310))
BACKGROUND_SPECIALTY = tuple(range(1400, 1405))
BACKGROUND_POOL = (
    BACKGROUND_CONDITIONS
    + BACKGROUND_DRUGS
    + BACKGROUND_PROCEDURES
    + BACKGROUND_LABS
    + BACKGROUND_SPECIALTY
)

OB_VISIT = 2001
URINALYSIS = 2002
HCG_LAB = 2003
PRENATAL_VITAMIN = 2004
CORRELATED = (OB_VISIT, URINALYSIS, HCG_LAB, PRENATAL_VITAMIN)

START_ANCHORS = (3001, 3002)
OUTCOME_ANCHORS = (4001, 4002)
GDB_TARGETS = tuple(range(5001, 5006))
GHT_TARGETS = tuple(range(5101, 5106))
NICU_TARGETS = tuple(range(5201, 5204))
HPPE_TARGETS = tuple(range(5301, 5304))
PRETERM_TARGETS = tuple(range(5401, 5404))
DB_HISTORY = 6001
HT_HISTORY = 6002
MARKERS = (7001, 7002, 7003)  # one per trimester


def synthetic_vocabulary() -> Vocabulary:
    concepts = []

    def add(ids, domain, prefix):
        for i, cid in enumerate(ids):
            concepts.append(ConceptCode(cid, domain, f"{prefix} {i + 1}"))

    add(BACKGROUND_CONDITIONS, Domain.CONDITION, "background condition")
    add(BACKGROUND_DRUGS, Domain.DRUG, "background drug")
    add(BACKGROUND_PROCEDURES, Domain.PROCEDURE, "background procedure")
    add(BACKGROUND_LABS, Domain.LAB, "background lab")
    add(BACKGROUND_SPECIALTY, Domain.SPECIALTY, "background specialty visit")
    concepts.append(ConceptCode(OB_VISIT, Domain.SPECIALTY, "obstetrics/gynecology visit"))
    concepts.append(ConceptCode(URINALYSIS, Domain.LAB, "urinalysis by dip stick"))
    concepts.append(ConceptCode(HCG_LAB, Domain.LAB, "hCG pregnancy test"))
    concepts.append(ConceptCode(PRENATAL_VITAMIN, Domain.DRUG, "prenatal multivitamin"))
    add(START_ANCHORS, Domain.CONDITION, "pregnancy start indicator")
    add(OUTCOME_ANCHORS, Domain.PROCEDURE, "delivery outcome")
    add(GDB_TARGETS, Domain.CONDITION, "gestational diabetes target")
    add(GHT_TARGETS, Domain.CONDITION, "gestational hypertension target")
    add(NICU_TARGETS, Domain.CONDITION, "neonatal intensive care target")
    add(HPPE_TARGETS, Domain.CONDITION, "hypertension/pre-eclampsia target")
    add(PRETERM_TARGETS, Domain.CONDITION, "preterm birth target")
    concepts.append(ConceptCode(DB_HISTORY, Domain.CONDITION, "type 2 diabetes mellitus"))
    concepts.append(ConceptCode(HT_HISTORY, Domain.CONDITION, "essential hypertension"))
    add(MARKERS, Domain.CONDITION, "gestational risk marker")
    return Vocabulary(concepts)


DEFAULT_ROLE_CONFIG = """\
[settings]
severity_order = NICU, HPPE, preterm, gestational_DB, gestational_HT, live_birth

[history_codes]
db = 6001
ht = 6002

[pregnancy_start]
role = pregnancy_start_anchor
concept_ids = 3001 3002

[live_birth_delivery]
role = pregnancy_outcome_anchor
outcome = live_birth
g_min_days = 161
g_max_days = 300
concept_ids = 4001 4002

[nicu_admission]
role = complication_target
outcome = NICU
second_pass = true
concept_ids = 5201 5202 5203

[hypertension_preeclampsia]
role = complication_target
outcome = HPPE
second_pass = true
concept_ids = 5301 5302 5303

[preterm_birth]
role = complication_target
outcome = preterm
second_pass = true
concept_ids = 5401 5402 5403

[gestational_hypertension]
role = complication_target
outcome = gestational_HT
concept_ids = 5101 5102 5103 5104 5105

[gestational_diabetes]
role = complication_target
outcome = gestational_DB
concept_ids = 5001 5002 5003 5004 5005
"""


@dataclass(frozen=True)
class RiskCoefficients:
    """Multinomial-logit slopes for the planted complication signal.

    Class scores are s_none = 0, s_ght = a_ght + db*db_to_ght + ht*ht_to_ght
    + z*marker_to_ght, and likewise for GDB, with z the patient's latent
    marker propensity (uniform on [0, 1]). Intercepts are calibrated so the
    marginal class mix matches the configured subgroup counts.
    """

    db_to_ght: float = 0.8
    ht_to_ght: float = 3.2
    db_to_gdb: float = 3.5
    ht_to_gdb: float = 0.5
    marker_to_ght: float = 6.5
    marker_to_gdb: float = 6.5


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int
    n_uncomplicated: int = 226
    n_complicated: int = 624
    n_never: int = 150
    gestation_mean_days: float = 280.0
    gestation_sd_days: float = 14.0
    gestation_range_days: tuple[int, int] = (161, 300)
    anchor_delay_mean_weeks: float = 6.0
    anchor_delay_fraction: float = 0.3
    # weekly emission probability (inside gestation, outside gestation)
    correlated_rates: tuple[tuple[int, float, float], ...] = (
        (OB_VISIT, 0.55, 0.02),
        (URINALYSIS, 0.40, 0.04),
        (HCG_LAB, 0.35, 0.01),
        (PRENATAL_VITAMIN, 0.30, 0.01),
    )
    background_weekly_rate: float = 0.6
    p_db_history: float = 0.12
    p_ht_history: float = 0.15
    marker_weekly_scale: tuple[float, float, float] = (0.10, 0.22, 0.35)
    second_pass_extra_fraction: float = 0.10
    risk_coefficients: RiskCoefficients = field(default_factory=RiskCoefficients)
    age_mean: float = 32.3
    age_sd: float = 6.1
    age_range: tuple[int, int] = (18, 48)
    race_probs: tuple[tuple[str, float], ...] = (
        ("white", 0.391),
        ("black", 0.057),
        ("other", 0.034),
        ("unreported", 0.518),
    )
    start_window: tuple[date, date] = (date(2018, 1, 1), date(2020, 6, 30))

    def __post_init__(self):
        for _, p_in, p_out in self.correlated_rates:
            if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
                raise ValueError("emission probabilities must lie in [0, 1]")
        if self.background_weekly_rate < 0:
            raise ValueError("background rate must be nonnegative")
        if max(p for _, p_in, _ in self.correlated_rates for p in (p_in,)) == 0 and (
            self.background_weekly_rate == 0
        ):
            raise ValueError("infeasible config: no event source enabled")

    @property
    def total(self) -> int:
        return self.n_uncomplicated + self.n_complicated + self.n_never


@dataclass(frozen=True)
class GroundTruth:
    patient_id: str
    pregnant: bool
    t_start: date | None
    t_end: date | None
    outcome: RiskLabel | None  # None for never-pregnant
    db_history: bool
    ht_history: bool
    anchor_delay_weeks: int
    marker_propensity: float  # latent z; not persisted to the truth file


def _class_scores(cfg: RiskCoefficients, a_ght: float, a_gdb: float, db: float, ht: float, z):
    s_ght = a_ght + cfg.db_to_ght * db + cfg.ht_to_ght * ht + cfg.marker_to_ght * z
    s_gdb = a_gdb + cfg.db_to_gdb * db + cfg.ht_to_gdb * ht + cfg.marker_to_gdb * z
    return s_ght, s_gdb


def _marginal_mix(cfg: GeneratorConfig, a_ght: float, a_gdb: float) -> tuple[float, float]:
    """Expected (GHT, GDB) shares among pregnant patients, integrating the
    latent z on a fine grid over the discrete history cells."""
    z = (np.arange(400) + 0.5) / 400.0
    totals = np.zeros(2)
    for db, p_db in ((0, 1 - cfg.p_db_history), (1, cfg.p_db_history)):
        for ht, p_ht in ((0, 1 - cfg.p_ht_history), (1, cfg.p_ht_history)):
            s_ght, s_gdb = _class_scores(cfg.risk_coefficients, a_ght, a_gdb, db, ht, z)
            denom = 1.0 + np.exp(s_ght) + np.exp(s_gdb)
            totals[0] += p_db * p_ht * float(np.mean(np.exp(s_ght) / denom))
            totals[1] += p_db * p_ht * float(np.mean(np.exp(s_gdb) / denom))
    return float(totals[0]), float(totals[1])


def calibrate_intercepts(cfg: GeneratorConfig) -> tuple[float, float]:
    """Solve the logit intercepts so the expected complication mix matches
    the configured subgroup counts (GHT:GDB in the 16.9:9.4 ratio)."""
    pregnant = cfg.n_uncomplicated + cfg.n_complicated
    p_comp = cfg.n_complicated / pregnant
    target_ght = p_comp * (16.9 / (16.9 + 9.4))
    target_gdb = p_comp * (9.4 / (16.9 + 9.4))
    a_ght = a_gdb = 0.0
    for _ in range(300):
        m_ght, m_gdb = _marginal_mix(cfg, a_ght, a_gdb)
        step_g = np.log(target_ght / m_ght)
        step_d = np.log(target_gdb / m_gdb)
        a_ght += step_g
        a_gdb += step_d
        if abs(step_g) < 1e-13 and abs(step_d) < 1e-13:
            break
    return a_ght, a_gdb


def true_risk_probabilities(
    cfg: GeneratorConfig,
    intercepts: tuple[float, float],
    db: bool,
    ht: bool,
    z: float,
) -> tuple[float, float, float]:
    """(none, GHT, GDB) probabilities under the generator's own model."""
    s_ght, s_gdb = _class_scores(
        cfg.risk_coefficients, intercepts[0], intercepts[1], float(db), float(ht), z
    )
    denom = 1.0 + np.exp(s_ght) + np.exp(s_gdb)
    return float(1.0 / denom), float(np.exp(s_ght) / denom), float(np.exp(s_gdb) / denom)


def _truncated_normal(rng: np.random.Generator, mean, sd, lo, hi) -> float:
    while True:
        v = rng.normal(mean, sd)
        if lo <= v <= hi:
            return float(v)


def _weekly_hits(rng: np.random.Generator, n_weeks: int, p: float) -> np.ndarray:
    if p <= 0.0:
        return np.zeros(n_weeks, dtype=bool)
    return rng.random(n_weeks) < p


def generate(config: GeneratorConfig) -> tuple[list[PatientRecord], list[GroundTruth]]:
    """Generate the corpus and its ground truth, deterministic under seed."""
    rng = np.random.default_rng(config.seed)
    intercepts = calibrate_intercepts(config)
    pregnant_total = config.n_uncomplicated + config.n_complicated
    p_pregnant = pregnant_total / config.total

    race_names = [r for r, _ in config.race_probs]
    race_p = np.asarray([p for _, p in config.race_probs])
    race_p = race_p / race_p.sum()

    start_lo = config.start_window[0].toordinal()
    start_hi = config.start_window[1].toordinal()

    records: list[PatientRecord] = []
    truths: list[GroundTruth] = []
    for i in range(config.total):
        pid = f"P{i:05d}"
        pregnant = bool(rng.random() < p_pregnant)
        db = bool(rng.random() < config.p_db_history)
        ht = bool(rng.random() < config.p_ht_history)
        z = float(rng.random())
        race = Race(race_names[int(rng.choice(len(race_names), p=race_p))])
        age = _truncated_normal(
            rng, config.age_mean, config.age_sd, config.age_range[0], config.age_range[1] - 1
        )

        events: list[tuple[int, int]] = []  # (ordinal_day, concept)

        if pregnant:
            t_start = date.fromordinal(int(rng.integers(start_lo, start_hi + 1)))
            gest = int(
                round(
                    _truncated_normal(
                        rng,
                        config.gestation_mean_days,
                        config.gestation_sd_days,
                        config.gestation_range_days[0],
                        config.gestation_range_days[1],
                    )
                )
            )
            t_end = t_start + timedelta(days=gest)

            p_none, p_ght, p_gdb = true_risk_probabilities(config, intercepts, db, ht, z)
            u = rng.random()
            if u < p_none:
                outcome = RiskLabel.NONE
            elif u < p_none + p_ght:
                outcome = RiskLabel.GHT
            else:
                outcome = RiskLabel.GDB

            delay_weeks = 0
            if outcome != RiskLabel.NONE and rng.random() < config.anchor_delay_fraction:
                delay_weeks = int(rng.geometric(1.0 / config.anchor_delay_mean_weeks))
                delay_weeks = min(delay_weeks, max(1, (gest - 14) // 7))

            hist_start = t_start - timedelta(days=int(rng.integers(540, 1080)))
            hist_end = t_end + timedelta(days=140 + int(rng.integers(0, 60)))
            birth = t_start - timedelta(days=int(round(age * 365.25)))

            # anchors
            events.append(((t_start + timedelta(days=7 * delay_weeks)).toordinal(), START_ANCHORS[0]))
            events.append((t_end.toordinal(), OUTCOME_ANCHORS[0]))

            # complication targets inside the episode
            if outcome == RiskLabel.GHT:
                lo = t_start + timedelta(days=100)
                for _ in range(2):
                    d = int(rng.integers(lo.toordinal(), t_end.toordinal() + 1))
                    events.append((d, int(rng.choice(GHT_TARGETS))))
            elif outcome == RiskLabel.GDB:
                lo = t_start + timedelta(days=130)
                for _ in range(2):
                    d = int(rng.integers(lo.toordinal(), t_end.toordinal() + 1))
                    events.append((d, int(rng.choice(GDB_TARGETS))))
            if outcome != RiskLabel.NONE and rng.random() < config.second_pass_extra_fraction:
                pool = NICU_TARGETS + HPPE_TARGETS + PRETERM_TARGETS
                d = int(rng.integers((t_end - timedelta(days=21)).toordinal(), t_end.toordinal() + 1))
                events.append((d, int(rng.choice(pool))))

            # trimester markers scale with the latent propensity
            for tri, scale in enumerate(config.marker_weekly_scale):
                tri_start = t_start + timedelta(days=(0, 98, 196)[tri])
                tri_end = min(t_end, t_start + timedelta(days=(97, 195, 10_000)[tri]))
                if tri_start > t_end:
                    continue
                n_weeks = max(((tri_end - tri_start).days) // 7 + 1, 0)
                hits = _weekly_hits(rng, n_weeks, z * scale)
                for w in np.nonzero(hits)[0]:
                    d = tri_start + timedelta(days=int(w) * 7 + int(rng.integers(0, 7)))
                    if d <= t_end:
                        events.append((d.toordinal(), MARKERS[tri]))

            # pregnancy-correlated utilization inside vs outside gestation
            n_weeks = (hist_end - hist_start).days // 7 + 1
            week_starts = np.asarray([hist_start.toordinal() + 7 * w for w in range(n_weeks)])
            inside = (week_starts >= t_start.toordinal()) & (week_starts <= t_end.toordinal())
            for concept, p_in, p_out in config.correlated_rates:
                probs = np.where(inside, p_in, p_out)
                hits = rng.random(n_weeks) < probs
                for w in np.nonzero(hits)[0]:
                    events.append((int(week_starts[w]) + int(rng.integers(0, 7)), concept))
        else:
            t_start = None
            t_end = None
            outcome = None
            delay_weeks = 0
            mid = date.fromordinal(int(rng.integers(start_lo, start_hi + 1)))
            half = int(rng.integers(400, 900))
            hist_start = mid - timedelta(days=half)
            hist_end = mid + timedelta(days=half)
            birth = mid - timedelta(days=int(round(age * 365.25)))

            n_weeks = (hist_end - hist_start).days // 7 + 1
            week_starts = np.asarray([hist_start.toordinal() + 7 * w for w in range(n_weeks)])
            for concept, _p_in, p_out in config.correlated_rates:
                hits = _weekly_hits(rng, n_weeks, p_out)
                for w in np.nonzero(hits)[0]:
                    events.append((int(week_starts[w]) + int(rng.integers(0, 7)), concept))

        # prior-history condition codes appear well before any episode
        flag_anchor = t_start if pregnant else hist_start + timedelta(days=200)
        if db:
            for _ in range(int(rng.integers(2, 5))):
                d = int(rng.integers(hist_start.toordinal(), (flag_anchor - timedelta(days=40)).toordinal()))
                events.append((d, DB_HISTORY))
        if ht:
            for _ in range(int(rng.integers(2, 5))):
                d = int(rng.integers(hist_start.toordinal(), (flag_anchor - timedelta(days=40)).toordinal()))
                events.append((d, HT_HISTORY))

        # background noise across the whole history
        n_weeks = (hist_end - hist_start).days // 7 + 1
        counts = rng.poisson(config.background_weekly_rate, size=n_weeks)
        for w in np.nonzero(counts)[0]:
            for _ in range(int(counts[w])):
                d = hist_start.toordinal() + 7 * int(w) + int(rng.integers(0, 7))
                events.append((d, int(rng.choice(BACKGROUND_POOL))))

        events.sort()
        claim_events = tuple(
            ClaimEvent(pid, concept, date.fromordinal(day)) for day, concept in events
        )
        records.append(
            PatientRecord(
                patient_id=pid,
                birth_date=birth,
                sex=Sex.FEMALE,
                race=race,
                events=claim_events,
            )
        )
        truths.append(
            GroundTruth(
                patient_id=pid,
                pregnant=pregnant,
                t_start=t_start,
                t_end=t_end,
                outcome=outcome,
                db_history=db,
                ht_history=ht,
                anchor_delay_weeks=delay_weeks,
                marker_propensity=z,
            )
        )
    return records, truths


def oracle_labels(
    truths: list[GroundTruth], grids: dict[str, list[date]]
) -> list[tuple[str, date, int, RiskLabel | None]]:
    """Ground-truth (pregnant, risk) labels on arbitrary as-of grids.

    The pregnancy interval is closed on both ends, matching the feature
    factory's labeling convention.
    """
    by_id = {t.patient_id: t for t in truths}
    out = []
    for pid in sorted(grids):
        truth = by_id[pid]
        for as_of in grids[pid]:
            if truth.pregnant and truth.t_start <= as_of <= truth.t_end:
                pregnant = 1
            else:
                pregnant = 0
            out.append((pid, as_of, pregnant, truth.outcome))
    return out


def write_ground_truth(truths: list[GroundTruth], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["patient_id", "t_start", "t_end", "outcome", "db_history", "ht_history", "anchor_delay_weeks"]
        )
        for t in truths:
            writer.writerow(
                [
                    t.patient_id,
                    t.t_start.isoformat() if t.t_start else "",
                    t.t_end.isoformat() if t.t_end else "",
                    "never" if not t.pregnant else t.outcome.name.lower() if t.outcome != RiskLabel.NONE else "none",
                    int(t.db_history),
                    int(t.ht_history),
                    t.anchor_delay_weeks,
                ]
            )


def read_ground_truth(path: str | Path) -> list[GroundTruth]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pregnant = row["outcome"] != "never"
            outcome = None
            if pregnant:
                outcome = {"none": RiskLabel.NONE, "ght": RiskLabel.GHT, "gdb": RiskLabel.GDB}[
                    row["outcome"]
                ]
            out.append(
                GroundTruth(
                    patient_id=row["patient_id"],
                    pregnant=pregnant,
                    t_start=date.fromisoformat(row["t_start"]) if row["t_start"] else None,
                    t_end=date.fromisoformat(row["t_end"]) if row["t_end"] else None,
                    outcome=outcome,
                    db_history=bool(int(row["db_history"])),
                    ht_history=bool(int(row["ht_history"])),
                    anchor_delay_weeks=int(row["anchor_delay_weeks"]),
                    marker_propensity=float("nan"),
                )
            )
    return out


def write_role_config(path: str | Path) -> None:
    Path(path).write_text(DEFAULT_ROLE_CONFIG)
